#include "draaseq/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace draaseq {

ComputeStats& stats() {
    thread_local ComputeStats s;
    return s;
}

Tensor::Tensor(std::vector<std::size_t> s, double fill) : shape(std::move(s)) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    data.assign(shape.empty() ? 0 : n, fill);
}

void Tensor::ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
}

void Tensor::zero_grad() {
    std::fill(grad.begin(), grad.end(), 0.0);
}

bool Tensor::all_finite() const {
    for (double v : data)
        if (!std::isfinite(v)) return false;
    return true;
}

std::string Tensor::shape_str() const {
    std::string out = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(shape[i]);
    }
    return out + "]";
}

TensorPtr make_tensor(std::size_t rows, std::size_t cols, double fill) {
    return std::make_shared<Tensor>(rows, cols, fill);
}

TensorPtr make_row(std::vector<double> values) {
    auto t = std::make_shared<Tensor>();
    t->shape = {1, values.size()};
    t->data = std::move(values);
    return t;
}

void Tape::backward(const TensorPtr& loss) {
    if (loss->size() != 1) throw std::runtime_error("backward needs a scalar loss");
    loss->ensure_grad();
    loss->grad[0] = 1.0;
    for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
}

namespace {

void require_matrix(const TensorPtr& t, const char* what) {
    if (t->shape.size() != 2) throw std::runtime_error(std::string(what) + ": expected a 2-D tensor, got " + t->shape_str());
}

// C[m x n] = A[m x k] * B[k x n]; counted on the forward pass only.
void matmul_kernel(const double* a, const double* b, double* c,
                   std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        double* crow = c + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = a[i * k + p];
            const double* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

}  // namespace

namespace ops {

TensorPtr matmul(Tape* tape, const TensorPtr& a, const TensorPtr& b) {
    require_matrix(a, "matmul");
    require_matrix(b, "matmul");
    const std::size_t m = a->shape[0], k = a->shape[1], n = b->shape[1];
    if (b->shape[0] != k)
        throw std::runtime_error("matmul shape mismatch: " + a->shape_str() + " x " + b->shape_str());
    auto out = make_tensor(m, n, 0.0);
    matmul_kernel(a->data.data(), b->data.data(), out->data.data(), m, k, n);
    stats().mul_add_count += static_cast<std::uint64_t>(m) * k * n;
    stats().bytes_touched += static_cast<std::uint64_t>(m * k + k * n + m * n) * sizeof(double);
    if (tape) {
        out->ensure_grad();
        tape->record([a, b, out, m, k, n] {
            a->ensure_grad();
            b->ensure_grad();
            const double* g = out->grad.data();
            // dA += dC * B^T
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    double acc = 0.0;
                    const double* grow = g + i * n;
                    const double* brow = b->data.data() + p * n;
                    for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
                    a->grad[i * k + p] += acc;
                }
            // dB += A^T * dC
            for (std::size_t i = 0; i < m; ++i) {
                const double* grow = g + i * n;
                for (std::size_t p = 0; p < k; ++p) {
                    const double av = a->data[i * k + p];
                    double* brow = b->grad.data() + p * n;
                    for (std::size_t j = 0; j < n; ++j) brow[j] += av * grow[j];
                }
            }
        });
    }
    return out;
}

TensorPtr transpose(Tape* tape, const TensorPtr& x) {
    require_matrix(x, "transpose");
    const std::size_t m = x->shape[0], n = x->shape[1];
    auto out = make_tensor(n, m);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out->data[j * m + i] = x->data[i * n + j];
    if (tape) {
        out->ensure_grad();
        tape->record([x, out, m, n] {
            x->ensure_grad();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) x->grad[i * n + j] += out->grad[j * m + i];
        });
    }
    return out;
}

TensorPtr add(Tape* tape, const TensorPtr& a, const TensorPtr& b) {
    if (a->shape != b->shape)
        throw std::runtime_error("add shape mismatch: " + a->shape_str() + " vs " + b->shape_str());
    auto out = std::make_shared<Tensor>(a->shape);
    for (std::size_t i = 0; i < a->size(); ++i) out->data[i] = a->data[i] + b->data[i];
    if (tape) {
        out->ensure_grad();
        tape->record([a, b, out] {
            a->ensure_grad();
            b->ensure_grad();
            for (std::size_t i = 0; i < out->size(); ++i) {
                a->grad[i] += out->grad[i];
                b->grad[i] += out->grad[i];
            }
        });
    }
    return out;
}

TensorPtr mul(Tape* tape, const TensorPtr& a, const TensorPtr& b) {
    if (a->shape != b->shape)
        throw std::runtime_error("mul shape mismatch: " + a->shape_str() + " vs " + b->shape_str());
    auto out = std::make_shared<Tensor>(a->shape);
    for (std::size_t i = 0; i < a->size(); ++i) out->data[i] = a->data[i] * b->data[i];
    if (tape) {
        out->ensure_grad();
        tape->record([a, b, out] {
            a->ensure_grad();
            b->ensure_grad();
            for (std::size_t i = 0; i < out->size(); ++i) {
                a->grad[i] += out->grad[i] * b->data[i];
                b->grad[i] += out->grad[i] * a->data[i];
            }
        });
    }
    return out;
}

TensorPtr sigmoid(Tape* tape, const TensorPtr& x) {
    auto out = std::make_shared<Tensor>(x->shape);
    for (std::size_t i = 0; i < x->size(); ++i) out->data[i] = 1.0 / (1.0 + std::exp(-x->data[i]));
    if (tape) {
        out->ensure_grad();
        tape->record([x, out] {
            x->ensure_grad();
            for (std::size_t i = 0; i < out->size(); ++i) {
                const double y = out->data[i];
                x->grad[i] += out->grad[i] * y * (1.0 - y);
            }
        });
    }
    return out;
}

TensorPtr tanh(Tape* tape, const TensorPtr& x) {
    auto out = std::make_shared<Tensor>(x->shape);
    for (std::size_t i = 0; i < x->size(); ++i) out->data[i] = std::tanh(x->data[i]);
    if (tape) {
        out->ensure_grad();
        tape->record([x, out] {
            x->ensure_grad();
            for (std::size_t i = 0; i < out->size(); ++i) {
                const double y = out->data[i];
                x->grad[i] += out->grad[i] * (1.0 - y * y);
            }
        });
    }
    return out;
}

TensorPtr slice_cols(Tape* tape, const TensorPtr& x, std::size_t from, std::size_t to) {
    require_matrix(x, "slice_cols");
    if (x->shape[0] != 1 || to > x->shape[1] || from >= to)
        throw std::runtime_error("slice_cols: bad range on " + x->shape_str());
    auto out = make_tensor(1, to - from);
    std::copy(x->data.begin() + from, x->data.begin() + to, out->data.begin());
    if (tape) {
        out->ensure_grad();
        tape->record([x, out, from] {
            x->ensure_grad();
            for (std::size_t i = 0; i < out->size(); ++i) x->grad[from + i] += out->grad[i];
        });
    }
    return out;
}

TensorPtr concat_cols(Tape* tape, const TensorPtr& a, const TensorPtr& b) {
    require_matrix(a, "concat_cols");
    require_matrix(b, "concat_cols");
    if (a->shape[0] != 1 || b->shape[0] != 1)
        throw std::runtime_error("concat_cols expects row vectors");
    auto out = make_tensor(1, a->shape[1] + b->shape[1]);
    std::copy(a->data.begin(), a->data.end(), out->data.begin());
    std::copy(b->data.begin(), b->data.end(), out->data.begin() + a->shape[1]);
    if (tape) {
        out->ensure_grad();
        tape->record([a, b, out] {
            a->ensure_grad();
            b->ensure_grad();
            const std::size_t na = a->size();
            for (std::size_t i = 0; i < na; ++i) a->grad[i] += out->grad[i];
            for (std::size_t i = 0; i < b->size(); ++i) b->grad[i] += out->grad[na + i];
        });
    }
    return out;
}

TensorPtr stack_rows(Tape* tape, const std::vector<TensorPtr>& rows) {
    if (rows.empty()) throw std::runtime_error("stack_rows: no rows");
    const std::size_t n = rows[0]->shape[1];
    auto out = make_tensor(rows.size(), n);
    for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r]->shape[0] != 1 || rows[r]->shape[1] != n)
            throw std::runtime_error("stack_rows: inconsistent row shape " + rows[r]->shape_str());
        std::copy(rows[r]->data.begin(), rows[r]->data.end(), out->data.begin() + r * n);
    }
    if (tape) {
        out->ensure_grad();
        tape->record([rows, out, n] {
            for (std::size_t r = 0; r < rows.size(); ++r) {
                rows[r]->ensure_grad();
                for (std::size_t j = 0; j < n; ++j) rows[r]->grad[j] += out->grad[r * n + j];
            }
        });
    }
    return out;
}

TensorPtr embedding_row(Tape* tape, const TensorPtr& table, std::size_t row) {
    require_matrix(table, "embedding_row");
    if (row >= table->shape[0])
        throw std::runtime_error("embedding_row: index " + std::to_string(row) + " out of " + table->shape_str());
    const std::size_t n = table->shape[1];
    auto out = make_tensor(1, n);
    std::copy(table->data.begin() + row * n, table->data.begin() + (row + 1) * n, out->data.begin());
    if (tape) {
        out->ensure_grad();
        tape->record([table, out, row, n] {
            table->ensure_grad();
            for (std::size_t j = 0; j < n; ++j) table->grad[row * n + j] += out->grad[j];
        });
    }
    return out;
}

TensorPtr scale(Tape* tape, const TensorPtr& x, double k) {
    auto out = std::make_shared<Tensor>(x->shape);
    for (std::size_t i = 0; i < x->size(); ++i) out->data[i] = x->data[i] * k;
    if (tape) {
        out->ensure_grad();
        tape->record([x, out, k] {
            x->ensure_grad();
            for (std::size_t i = 0; i < out->size(); ++i) x->grad[i] += out->grad[i] * k;
        });
    }
    return out;
}

TensorPtr softmax_masked(Tape* tape, const TensorPtr& x, const std::vector<std::uint8_t>& mask) {
    const std::size_t n = x->size();
    if (!mask.empty() && mask.size() != n)
        throw std::runtime_error("softmax mask length " + std::to_string(mask.size()) +
                                 " does not match " + x->shape_str());
    auto on = [&](std::size_t i) { return mask.empty() || mask[i]; };

    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i)
        if (on(i)) mx = std::max(mx, x->data[i]);
    if (!std::isfinite(mx)) throw std::runtime_error("empty attention support");

    auto out = std::make_shared<Tensor>(x->shape);
    double z = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (on(i)) {
            out->data[i] = std::exp(x->data[i] - mx);
            z += out->data[i];
        } else {
            out->data[i] = 0.0;
        }
    }
    for (std::size_t i = 0; i < n; ++i) out->data[i] /= z;

    if (tape) {
        out->ensure_grad();
        tape->record([x, out, mask, n] {
            x->ensure_grad();
            auto on = [&](std::size_t i) { return mask.empty() || mask[i]; };
            double dot = 0.0;
            for (std::size_t i = 0; i < n; ++i)
                if (on(i)) dot += out->grad[i] * out->data[i];
            for (std::size_t i = 0; i < n; ++i)
                if (on(i)) x->grad[i] += out->data[i] * (out->grad[i] - dot);
        });
    }
    return out;
}

TensorPtr cross_entropy_row(Tape* tape, const TensorPtr& logits, std::size_t target) {
    const std::size_t n = logits->size();
    if (target >= n)
        throw std::runtime_error("cross_entropy_row: target " + std::to_string(target) +
                                 " out of range for " + logits->shape_str());
    double mx = *std::max_element(logits->data.begin(), logits->data.end());
    double z = 0.0;
    for (double v : logits->data) z += std::exp(v - mx);
    const double lse = mx + std::log(z);
    auto out = make_tensor(1, 1, lse - logits->data[target]);
    if (tape) {
        out->ensure_grad();
        tape->record([logits, out, target, lse, n] {
            logits->ensure_grad();
            const double g = out->grad[0];
            for (std::size_t i = 0; i < n; ++i) {
                double p = std::exp(logits->data[i] - lse);  // softmax probability
                logits->grad[i] += g * (p - (i == target ? 1.0 : 0.0));
            }
        });
    }
    return out;
}

}  // namespace ops

Tensor matmul(const Tensor& a, const Tensor& b) {
    auto pa = std::make_shared<Tensor>(a);
    auto pb = std::make_shared<Tensor>(b);
    return *ops::matmul(nullptr, pa, pb);
}

Tensor activation(const Tensor& x, Activation kind) {
    auto px = std::make_shared<Tensor>(x);
    return kind == Activation::Sigmoid ? *ops::sigmoid(nullptr, px) : *ops::tanh(nullptr, px);
}

Tensor softmax(const Tensor& x, const std::vector<std::uint8_t>* mask) {
    auto px = std::make_shared<Tensor>(x);
    static const std::vector<std::uint8_t> none;
    return *ops::softmax_masked(nullptr, px, mask ? *mask : none);
}

std::vector<std::vector<double>> finite_diff_grad(const std::function<double()>& f,
                                                  std::span<Tensor* const> params,
                                                  double epsilon) {
    if (epsilon <= 0.0) throw std::runtime_error("finite_diff_grad: epsilon must be positive");
    std::vector<std::vector<double>> grads;
    grads.reserve(params.size());
    for (Tensor* p : params) {
        std::vector<double> g(p->size());
        for (std::size_t i = 0; i < p->size(); ++i) {
            const double saved = p->data[i];
            p->data[i] = saved + epsilon;
            const double hi = f();
            p->data[i] = saved - epsilon;
            const double lo = f();
            p->data[i] = saved;
            if (!std::isfinite(hi) || !std::isfinite(lo))
                throw std::runtime_error("finite_diff_grad: non-finite function value");
            g[i] = (hi - lo) / (2.0 * epsilon);
        }
        grads.push_back(std::move(g));
    }
    return grads;
}

}  // namespace draaseq
