#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace draaseq {

// Forward-pass cost counters, one instance per thread. Only the public
// matrix-multiply path increments them; backward kernels do not count.
struct ComputeStats {
    std::uint64_t mul_add_count = 0;
    std::uint64_t bytes_touched = 0;
    void reset() {
        mul_add_count = 0;
        bytes_touched = 0;
    }
};

ComputeStats& stats();

// Dense row-major array of doubles. 1-D tensors have shape {n}; matrices
// {rows, cols}. grad is empty until ensure_grad() and mirrors data's length
// afterwards.
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<double> data;
    std::vector<double> grad;

    Tensor() = default;
    Tensor(std::size_t r, std::size_t c, double fill = 0.0)
        : shape{r, c}, data(r * c, fill) {}
    explicit Tensor(std::vector<std::size_t> s, double fill = 0.0);

    std::size_t size() const { return data.size(); }
    std::size_t rows() const { return shape.empty() ? 0 : shape[0]; }
    std::size_t cols() const { return shape.size() < 2 ? (shape.empty() ? 0 : 1) : shape[1]; }

    double& at(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
    double at(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }

    void ensure_grad();
    void zero_grad();
    bool has_grad() const { return !grad.empty(); }
    bool all_finite() const;
    std::string shape_str() const;  // e.g. "[3x4]"
};

using TensorPtr = std::shared_ptr<Tensor>;

TensorPtr make_tensor(std::size_t rows, std::size_t cols, double fill = 0.0);
TensorPtr make_row(std::vector<double> values);  // shape [1 x n]

// Records one backward closure per differentiable operation; backward()
// seeds d(loss)=1 and replays the closures in reverse. A tape is built for
// one loss evaluation and discarded afterwards; parameter tensors outlive it
// and accumulate into their grad slots.
class Tape {
public:
    void record(std::function<void()> step) { steps_.push_back(std::move(step)); }
    void backward(const TensorPtr& loss);
    std::size_t size() const { return steps_.size(); }

private:
    std::vector<std::function<void()>> steps_;
};

enum class Activation { Sigmoid, Tanh };

// Differentiable operations. tape may be null for inference-only evaluation;
// the forward values are identical either way.
namespace ops {

TensorPtr matmul(Tape* tape, const TensorPtr& a, const TensorPtr& b);
TensorPtr transpose(Tape* tape, const TensorPtr& x);
TensorPtr add(Tape* tape, const TensorPtr& a, const TensorPtr& b);
TensorPtr mul(Tape* tape, const TensorPtr& a, const TensorPtr& b);
TensorPtr sigmoid(Tape* tape, const TensorPtr& x);
TensorPtr tanh(Tape* tape, const TensorPtr& x);
TensorPtr slice_cols(Tape* tape, const TensorPtr& x, std::size_t from, std::size_t to);
TensorPtr concat_cols(Tape* tape, const TensorPtr& a, const TensorPtr& b);
TensorPtr stack_rows(Tape* tape, const std::vector<TensorPtr>& rows);
TensorPtr embedding_row(Tape* tape, const TensorPtr& table, std::size_t row);
TensorPtr scale(Tape* tape, const TensorPtr& x, double k);

// Masked softmax over a [1 x n] row with max-subtraction; masked entries are
// exactly zero in the output. Empty mask means every position participates.
// Throws "empty attention support" when no position is unmasked.
TensorPtr softmax_masked(Tape* tape, const TensorPtr& x,
                         const std::vector<std::uint8_t>& mask);

// -log softmax(logits)[target] computed in log space; returns a [1 x 1] scalar.
TensorPtr cross_entropy_row(Tape* tape, const TensorPtr& logits, std::size_t target);

}  // namespace ops

// Plain (untaped) entry points.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor activation(const Tensor& x, Activation kind);
Tensor softmax(const Tensor& x, const std::vector<std::uint8_t>* mask = nullptr);

// Central-difference gradient estimate (f(t+e)-f(t-e))/2e for every scalar in
// params; f is re-evaluated with the parameter temporarily perturbed in place.
// Throws if f evaluates non-finite.
std::vector<std::vector<double>> finite_diff_grad(const std::function<double()>& f,
                                                  std::span<Tensor* const> params,
                                                  double epsilon = 1e-5);

}  // namespace draaseq
