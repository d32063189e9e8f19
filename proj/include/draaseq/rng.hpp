#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace draaseq {

// Deterministic draws on top of mt19937_64. The <random> distributions and
// std::shuffle are implementation-defined sequences; these are not, which
// keeps seeded runs byte-identical across toolchains.

inline double uniform_unit(std::mt19937_64& g) {
    return static_cast<double>(g() >> 11) * 0x1.0p-53;  // [0, 1)
}

inline double uniform_in(std::mt19937_64& g, double lo, double hi) {
    return lo + (hi - lo) * uniform_unit(g);
}

template <typename T>
void shuffle_inplace(std::vector<T>& v, std::mt19937_64& g) {
    for (std::size_t i = v.size(); i > 1; --i) {
        std::size_t j = static_cast<std::size_t>(g() % i);
        std::swap(v[i - 1], v[j]);
    }
}

}  // namespace draaseq
