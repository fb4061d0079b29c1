#pragma once

#include <cstddef>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "aaa/rng.hpp"

namespace aaa {

/// K-way partition of record indices 0..n-1.
struct FoldPlan {
    std::vector<std::size_t> assignment;  // fold id per record
    std::size_t K = 0;
    std::uint64_t seed = 0;

    std::size_t size() const { return assignment.size(); }

    /// Record indices of each fold, ascending.
    std::vector<std::vector<std::size_t>> folds() const {
        std::vector<std::vector<std::size_t>> out(K);
        for (std::size_t i = 0; i < assignment.size(); ++i) out[assignment[i]].push_back(i);
        return out;
    }

    /// Indices not in fold k, ascending.
    std::vector<std::size_t> complement(std::size_t k) const {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < assignment.size(); ++i)
            if (assignment[i] != k) out.push_back(i);
        return out;
    }
};

/// Seeded Fisher-Yates shuffle, then contiguous blocks; the first n % K folds
/// receive one extra record.
inline FoldPlan make_folds(std::size_t n, std::size_t K, std::uint64_t seed) {
    if (K < 2 || K > n) throw std::invalid_argument("fold count must satisfy 2 <= K <= n");
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng = make_rng(seed, 0x666f6c6473ULL);
    for (std::size_t i = n - 1; i > 0; --i) std::swap(order[i], order[uniform_index(rng, i + 1)]);
    FoldPlan plan{std::vector<std::size_t>(n), K, seed};
    const std::size_t base = n / K, extra = n % K;
    std::size_t pos = 0;
    for (std::size_t k = 0; k < K; ++k) {
        const std::size_t len = base + (k < extra ? 1 : 0);
        for (std::size_t r = 0; r < len; ++r) plan.assignment[order[pos++]] = k;
    }
    return plan;
}

}  // namespace aaa
