#pragma once

// Hand-rolled generators for property tests.

#include <array>
#include <cstdint>
#include <vector>

#include "aaa/domain.hpp"
#include "aaa/rng.hpp"

namespace aaa::testkit {

/// Joint 2x2 table with every cell >= eps.
inline JointCells random_cells(Rng& rng, double eps = 0.05) {
    std::array<double, 4> w{};
    double s = 0.0;
    for (auto& v : w) s += (v = exponential(rng));
    JointCells c;
    for (std::size_t k = 0; k < 4; ++k) c.cells[k] = eps + (1.0 - 4.0 * eps) * w[k] / s;
    return c;
}

inline DiscreteDGP single_point(const JointCells& c) { return DiscreteDGP({0.0}, {1.0}, {c}, 0.01); }

/// The 2x2 table used throughout: cells {0.3, 0.2, 0.2, 0.3}, log OR = log 2.25.
inline JointCells reference_cells() { return JointCells{{0.3, 0.2, 0.2, 0.3}}; }

}  // namespace aaa::testkit
