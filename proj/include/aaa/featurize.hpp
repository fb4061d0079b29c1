#pragma once

// Design-matrix construction: cubic B-spline expansion of numeric columns and
// one-hot coding of categorical columns. No intercept column is emitted.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "aaa/domain.hpp"

namespace aaa {

enum class KnotRule { quantile, uniform };
enum class OutOfRange { clamp, error };

struct Passthrough {};

struct SplineDirective {
    int degree = 3;
    int n_inner_knots = 17;
    KnotRule knot_rule = KnotRule::quantile;
};

struct OneHotDirective {
    bool drop_first = true;
};

using ColumnDirective = std::variant<Passthrough, SplineDirective, OneHotDirective>;

struct FeatureSpec {
    std::vector<ColumnDirective> columns;
    OutOfRange out_of_range = OutOfRange::clamp;

    static FeatureSpec passthrough(std::size_t n_columns) {
        return FeatureSpec{std::vector<ColumnDirective>(n_columns, Passthrough{}), OutOfRange::clamp};
    }

    void validate(const std::vector<ColumnKind>& kinds) const {
        if (columns.size() != kinds.size())
            throw std::invalid_argument("feature spec has " + std::to_string(columns.size()) + " directives for " +
                                        std::to_string(kinds.size()) + " columns");
        for (std::size_t j = 0; j < columns.size(); ++j) {
            if (const auto* s = std::get_if<SplineDirective>(&columns[j])) {
                if (s->degree < 0 || s->n_inner_knots < 0)
                    throw std::invalid_argument("spline degree and knot count must be non-negative");
                if (kinds[j] != ColumnKind::numeric)
                    throw std::invalid_argument("spline directive on non-numeric column " + std::to_string(j));
            } else if (std::holds_alternative<OneHotDirective>(columns[j]) && kinds[j] != ColumnKind::categorical) {
                throw std::invalid_argument("onehot directive on non-categorical column " + std::to_string(j));
            }
        }
    }
};

// ---------------------------------------------------------------------------
// B-spline basis

/// B-spline basis on [lo, hi] with open-uniform boundary knots (each boundary
/// repeated degree+1 times) and strictly interior inner knots.
class SplineBasis {
public:
    SplineBasis(int degree, std::vector<double> breakpoints) : degree_(degree) {
        if (degree < 0) throw std::invalid_argument("spline degree must be non-negative");
        if (breakpoints.size() < 2) throw std::invalid_argument("spline needs at least two breakpoints");
        for (std::size_t i = 1; i < breakpoints.size(); ++i)
            if (!(breakpoints[i] > breakpoints[i - 1]))
                throw std::invalid_argument("spline breakpoints must be strictly increasing");
        lo_ = breakpoints.front();
        hi_ = breakpoints.back();
        knots_.assign(static_cast<std::size_t>(degree), lo_);
        knots_.insert(knots_.end(), breakpoints.begin(), breakpoints.end());
        knots_.insert(knots_.end(), static_cast<std::size_t>(degree), hi_);
    }

    int degree() const { return degree_; }
    double lo() const { return lo_; }
    double hi() const { return hi_; }
    /// n_inner_knots + degree + 1
    std::size_t size() const { return knots_.size() - static_cast<std::size_t>(degree_) - 1; }
    const std::vector<double>& knots() const { return knots_; }

    std::vector<double> interior_knots() const {
        return {knots_.begin() + degree_ + 1, knots_.end() - degree_ - 1};
    }

    /// Writes all basis values at x into out (size() entries). Returns true if
    /// x was outside [lo, hi] and got clamped.
    bool evaluate_into(double x, std::span<double> out, OutOfRange policy = OutOfRange::clamp) const {
        bool clamped = false;
        if (x < lo_ || x > hi_) {
            if (policy == OutOfRange::error)
                throw std::out_of_range("spline argument " + std::to_string(x) + " outside [" + std::to_string(lo_) +
                                        ", " + std::to_string(hi_) + "]");
            x = std::clamp(x, lo_, hi_);
            clamped = true;
        }
        std::fill(out.begin(), out.end(), 0.0);
        const auto p = static_cast<std::size_t>(degree_);
        // span s with knots_[s] <= x < knots_[s+1]; the right end uses the last nonempty span
        std::size_t s;
        if (x >= hi_) {
            s = knots_.size() - p - 2;
        } else {
            s = static_cast<std::size_t>(std::upper_bound(knots_.begin(), knots_.end(), x) - knots_.begin()) - 1;
        }
        // Cox-de Boor recursion in triangular form: N holds the p+1 nonzero values.
        std::vector<double> N(p + 1, 0.0), left(p + 1, 0.0), right(p + 1, 0.0);
        N[0] = 1.0;
        for (std::size_t j = 1; j <= p; ++j) {
            left[j] = x - knots_[s + 1 - j];
            right[j] = knots_[s + j] - x;
            double saved = 0.0;
            for (std::size_t r = 0; r < j; ++r) {
                const double temp = N[r] / (right[r + 1] + left[j - r]);
                N[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            N[j] = saved;
        }
        for (std::size_t r = 0; r <= p; ++r) out[s - p + r] = N[r];
        return clamped;
    }

    std::vector<double> evaluate(double x, OutOfRange policy = OutOfRange::clamp) const {
        std::vector<double> out(size());
        evaluate_into(x, out, policy);
        return out;
    }

private:
    int degree_;
    double lo_ = 0.0, hi_ = 1.0;
    std::vector<double> knots_;
};

/// Basis values at x for the given degree; `breakpoints` is the strictly
/// increasing sequence lo, inner knots..., hi.
inline std::vector<double> bspline_basis(double x, int degree, std::span<const double> breakpoints,
                                         OutOfRange policy = OutOfRange::clamp) {
    return SplineBasis(degree, {breakpoints.begin(), breakpoints.end()}).evaluate(x, policy);
}

/// Type-7 sample quantile (linear interpolation between order statistics) of sorted data.
inline double sorted_quantile(std::span<const double> sorted, double prob) {
    const double h = (static_cast<double>(sorted.size()) - 1.0) * prob;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const auto hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

/// Breakpoints lo, inner..., hi for a training column. Tied quantiles are
/// merged, so heavily discretized columns can yield fewer inner knots.
inline std::vector<double> place_knots(std::span<const double> values, int n_inner, KnotRule rule) {
    std::vector<double> sorted(values.begin(), values.end());
    std::sort(sorted.begin(), sorted.end());
    const double lo = sorted.front(), hi = sorted.back();
    if (!(hi > lo)) throw std::invalid_argument("spline column has zero range in the training rows");
    std::vector<double> bp{lo};
    for (int k = 1; k <= n_inner; ++k) {
        const double prob = static_cast<double>(k) / (n_inner + 1);
        const double knot = rule == KnotRule::quantile ? sorted_quantile(sorted, prob) : lo + prob * (hi - lo);
        if (knot > bp.back() && knot < hi) bp.push_back(knot);
    }
    bp.push_back(hi);
    return bp;
}

// ---------------------------------------------------------------------------
// Design construction

struct TransformWarning {
    std::size_t row;
    std::size_t column;
    double value;
    std::string what;  // "clamped" | "unseen_level"
};

struct Design {
    Eigen::MatrixXd matrix;
    std::vector<std::string> manifest;  // provenance of each output column
    std::vector<TransformWarning> warnings;
};

/// Column transformation fitted on training rows (knots, category levels) and
/// then applied unchanged to any other rows.
class Featurizer {
public:
    static Featurizer fit(const FeatureSpec& spec, const Eigen::MatrixXd& raw, const std::vector<ColumnKind>& kinds,
                          const std::vector<std::string>& names) {
        spec.validate(kinds);
        if (raw.cols() != static_cast<Eigen::Index>(kinds.size()))
            throw std::invalid_argument("raw covariate width does not match the feature spec");
        if (raw.rows() == 0) throw std::invalid_argument("featurizer needs at least one training row");
        Featurizer f;
        f.policy_ = spec.out_of_range;
        f.n_raw_ = kinds.size();
        for (std::size_t j = 0; j < kinds.size(); ++j) {
            Block b;
            b.column = j;
            b.offset = f.width_;
            const std::string& name = j < names.size() ? names[j] : "x" + std::to_string(j);
            const auto col = raw.col(static_cast<Eigen::Index>(j));
            std::vector<double> values(col.data(), col.data() + col.size());
            if (const auto* s = std::get_if<SplineDirective>(&spec.columns[j])) {
                b.spline = SplineBasis(s->degree, place_knots(values, s->n_inner_knots, s->knot_rule));
                b.width = b.spline->size();
                for (std::size_t k = 0; k < b.width; ++k)
                    f.manifest_.push_back(name + ":bs" + std::to_string(s->degree) + "[" + std::to_string(k) + "]");
            } else if (const auto* o = std::get_if<OneHotDirective>(&spec.columns[j])) {
                std::vector<double> levels = values;
                std::sort(levels.begin(), levels.end());
                levels.erase(std::unique(levels.begin(), levels.end()), levels.end());
                b.all_levels = levels;
                if (o->drop_first) levels.erase(levels.begin());
                for (std::size_t k = 0; k < levels.size(); ++k) {
                    b.level_index.emplace(levels[k], k);
                    f.manifest_.push_back(name + "=" + format_level(levels[k]));
                }
                b.width = levels.size();
            } else {
                b.width = 1;
                f.manifest_.push_back(name);
            }
            f.width_ += b.width;
            f.blocks_.push_back(std::move(b));
        }
        return f;
    }

    std::size_t width() const { return width_; }
    const std::vector<std::string>& manifest() const { return manifest_; }

    Design transform(const Eigen::MatrixXd& raw) const {
        if (raw.cols() != static_cast<Eigen::Index>(n_raw_))
            throw std::invalid_argument("raw covariate width does not match the fitted featurizer");
        Design d;
        d.matrix = Eigen::MatrixXd::Zero(raw.rows(), static_cast<Eigen::Index>(width_));
        d.manifest = manifest_;
        std::vector<double> buf;
        for (const auto& b : blocks_) {
            const auto j = static_cast<Eigen::Index>(b.column);
            const auto off = static_cast<Eigen::Index>(b.offset);
            if (b.spline) {
                buf.assign(b.width, 0.0);
                for (Eigen::Index i = 0; i < raw.rows(); ++i) {
                    if (b.spline->evaluate_into(raw(i, j), buf, policy_))
                        d.warnings.push_back({static_cast<std::size_t>(i), b.column, raw(i, j), "clamped"});
                    for (std::size_t k = 0; k < b.width; ++k) d.matrix(i, off + static_cast<Eigen::Index>(k)) = buf[k];
                }
            } else if (!b.all_levels.empty()) {
                for (Eigen::Index i = 0; i < raw.rows(); ++i) {
                    const double v = raw(i, j);
                    if (auto it = b.level_index.find(v); it != b.level_index.end()) {
                        d.matrix(i, off + static_cast<Eigen::Index>(it->second)) = 1.0;
                    } else if (!std::binary_search(b.all_levels.begin(), b.all_levels.end(), v)) {
                        d.warnings.push_back({static_cast<std::size_t>(i), b.column, v, "unseen_level"});
                    }
                }
            } else {
                d.matrix.col(off) = raw.col(j);
            }
        }
        return d;
    }

private:
    struct Block {
        std::size_t column = 0;
        std::size_t offset = 0;
        std::size_t width = 0;
        std::optional<SplineBasis> spline;
        std::vector<double> all_levels;
        std::map<double, std::size_t> level_index;
    };

    static std::string format_level(double v) {
        if (v == std::floor(v) && std::abs(v) < 1e15) return std::to_string(static_cast<long long>(v));
        return std::to_string(v);
    }

    std::vector<Block> blocks_;
    std::vector<std::string> manifest_;
    std::size_t width_ = 0;
    std::size_t n_raw_ = 0;
    OutOfRange policy_ = OutOfRange::clamp;
};

/// Fits the featurizer on `raw` and transforms the same rows.
inline Design build_design(const FeatureSpec& spec, const Eigen::MatrixXd& raw, const std::vector<ColumnKind>& kinds,
                           const std::vector<std::string>& names = {}) {
    return Featurizer::fit(spec, raw, kinds, names).transform(raw);
}

}  // namespace aaa
