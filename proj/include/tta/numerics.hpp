#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <vector>

#include "tta/errors.hpp"
#include "tta/prng.hpp"
#include "tta/tensor.hpp"

namespace tta {

// Cosine similarity of two equal-length vectors, computed as the dot product
// of the normalized inputs so that tiny norms cannot underflow the
// denominator. Result clamped to [-1, 1].
inline double cosine_similarity(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size())
        throw ParameterError("cosine: vectors must have equal length");
    if (a.empty())
        throw ParameterError("cosine: vectors must be non-empty");
    double na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    na = std::sqrt(na);
    nb = std::sqrt(nb);
    if (na == 0.0 || nb == 0.0)
        throw DegenerateInputError("cosine: zero-norm input");
    double dot = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        dot += (a[i] / na) * (b[i] / nb);
    return std::clamp(dot, -1.0, 1.0);
}

inline double cosine_similarity(const Tensor& a, const Tensor& b) {
    if (!a.same_dims(b))
        throw ParameterError("cosine: dims mismatch " + a.dims_string() + " vs " + b.dims_string());
    return cosine_similarity(a.values(), b.values());
}

// D(a, b) = 1 - cos(a, b); value in [0, 2].
inline double cosine_distance(const Tensor& a, const Tensor& b) {
    return 1.0 - cosine_similarity(a, b);
}

// Temperature-scaled softmax with max subtraction, so adding a constant to
// every score leaves the weights unchanged.
inline std::vector<double> softmax_temperature(std::span<const double> scores, double tau) {
    if (!(tau > 0.0))
        throw ParameterError("softmax: tau must be > 0");
    if (scores.empty())
        throw ParameterError("softmax: scores must be non-empty");
    double top = scores[0];
    for (double s : scores) {
        if (!std::isfinite(s)) throw ParameterError("softmax: non-finite score");
        top = std::max(top, s);
    }
    std::vector<double> w(scores.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        w[i] = std::exp((scores[i] - top) / tau);
        sum += w[i];
    }
    for (double& v : w) v /= sum;
    return w;
}

inline Tensor softmax_temperature(const Tensor& scores, double tau) {
    return Tensor({scores.size()}, softmax_temperature(scores.values(), tau));
}

// Column means of an N x D matrix.
inline Tensor mean_pool_rows(const Tensor& m) {
    if (m.rank() != 2)
        throw ParameterError("mean_pool_rows: rank-2 tensor required");
    const std::size_t n = m.rows(), d = m.cols();
    Tensor out = Tensor::vector(d);
    for (std::size_t r = 0; r < n; ++r) {
        auto row = m.row_span(r);
        for (std::size_t c = 0; c < d; ++c) out[c] += row[c];
    }
    for (std::size_t c = 0; c < d; ++c) out[c] /= static_cast<double>(n);
    return out;
}

// Result of comparing an analytic gradient against central finite
// differences. max_relative_error uses |a - n| / max(|a|, |n|, 1e-6); the
// absolute floor keeps near-zero coordinates from amplifying FD roundoff.
struct GradientReport {
    double max_relative_error = 0.0;
    std::size_t worst_coordinate = 0;
    double analytic_value = 0.0;
    double numeric_value = 0.0;
};

inline double gradient_relative_error(double analytic, double numeric) {
    double denom = std::max({std::fabs(analytic), std::fabs(numeric), 1e-6});
    return std::fabs(analytic - numeric) / denom;
}

// Central-difference check of an analytic input gradient at >= sample_count
// coordinates (all of them when the input is small enough). Coordinates are
// chosen by a seeded SplitMix64 stream so reruns sample identically.
inline GradientReport gradient_check(const std::function<double(const Tensor&)>& objective_value,
                                     const std::function<Tensor(const Tensor&)>& objective_gradient,
                                     const Tensor& x, double step,
                                     std::size_t sample_count = 64,
                                     std::uint64_t seed = 0) {
    if (!(step > 0.0))
        throw ParameterError("gradient_check: step must be > 0");
    Tensor analytic = objective_gradient(x);
    if (!analytic.same_dims(x))
        throw ParameterError("gradient_check: gradient dims must match input dims");
    if (!analytic.all_finite())
        throw EvaluationError("gradient_check: non-finite analytic gradient");

    std::vector<std::size_t> coords;
    if (x.size() <= sample_count) {
        coords.resize(x.size());
        for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
    } else {
        std::vector<char> taken(x.size(), 0);
        SplitMix64 rng(seed ^ 0xC0FFEEull);
        while (coords.size() < sample_count) {
            std::size_t i = static_cast<std::size_t>(rng.next_below(x.size()));
            if (!taken[i]) {
                taken[i] = 1;
                coords.push_back(i);
            }
        }
    }

    GradientReport report;
    Tensor probe = x;
    for (std::size_t i : coords) {
        const double saved = probe[i];
        probe[i] = saved + step;
        double fp = objective_value(probe);
        probe[i] = saved - step;
        double fm = objective_value(probe);
        probe[i] = saved;
        if (!std::isfinite(fp) || !std::isfinite(fm))
            throw EvaluationError("gradient_check: non-finite objective value");
        double numeric = (fp - fm) / (2.0 * step);
        double err = gradient_relative_error(analytic[i], numeric);
        if (err >= report.max_relative_error) {
            report.max_relative_error = err;
            report.worst_coordinate = i;
            report.analytic_value = analytic[i];
            report.numeric_value = numeric;
        }
    }
    return report;
}

inline double median(std::vector<double> values) {
    if (values.empty())
        throw ParameterError("median of empty set");
    std::sort(values.begin(), values.end());
    std::size_t n = values.size();
    if (n % 2 == 1) return values[n / 2];
    return 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

} // namespace tta
