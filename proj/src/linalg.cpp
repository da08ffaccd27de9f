#include "fedsim/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "fedsim/errors.hpp"

namespace fedsim {

double l2_norm(std::span<const double> v) {
    if (v.empty()) throw DimensionError("l2_norm: empty vector");
    double acc = 0.0;
    for (double x : v) acc += x * x;
    return std::sqrt(acc);
}

double dot(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size())
        throw DimensionError("dot: dimension mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
    const double na = l2_norm(a);
    const double nb = l2_norm(b);
    if (na == 0.0 || nb == 0.0)
        throw DimensionError("cosine_similarity: zero-norm input has no direction");
    const double c = dot(a, b) / (na * nb);
    return std::clamp(c, -1.0, 1.0);
}

double angle_degrees(std::span<const double> a, std::span<const double> b) {
    return std::acos(cosine_similarity(a, b)) * 180.0 / std::numbers::pi;
}

ParamVector index_mean(const std::vector<ParamVector>& vs) {
    if (vs.empty()) throw DimensionError("index_mean: empty set");
    const std::size_t d = vs.front().size();
    ParamVector out(d, 0.0);
    for (const auto& v : vs) {
        if (v.size() != d) throw DimensionError("index_mean: dimension mismatch");
        for (std::size_t i = 0; i < d; ++i) out[i] += v[i];
    }
    const double inv = 1.0 / static_cast<double>(vs.size());
    for (double& x : out) x *= inv;
    return out;
}

ParamVector index_std(const std::vector<ParamVector>& vs) {
    if (vs.size() < 2) throw DimensionError("index_std: need at least 2 vectors");
    const ParamVector mean = index_mean(vs);
    const std::size_t d = mean.size();
    ParamVector out(d, 0.0);
    for (const auto& v : vs) {
        for (std::size_t i = 0; i < d; ++i) {
            const double diff = v[i] - mean[i];
            out[i] += diff * diff;
        }
    }
    const double inv = 1.0 / static_cast<double>(vs.size());
    for (double& x : out) x = std::sqrt(x * inv);
    return out;
}

bool all_finite(std::span<const double> v) {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

} // namespace fedsim
