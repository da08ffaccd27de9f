#include "fedsim/attack.hpp"

#include <algorithm>
#include <cmath>

#include "fedsim/errors.hpp"

namespace fedsim {

BenignStats benign_stats(const std::vector<ParamVector>& benign_updates) {
    if (benign_updates.size() < 2)
        throw DimensionError("benign_stats: need at least 2 benign updates");
    BenignStats s;
    s.mean = index_mean(benign_updates);
    s.std = index_std(benign_updates);
    s.count = static_cast<int>(benign_updates.size());
    return s;
}

namespace {

double std_normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

double std_normal_pdf(double z) {
    return std::exp(-0.5 * z * z) / std::sqrt(2.0 * 3.14159265358979323846);
}

} // namespace

double std_normal_inv_cdf(double p) {
    if (!(p > 0.0 && p < 1.0)) throw DimensionError("std_normal_inv_cdf: p must be in (0, 1)");

    // Acklam's rational approximation, then one Newton step against the
    // erfc-based CDF.
    static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                               -2.759285104469687e+02, 1.383577518672690e+02,
                               -3.066479806614716e+01, 2.506628277459239e+00};
    static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                               -1.556989798598866e+02, 6.680131188771972e+01,
                               -1.328068155288572e+01};
    static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                               -2.400758277161838e+00, -2.549732539343734e+00,
                               4.374664141464968e+00,  2.938163982698783e+00};
    static const double dd[] = {7.784695709041462e-03, 3.224671290700398e-01,
                                2.445134137142996e+00, 3.754408661907416e+00};
    const double p_low = 0.02425;
    double x;
    if (p < p_low) {
        const double q = std::sqrt(-2.0 * std::log(p));
        x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((dd[0] * q + dd[1]) * q + dd[2]) * q + dd[3]) * q + 1.0);
    } else if (p <= 1.0 - p_low) {
        const double q = p - 0.5;
        const double r = q * q;
        x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
            (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
    } else {
        const double q = std::sqrt(-2.0 * std::log(1.0 - p));
        x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((dd[0] * q + dd[1]) * q + dd[2]) * q + dd[3]) * q + 1.0);
    }
    const double err = std_normal_cdf(x) - p;
    x -= err / std_normal_pdf(x);
    return x;
}

ZMax compute_z_max(int k, int k_m) {
    if (k_m <= 0 || 2 * k_m >= k)
        throw DimensionError("compute_z_max: requires 0 < k_m < k/2");
    ZMax out;
    out.supporters = static_cast<int>(std::floor(k / 2.0 + 1.0)) - k_m;
    out.quantile = static_cast<double>(k - k_m - out.supporters) / static_cast<double>(k - k_m);
    out.degenerate = out.quantile <= 0.5;
    out.z = out.quantile <= 0.0 ? -INFINITY : std_normal_inv_cdf(out.quantile);
    return out;
}

ParamVector attack_alie(const BenignStats& stats, double z, bool minus) {
    const double sgn = minus ? -1.0 : 1.0;
    ParamVector out(stats.mean.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = stats.mean[i] + sgn * z * stats.std[i];
    return out;
}

ParamVector attack_ipm(const BenignStats& stats, double z) {
    if (z <= 0.0) throw DimensionError("attack_ipm: z must be positive");
    ParamVector out(stats.mean.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = -z * stats.mean[i];
    return out;
}

ParamVector attack_bitflip(const ParamVector& own_gradient) {
    ParamVector out(own_gradient.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = -own_gradient[i];
    return out;
}

namespace {

double norm_dist(const ParamVector& a, const ParamVector& b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double diff = a[i] - b[i];
        acc += diff * diff;
    }
    return std::sqrt(acc);
}

double sq_norm_dist(const ParamVector& a, const ParamVector& b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double diff = a[i] - b[i];
        acc += diff * diff;
    }
    return acc;
}

double envelope_threshold(const std::vector<ParamVector>& benign, MinOptMode mode) {
    double threshold = 0.0;
    for (std::size_t i = 0; i < benign.size(); ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < benign.size(); ++j) {
            if (i == j) continue;
            if (mode == MinOptMode::max)
                acc = std::max(acc, norm_dist(benign[i], benign[j]));
            else
                acc += sq_norm_dist(benign[i], benign[j]);
        }
        threshold = std::max(threshold, acc);
    }
    return threshold;
}

double envelope_value(const ParamVector& candidate, const std::vector<ParamVector>& benign,
                      MinOptMode mode) {
    double v = 0.0;
    for (const auto& m : benign) {
        if (mode == MinOptMode::max)
            v = std::max(v, norm_dist(candidate, m));
        else
            v += sq_norm_dist(candidate, m);
    }
    return v;
}

// Largest feasible step along `direction` from `base`, where feasibility is
// envelope(base + t*direction) <= threshold. The feasible set is an interval
// (the envelope is convex in t), so bisection on the upper boundary is exact
// to tol provided t = 0 is feasible.
double bisect_upper(const ParamVector& base, const ParamVector& direction,
                    const std::vector<ParamVector>& benign, MinOptMode mode, double threshold,
                    double t_hi, double tol) {
    auto feasible = [&](double t) {
        ParamVector cand(base.size());
        for (std::size_t i = 0; i < base.size(); ++i) cand[i] = base[i] + t * direction[i];
        return envelope_value(cand, benign, mode) <= threshold;
    };
    if (feasible(t_hi)) return t_hi;
    double lo = 0.0, hi = t_hi;
    for (int it = 0; it < 60 && hi - lo > tol; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (feasible(mid))
            lo = mid;
        else
            hi = mid;
    }
    return lo;
}

} // namespace

MinOptResult attack_min_opt(const BenignStats& stats, const std::vector<ParamVector>& benign,
                            MinOptMode mode, double z_hi, double tol) {
    if (benign.size() < 2) throw DimensionError("attack_min_opt: need at least 2 benign updates");
    if (z_hi <= 0.0) throw DimensionError("attack_min_opt: z_hi must be positive");

    MinOptResult res;
    res.poisoned = stats.mean;
    const double threshold = envelope_threshold(benign, mode);
    const double sigma_norm = l2_norm(stats.std);
    if (threshold <= 0.0 || sigma_norm == 0.0) {
        res.degenerate = true;
        return res;
    }

    ParamVector direction(stats.std.size());
    for (std::size_t i = 0; i < direction.size(); ++i) direction[i] = -stats.std[i];
    res.z = bisect_upper(stats.mean, direction, benign, mode, threshold, z_hi, tol);
    if (res.z <= 0.0) {
        res.z = 0.0;
        res.degenerate = true;
        return res;
    }
    res.poisoned.resize(stats.mean.size());
    for (std::size_t i = 0; i < res.poisoned.size(); ++i)
        res.poisoned[i] = stats.mean[i] - res.z * stats.std[i];
    return res;
}

ParamVector attack_hybrid_sparse(const BenignStats& stats, std::span<const std::uint8_t> mask_bits,
                                 double z1, double z2, bool minus) {
    if (mask_bits.size() != stats.mean.size())
        throw DimensionError("attack_hybrid_sparse: mask dimension mismatch");
    const double sgn = minus ? -1.0 : 1.0;
    ParamVector out(stats.mean.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double scale = mask_bits[i] ? z2 : z1;
        out[i] = stats.mean[i] + sgn * scale * stats.std[i];
    }
    return out;
}

double hybrid_z1_adaptive(const BenignStats& stats, const std::vector<ParamVector>& benign,
                          std::span<const std::uint8_t> mask_bits, double z2, double z1_cap,
                          double tol) {
    if (benign.size() < 2)
        throw DimensionError("hybrid_z1_adaptive: need at least 2 benign updates");
    if (mask_bits.size() != stats.mean.size())
        throw DimensionError("hybrid_z1_adaptive: mask dimension mismatch");

    const double threshold = envelope_threshold(benign, MinOptMode::sum);
    if (threshold <= 0.0) return 0.0;

    // Base point fixes the aggressive part; z1 moves along the dense part.
    ParamVector base(stats.mean.size());
    ParamVector direction(stats.mean.size());
    for (std::size_t i = 0; i < base.size(); ++i) {
        base[i] = stats.mean[i] - (mask_bits[i] ? z2 * stats.std[i] : 0.0);
        direction[i] = mask_bits[i] ? 0.0 : -stats.std[i];
    }
    if (envelope_value(base, benign, MinOptMode::sum) > threshold) return 0.0;
    return bisect_upper(base, direction, benign, MinOptMode::sum, threshold, z1_cap, tol);
}

AttackKind attack_kind_from_string(std::string_view s) {
    if (s == "none") return AttackKind::none;
    if (s == "bitflip") return AttackKind::bitflip;
    if (s == "labelflip") return AttackKind::labelflip;
    if (s == "alie") return AttackKind::alie;
    if (s == "ipm") return AttackKind::ipm;
    if (s == "minmax") return AttackKind::minmax;
    if (s == "minsum") return AttackKind::minsum;
    if (s == "hybrid_sparse") return AttackKind::hybrid_sparse;
    throw ConfigError("unknown attack kind: " + std::string(s));
}

std::string attack_kind_to_string(AttackKind k) {
    switch (k) {
        case AttackKind::none: return "none";
        case AttackKind::bitflip: return "bitflip";
        case AttackKind::labelflip: return "labelflip";
        case AttackKind::alie: return "alie";
        case AttackKind::ipm: return "ipm";
        case AttackKind::minmax: return "minmax";
        case AttackKind::minsum: return "minsum";
        case AttackKind::hybrid_sparse: return "hybrid_sparse";
    }
    return "none";
}

} // namespace fedsim
