#include "fedsim/aggregate.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fedsim/errors.hpp"

namespace fedsim {

namespace {

void require_nonempty(const std::vector<ClientUpdate>& updates, const char* who) {
    if (updates.empty()) throw DimensionError(std::string(who) + ": empty update set");
    const std::size_t d = updates.front().momentum.size();
    for (const auto& u : updates)
        if (u.momentum.size() != d) throw DimensionError(std::string(who) + ": dimension mismatch");
}

double sq_dist(const ParamVector& a, const ParamVector& b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double diff = a[i] - b[i];
        acc += diff * diff;
    }
    return acc;
}

std::vector<std::vector<double>> pairwise_sq(const std::vector<ClientUpdate>& updates) {
    const int k = static_cast<int>(updates.size());
    std::vector<std::vector<double>> d(k, std::vector<double>(k, 0.0));
    for (int i = 0; i < k; ++i) {
        for (int j = i + 1; j < k; ++j) {
            d[i][j] = d[j][i] = sq_dist(updates[i].momentum, updates[j].momentum);
        }
    }
    return d;
}

std::vector<double> krum_scores_from(const std::vector<std::vector<double>>& dist,
                                     const std::vector<int>& pool, int neighborhood) {
    const int n = static_cast<int>(pool.size());
    std::vector<double> scores(n, 0.0);
    std::vector<double> row(n - 1);
    for (int i = 0; i < n; ++i) {
        int m = 0;
        for (int j = 0; j < n; ++j)
            if (j != i) row[m++] = dist[pool[i]][pool[j]];
        std::nth_element(row.begin(), row.begin() + (neighborhood - 1), row.end());
        double acc = 0.0;
        for (int j = 0; j < neighborhood; ++j) acc += row[j];
        scores[i] = acc;
    }
    return scores;
}

double median_of(std::vector<double>& vals) {
    std::sort(vals.begin(), vals.end());
    const std::size_t n = vals.size();
    if (n % 2 == 1) return vals[n / 2];
    return 0.5 * (vals[n / 2 - 1] + vals[n / 2]);
}

} // namespace

std::vector<double> krum_scores(const std::vector<ClientUpdate>& updates, int neighborhood) {
    require_nonempty(updates, "krum_scores");
    const int k = static_cast<int>(updates.size());
    if (k < 3) throw InfeasibleError("krum_scores: need at least 3 clients");
    if (neighborhood < 1 || neighborhood > k - 1)
        throw DimensionError("krum_scores: neighborhood out of range");
    const auto dist = pairwise_sq(updates);
    std::vector<int> pool(k);
    std::iota(pool.begin(), pool.end(), 0);
    return krum_scores_from(dist, pool, neighborhood);
}

ParamVector agg_mean(const std::vector<ClientUpdate>& updates) {
    require_nonempty(updates, "agg_mean");
    const std::size_t d = updates.front().momentum.size();
    ParamVector out(d, 0.0);
    for (const auto& u : updates)
        for (std::size_t i = 0; i < d; ++i) out[i] += u.momentum[i];
    const double inv = 1.0 / static_cast<double>(updates.size());
    for (double& x : out) x *= inv;
    return out;
}

ParamVector agg_multikrum(const std::vector<ClientUpdate>& updates, int k_m, int n_select,
                          int neighborhood, std::vector<int>* selected) {
    require_nonempty(updates, "agg_multikrum");
    const int k = static_cast<int>(updates.size());
    if (n_select < 1 || n_select > k) throw DimensionError("agg_multikrum: invalid n_select");
    if (neighborhood < 0) neighborhood = k - k_m - 2;
    const auto scores = krum_scores(updates, neighborhood);

    std::vector<int> order(k);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        if (scores[a] != scores[b]) return scores[a] < scores[b];
        return updates[a].client_id < updates[b].client_id;
    });

    const std::size_t d = updates.front().momentum.size();
    ParamVector out(d, 0.0);
    for (int s = 0; s < n_select; ++s) {
        const auto& m = updates[order[s]].momentum;
        for (std::size_t i = 0; i < d; ++i) out[i] += m[i];
        if (selected) selected->push_back(updates[order[s]].client_id);
    }
    const double inv = 1.0 / static_cast<double>(n_select);
    for (double& x : out) x *= inv;
    return out;
}

ParamVector agg_bulyan(const std::vector<ClientUpdate>& updates, int k_m,
                       std::vector<int>* selected) {
    require_nonempty(updates, "agg_bulyan");
    const int k = static_cast<int>(updates.size());
    if (k_m < 0) throw DimensionError("agg_bulyan: negative k_m");
    if (k_m == 0) {
        if (selected)
            for (const auto& u : updates) selected->push_back(u.client_id);
        return agg_mean(updates);
    }
    if (k < 4 * k_m + 3) throw InfeasibleError("agg_bulyan: requires k >= 4*k_m + 3");

    // Stage 1: repeatedly pick the Krum winner from the remaining pool. The
    // per-pool neighborhood is pool_size - k_m - 2, floored at 1.
    const auto dist = pairwise_sq(updates);
    std::vector<int> pool(k);
    std::iota(pool.begin(), pool.end(), 0);
    const int n_sel = k - 2 * k_m;
    std::vector<int> chosen;
    chosen.reserve(n_sel);
    while (static_cast<int>(chosen.size()) < n_sel) {
        const int neighborhood = std::max(1, static_cast<int>(pool.size()) - k_m - 2);
        const auto scores = krum_scores_from(dist, pool, neighborhood);
        int best = 0;
        for (int i = 1; i < static_cast<int>(pool.size()); ++i) {
            if (scores[i] < scores[best] ||
                (scores[i] == scores[best] &&
                 updates[pool[i]].client_id < updates[pool[best]].client_id))
                best = i;
        }
        chosen.push_back(pool[best]);
        pool.erase(pool.begin() + best);
    }
    if (selected)
        for (int idx : chosen) selected->push_back(updates[idx].client_id);

    // Stage 2: per coordinate, average the n_sel - 2*k_m selected values
    // closest to the coordinate median (ties by value then client_id).
    const int keep = n_sel - 2 * k_m;
    const std::size_t d = updates.front().momentum.size();
    ParamVector out(d, 0.0);
    std::vector<double> vals(n_sel);
    std::vector<int> order(n_sel);
    for (std::size_t j = 0; j < d; ++j) {
        for (int i = 0; i < n_sel; ++i) vals[i] = updates[chosen[i]].momentum[j];
        std::vector<double> tmp = vals;
        const double med = median_of(tmp);
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(), [&](int a, int b) {
            const double da = std::abs(vals[a] - med);
            const double db = std::abs(vals[b] - med);
            if (da != db) return da < db;
            if (vals[a] != vals[b]) return vals[a] < vals[b];
            return updates[chosen[a]].client_id < updates[chosen[b]].client_id;
        });
        double acc = 0.0;
        for (int s = 0; s < keep; ++s) acc += vals[order[s]];
        out[j] = acc / static_cast<double>(keep);
    }
    return out;
}

ParamVector clip_to_ball(std::span<const double> m, std::span<const double> ref, double tau) {
    if (tau <= 0.0) throw DimensionError("clip_to_ball: tau must be positive");
    if (m.size() != ref.size()) throw DimensionError("clip_to_ball: dimension mismatch");
    double norm = 0.0;
    for (std::size_t i = 0; i < m.size(); ++i) {
        const double diff = m[i] - ref[i];
        norm += diff * diff;
    }
    norm = std::sqrt(norm);
    ParamVector out(m.begin(), m.end());
    if (norm <= tau || norm == 0.0) return out;
    const double scale = tau / norm;
    for (std::size_t i = 0; i < m.size(); ++i) out[i] = ref[i] + scale * (m[i] - ref[i]);
    return out;
}

ParamVector agg_cc(const std::vector<ClientUpdate>& updates, const ParamVector& ref, double tau,
                   int iters) {
    require_nonempty(updates, "agg_cc");
    if (iters < 1) throw DimensionError("agg_cc: need at least one clipping iteration");
    const std::size_t d = updates.front().momentum.size();
    ParamVector center = ref.empty() ? ParamVector(d, 0.0) : ref;
    if (center.size() != d) throw DimensionError("agg_cc: reference dimension mismatch");
    for (int it = 0; it < iters; ++it) {
        ParamVector next(d, 0.0);
        for (const auto& u : updates) {
            const ParamVector clipped = clip_to_ball(u.momentum, center, tau);
            for (std::size_t i = 0; i < d; ++i) next[i] += clipped[i];
        }
        const double inv = 1.0 / static_cast<double>(updates.size());
        for (double& x : next) x *= inv;
        center = std::move(next);
    }
    return center;
}

ParamVector agg_cm(const std::vector<ClientUpdate>& updates) {
    require_nonempty(updates, "agg_cm");
    const std::size_t d = updates.front().momentum.size();
    ParamVector out(d, 0.0);
    std::vector<double> vals(updates.size());
    for (std::size_t j = 0; j < d; ++j) {
        for (std::size_t i = 0; i < updates.size(); ++i) vals[i] = updates[i].momentum[j];
        out[j] = median_of(vals);
    }
    return out;
}

ParamVector agg_tm(const std::vector<ClientUpdate>& updates, int k_m) {
    require_nonempty(updates, "agg_tm");
    const int k = static_cast<int>(updates.size());
    if (k_m < 0 || k <= 2 * k_m) throw InfeasibleError("agg_tm: requires k > 2*k_m");
    const std::size_t d = updates.front().momentum.size();
    ParamVector out(d, 0.0);
    std::vector<double> vals(k);
    for (std::size_t j = 0; j < d; ++j) {
        for (int i = 0; i < k; ++i) vals[i] = updates[i].momentum[j];
        std::sort(vals.begin(), vals.end());
        double acc = 0.0;
        for (int i = k_m; i < k - k_m; ++i) acc += vals[i];
        out[j] = acc / static_cast<double>(k - 2 * k_m);
    }
    return out;
}

ParamVector agg_rfa(const std::vector<ClientUpdate>& updates, double eps, int max_iters,
                    double tol) {
    require_nonempty(updates, "agg_rfa");
    if (eps <= 0.0) throw DimensionError("agg_rfa: eps must be positive");
    const std::size_t d = updates.front().momentum.size();

    auto objective = [&](const ParamVector& x) {
        double acc = 0.0;
        for (const auto& u : updates) acc += std::sqrt(sq_dist(x, u.momentum));
        return acc;
    };

    ParamVector x = agg_mean(updates);
    ParamVector best = x;
    double best_obj = objective(x);
    for (int it = 0; it < max_iters; ++it) {
        ParamVector next(d, 0.0);
        double wsum = 0.0;
        for (const auto& u : updates) {
            const double w = 1.0 / std::max(eps, std::sqrt(sq_dist(x, u.momentum)));
            wsum += w;
            for (std::size_t i = 0; i < d; ++i) next[i] += w * u.momentum[i];
        }
        for (double& v : next) v /= wsum;
        const double step = std::sqrt(sq_dist(next, x));
        x = std::move(next);
        const double obj = objective(x);
        if (obj < best_obj) {
            best_obj = obj;
            best = x;
        }
        if (step < tol) break;
    }
    return best;
}

ParamVector agg_signsgd(const std::vector<ClientUpdate>& updates) {
    require_nonempty(updates, "agg_signsgd");
    const std::size_t d = updates.front().momentum.size();
    ParamVector out(d, 0.0);
    for (std::size_t j = 0; j < d; ++j) {
        double votes = 0.0;
        for (const auto& u : updates) {
            const double v = u.momentum[j];
            votes += v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0);
        }
        out[j] = votes > 0.0 ? 1.0 : (votes < 0.0 ? -1.0 : 0.0);
    }
    return out;
}

namespace {

ParamVector run_base(const std::vector<ClientUpdate>& updates, const AggregatorConfig& cfg,
                     AggKind kind, std::vector<int>* selected) {
    const int k = static_cast<int>(updates.size());
    if (cfg.byzantine_count < 0 &&
        (kind == AggKind::krum || kind == AggKind::multikrum || kind == AggKind::bulyan ||
         kind == AggKind::tm))
        throw ConfigError("aggregator: byzantine_count not set");
    const int n_select = cfg.multikrum_select > 0 ? cfg.multikrum_select : k - cfg.byzantine_count;
    switch (kind) {
        case AggKind::mean: return agg_mean(updates);
        case AggKind::krum:
            return agg_multikrum(updates, cfg.byzantine_count, 1, cfg.neighborhood, selected);
        case AggKind::multikrum:
            return agg_multikrum(updates, cfg.byzantine_count, n_select, cfg.neighborhood, selected);
        case AggKind::bulyan: return agg_bulyan(updates, cfg.byzantine_count, selected);
        case AggKind::cm: return agg_cm(updates);
        case AggKind::tm: return agg_tm(updates, cfg.byzantine_count);
        case AggKind::rfa: return agg_rfa(updates, cfg.rfa_eps, cfg.rfa_max_iters, cfg.rfa_tol);
        case AggKind::signsgd: return agg_signsgd(updates);
        default: throw ConfigError("aggregator kind not usable here");
    }
}

} // namespace

ParamVector agg_gas(const std::vector<ClientUpdate>& updates, int p, const AggregatorConfig& base,
                    std::vector<int>* selected) {
    require_nonempty(updates, "agg_gas");
    const std::size_t d = updates.front().momentum.size();
    if (p < 1 || static_cast<std::size_t>(p) > d) throw DimensionError("agg_gas: invalid chunk count");
    if (base.kind == AggKind::gas || base.kind == AggKind::cc)
        throw ConfigError("agg_gas: unsupported base aggregator");

    ParamVector out(d, 0.0);
    const std::size_t base_len = d / p;
    const std::size_t extra = d % p;
    std::size_t off = 0;
    std::vector<ClientUpdate> chunk(updates.size());
    for (int c = 0; c < p; ++c) {
        const std::size_t len = base_len + (static_cast<std::size_t>(c) < extra ? 1 : 0);
        for (std::size_t i = 0; i < updates.size(); ++i) {
            chunk[i].client_id = updates[i].client_id;
            chunk[i].momentum.assign(updates[i].momentum.begin() + off,
                                     updates[i].momentum.begin() + off + len);
        }
        const ParamVector part = run_base(chunk, base, base.kind, selected);
        std::copy(part.begin(), part.end(), out.begin() + off);
        off += len;
    }
    return out;
}

Aggregator::Result Aggregator::aggregate(const std::vector<ClientUpdate>& updates) {
    Result res;
    switch (cfg_.kind) {
        case AggKind::cc: {
            res.value = agg_cc(updates, cc_ref_, cfg_.cc_tau, cfg_.cc_iters);
            cc_ref_ = res.value; // becomes next round's reference
            break;
        }
        case AggKind::gas:
            res.value = agg_gas(updates, cfg_.gas_chunks,
                                [&] {
                                    AggregatorConfig b = cfg_;
                                    b.kind = cfg_.gas_base;
                                    return b;
                                }(),
                                &res.selected_ids);
            break;
        default: res.value = run_base(updates, cfg_, cfg_.kind, &res.selected_ids); break;
    }
    return res;
}

AggKind agg_kind_from_string(std::string_view s) {
    if (s == "mean") return AggKind::mean;
    if (s == "krum") return AggKind::krum;
    if (s == "multikrum") return AggKind::multikrum;
    if (s == "bulyan") return AggKind::bulyan;
    if (s == "cc") return AggKind::cc;
    if (s == "cm") return AggKind::cm;
    if (s == "tm") return AggKind::tm;
    if (s == "rfa") return AggKind::rfa;
    if (s == "signsgd") return AggKind::signsgd;
    if (s == "gas") return AggKind::gas;
    throw ConfigError("unknown aggregator kind: " + std::string(s));
}

std::string agg_kind_to_string(AggKind k) {
    switch (k) {
        case AggKind::mean: return "mean";
        case AggKind::krum: return "krum";
        case AggKind::multikrum: return "multikrum";
        case AggKind::bulyan: return "bulyan";
        case AggKind::cc: return "cc";
        case AggKind::cm: return "cm";
        case AggKind::tm: return "tm";
        case AggKind::rfa: return "rfa";
        case AggKind::signsgd: return "signsgd";
        case AggKind::gas: return "gas";
    }
    return "mean";
}

} // namespace fedsim
