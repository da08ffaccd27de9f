#include "fedsim/prune.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "fedsim/errors.hpp"
#include "fedsim/rng.hpp"

namespace fedsim {

std::size_t SparseMask::ones() const {
    std::size_t n = 0;
    for (std::uint8_t b : bits) n += b;
    return n;
}

void SparseMask::recompute_stats() {
    const std::size_t d = layout.dim();
    if (bits.size() != d) throw DimensionError("mask: bits/layout dimension mismatch");
    delta = static_cast<double>(ones()) / static_cast<double>(d);
    per_layer.assign(layout.segments.size(), 0.0);
    for (std::size_t s = 0; s < layout.segments.size(); ++s) {
        const auto& seg = layout.segments[s];
        std::size_t n = 0;
        for (std::size_t i = 0; i < seg.length; ++i) n += bits[seg.offset + i];
        per_layer[s] = static_cast<double>(n) / static_cast<double>(seg.length);
    }
}

namespace {

SparseMask empty_mask(const LayerLayout& layout) {
    SparseMask m;
    m.layout = layout;
    m.bits.assign(layout.dim(), 0);
    return m;
}

std::size_t round_count(double x) { return static_cast<std::size_t>(std::llround(x)); }

// Picks `count` coordinates uniformly from `pool` (seeded partial shuffle).
void select_uniform(std::vector<std::size_t>& pool, std::size_t count, Rng& rng,
                    std::vector<std::uint8_t>& bits) {
    count = std::min(count, pool.size());
    for (std::size_t i = 0; i < count; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.uniform_index(pool.size() - i));
        std::swap(pool[i], pool[j]);
        bits[pool[i]] = 1;
    }
}

} // namespace

SparseMask mask_random_global(const LayerLayout& layout, double delta, std::uint64_t seed) {
    if (delta < 0.0 || delta > 1.0) throw DimensionError("mask_random_global: delta out of range");
    SparseMask m = empty_mask(layout);
    std::vector<std::size_t> pool;
    for (const auto& seg : layout.segments) {
        if (!seg.is_weight()) continue;
        for (std::size_t i = 0; i < seg.length; ++i) pool.push_back(seg.offset + i);
    }
    Rng rng(derive_seed(seed, 0x3a5c));
    select_uniform(pool, round_count(delta * static_cast<double>(pool.size())), rng, m.bits);
    m.recompute_stats();
    return m;
}

SparseMask mask_random_layerwise(const LayerLayout& layout, double delta, std::uint64_t seed) {
    if (delta < 0.0 || delta > 1.0)
        throw DimensionError("mask_random_layerwise: delta out of range");
    SparseMask m = empty_mask(layout);
    for (std::size_t s = 0; s < layout.segments.size(); ++s) {
        const auto& seg = layout.segments[s];
        if (!seg.is_weight()) continue;
        std::vector<std::size_t> pool(seg.length);
        for (std::size_t i = 0; i < seg.length; ++i) pool[i] = seg.offset + i;
        Rng rng(derive_seed(seed, 0x7a9e, s));
        select_uniform(pool, round_count(delta * static_cast<double>(seg.length)), rng, m.bits);
    }
    m.recompute_stats();
    return m;
}

SparseMask apply_critical_layers(SparseMask mask, const std::vector<std::string>& critical) {
    for (const auto& name : critical) {
        const LayerSegment* seg = mask.layout.find(name);
        if (!seg) throw DimensionError("apply_critical_layers: unknown segment " + name);
        std::fill(mask.bits.begin() + seg->offset, mask.bits.begin() + seg->offset + seg->length,
                  static_cast<std::uint8_t>(1));
    }
    mask.recompute_stats();
    return mask;
}

SparseMask mask_erk(const LayerLayout& layout, double delta, std::uint64_t seed) {
    if (delta <= 0.0 || delta >= 1.0) throw DimensionError("mask_erk: delta must be in (0, 1)");
    SparseMask m = empty_mask(layout);

    struct Seg {
        std::size_t index;
        double factor;
        double len;
        double density = 0.0;
        bool saturated = false;
    };
    std::vector<Seg> segs;
    double d_w = 0.0;
    for (std::size_t s = 0; s < layout.segments.size(); ++s) {
        const auto& seg = layout.segments[s];
        if (!seg.is_weight()) continue;
        const double len = static_cast<double>(seg.length);
        double numer = seg.fan_in + seg.fan_out;
        if (seg.kind == SegmentKind::conv) numer += seg.kernel_rows + seg.kernel_cols;
        segs.push_back({s, numer / len, len});
        d_w += len;
    }
    const std::size_t target = round_count(delta * d_w);

    // Waterfill a single scale so sum(density_l * len_l) hits the budget,
    // saturating any segment that would exceed density 1.
    for (;;) {
        double need = static_cast<double>(target);
        double mass = 0.0;
        for (const auto& s : segs) {
            if (s.saturated)
                need -= s.len;
            else
                mass += s.factor * s.len;
        }
        if (need < 0.0 || (mass == 0.0 && need > 0.5))
            throw InfeasibleError("mask_erk: budget infeasible after clipping");
        const double scale = mass > 0.0 ? need / mass : 0.0;
        bool changed = false;
        for (auto& s : segs) {
            if (s.saturated) continue;
            s.density = scale * s.factor;
            if (s.density > 1.0) {
                s.saturated = true;
                s.density = 1.0;
                changed = true;
            }
        }
        if (!changed) break;
    }

    // Largest-remainder apportionment of the exact budget.
    std::vector<std::size_t> counts(segs.size());
    std::vector<std::pair<double, std::size_t>> rem(segs.size());
    std::size_t assigned = 0;
    for (std::size_t i = 0; i < segs.size(); ++i) {
        const double exact = segs[i].density * segs[i].len;
        counts[i] = static_cast<std::size_t>(exact);
        rem[i] = {exact - static_cast<double>(counts[i]), i};
        assigned += counts[i];
    }
    std::sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });
    for (std::size_t r = 0; assigned < target; ++r) {
        const std::size_t i = rem[r % rem.size()].second;
        if (counts[i] < static_cast<std::size_t>(segs[i].len)) {
            ++counts[i];
            ++assigned;
        }
    }

    for (std::size_t i = 0; i < segs.size(); ++i) {
        const auto& seg = layout.segments[segs[i].index];
        std::vector<std::size_t> pool(seg.length);
        for (std::size_t j = 0; j < seg.length; ++j) pool[j] = seg.offset + j;
        Rng rng(derive_seed(seed, 0xe4c, segs[i].index));
        select_uniform(pool, counts[i], rng, m.bits);
    }
    m.recompute_stats();
    if (m.ones() != target) throw InfeasibleError("mask_erk: budget infeasible after clipping");
    return m;
}

ParamVector snip_saliency(const Model& m, const Dataset& ds, std::span<const std::size_t> batch) {
    const LossGrad lg = loss_and_grad(m, ds, batch);
    ParamVector out(m.params.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::abs(m.params[i] * lg.grad[i]);
    return out;
}

std::size_t sparsity_schedule(std::size_t d, std::size_t kappa, int steps, int t) {
    if (kappa < 1 || kappa > d) throw DimensionError("sparsity_schedule: kappa out of range");
    if (steps < 1 || t < 0 || t > steps) throw DimensionError("sparsity_schedule: t out of range");
    if (t == 0) return d;
    if (t == steps) return kappa;
    const double frac = static_cast<double>(t) / static_cast<double>(steps);
    const double ex = frac * std::log(static_cast<double>(kappa)) +
                      (1.0 - frac) * std::log(static_cast<double>(d));
    const double v = std::exp(ex);
    auto k = static_cast<std::size_t>(std::floor(v + 1e-9));
    return std::clamp(k, kappa, d);
}

namespace {

struct WeightIndex {
    std::vector<std::size_t> coords;        // global coordinate per weight slot
    std::vector<std::size_t> segment_of;    // layout segment index per weight slot
};

WeightIndex build_weight_index(const LayerLayout& layout) {
    WeightIndex w;
    for (std::size_t s = 0; s < layout.segments.size(); ++s) {
        const auto& seg = layout.segments[s];
        if (!seg.is_weight()) continue;
        for (std::size_t i = 0; i < seg.length; ++i) {
            w.coords.push_back(seg.offset + i);
            w.segment_of.push_back(s);
        }
    }
    return w;
}

// Top-k over weight slots subject to per-segment limits; ties go to the
// lower coordinate index. When the limits cannot absorb `count` (early
// schedule steps), the overflow continues into capped segments.
std::vector<std::uint8_t> select_top_capped(const LayerLayout& layout, const WeightIndex& widx,
                                            const ParamVector& saliency, std::size_t count,
                                            const std::vector<std::ptrdiff_t>& limit_of_segment) {
    std::vector<std::size_t> order(widx.coords.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        const double sa = saliency[widx.coords[a]];
        const double sb = saliency[widx.coords[b]];
        if (sa != sb) return sa > sb;
        return widx.coords[a] < widx.coords[b];
    });

    std::vector<std::uint8_t> bits(layout.dim(), 0);
    std::vector<std::ptrdiff_t> used(layout.segments.size(), 0);
    std::vector<std::size_t> skipped;
    std::size_t taken = 0;
    for (std::size_t slot : order) {
        if (taken == count) break;
        const std::size_t seg = widx.segment_of[slot];
        if (limit_of_segment[seg] >= 0 && used[seg] >= limit_of_segment[seg]) {
            skipped.push_back(slot);
            continue;
        }
        bits[widx.coords[slot]] = 1;
        ++used[seg];
        ++taken;
    }
    for (std::size_t i = 0; taken < count && i < skipped.size(); ++i) {
        bits[widx.coords[skipped[i]]] = 1;
        ++taken;
    }
    return bits;
}

} // namespace

SparseMask force_prune_with(const LayerLayout& layout, const SaliencyFn& saliency,
                            int num_clients, std::size_t kappa, int steps,
                            const std::map<std::string, double>& caps) {
    if (steps < 1) throw DimensionError("force_prune: steps must be >= 1");
    if (num_clients < 1) throw DimensionError("force_prune: need at least one client");
    const WeightIndex widx = build_weight_index(layout);
    const std::size_t d_w = widx.coords.size();
    if (kappa < 1 || kappa > d_w) throw DimensionError("force_prune: kappa out of range");

    std::vector<std::ptrdiff_t> limits(layout.segments.size(), -1);
    std::size_t capacity = 0;
    for (std::size_t s = 0; s < layout.segments.size(); ++s) {
        const auto& seg = layout.segments[s];
        if (!seg.is_weight()) continue;
        auto it = caps.find(seg.name);
        if (it != caps.end()) {
            if (it->second <= 0.0 || it->second > 1.0)
                throw DimensionError("force_prune: cap out of range for " + seg.name);
            limits[s] = static_cast<std::ptrdiff_t>(std::floor(it->second * seg.length));
            capacity += static_cast<std::size_t>(limits[s]);
        } else {
            capacity += seg.length;
        }
    }
    for (const auto& [name, cap] : caps)
        if (!layout.find(name)) throw DimensionError("force_prune: unknown capped segment " + name);
    if (kappa > capacity) throw InfeasibleError("force_prune: caps make kappa infeasible");

    std::vector<std::uint8_t> current(layout.dim(), 1); // c_0
    const std::size_t d = layout.dim();
    for (int t = 1; t <= steps; ++t) {
        const std::size_t kappa_t = sparsity_schedule(d_w, kappa, steps, t);
        ParamVector consensus(d, 0.0);
        for (int c = 0; c < num_clients; ++c) {
            const ParamVector s = saliency(current, t, c);
            if (s.size() != d) throw DimensionError("force_prune: saliency dimension mismatch");
            for (std::size_t i = 0; i < d; ++i) consensus[i] += s[i];
        }
        const double inv = 1.0 / static_cast<double>(num_clients);
        for (double& v : consensus) v *= inv;
        current = select_top_capped(layout, widx, consensus, kappa_t, limits);
    }

    SparseMask m;
    m.layout = layout;
    m.bits = std::move(current);
    m.recompute_stats();
    return m;
}

SparseMask force_prune(const Model& m, const Dataset& colluded, int num_clients, int batch_size,
                       std::size_t kappa, int steps, const std::map<std::string, double>& caps,
                       std::uint64_t seed) {
    if (colluded.size() == 0) throw DimensionError("force_prune: empty colluded dataset");
    if (batch_size < 1) throw DimensionError("force_prune: batch size must be >= 1");
    auto saliency = [&](const std::vector<std::uint8_t>& bits, int step, int client) -> ParamVector {
        Rng rng(derive_seed(seed, 0xf02c + static_cast<std::uint64_t>(step), client));
        auto batch = rng.sample_without_replacement(
            colluded.size(), std::min<std::size_t>(batch_size, colluded.size()));
        ParamVector grad = grad_at_masked(m, bits, colluded, batch);
        ParamVector s(grad.size());
        for (std::size_t i = 0; i < s.size(); ++i) s[i] = std::abs(m.params[i] * grad[i]);
        return s;
    };
    return force_prune_with(m.layout, saliency, num_clients, kappa, steps, caps);
}

SparseMask make_mask(const Model& m, const Dataset* colluded, const MaskPolicy& policy) {
    SparseMask mask;
    switch (policy.method) {
        case MaskMethod::random_global:
            mask = mask_random_global(m.layout, policy.delta, policy.seed);
            break;
        case MaskMethod::random_layerwise:
            mask = mask_random_layerwise(m.layout, policy.delta, policy.seed);
            break;
        case MaskMethod::erk: mask = mask_erk(m.layout, policy.delta, policy.seed); break;
        case MaskMethod::force: {
            if (!colluded) throw ConfigError("force mask requires a dataset");
            const std::size_t d_w = m.layout.weight_count();
            const std::size_t kappa =
                std::max<std::size_t>(1, round_count(policy.delta * static_cast<double>(d_w)));
            mask = force_prune(m, *colluded, 5, policy.force_batch_size, kappa, policy.force_steps,
                               policy.caps, policy.seed);
            break;
        }
    }
    if (policy.critical_layers)
        mask = apply_critical_layers(std::move(mask), default_critical_segments(m.layout));
    return mask;
}

std::vector<OccupancyRow> layer_occupancy_report(const SparseMask& mask) {
    std::vector<OccupancyRow> rows;
    for (std::size_t s = 0; s < mask.layout.segments.size(); ++s) {
        const auto& seg = mask.layout.segments[s];
        std::size_t n = 0;
        for (std::size_t i = 0; i < seg.length; ++i) n += mask.bits[seg.offset + i];
        rows.push_back({seg.name, n, static_cast<double>(n) / static_cast<double>(seg.length)});
    }
    return rows;
}

std::string occupancy_table(const SparseMask& mask) {
    std::ostringstream out;
    out << "segment ones length fraction\n";
    for (const auto& row : layer_occupancy_report(mask)) {
        const LayerSegment* seg = mask.layout.find(row.name);
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%.6f", row.fraction);
        out << row.name << ' ' << row.ones << ' ' << seg->length << ' ' << buf << '\n';
    }
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6f", mask.delta);
    out << "total " << mask.ones() << ' ' << mask.layout.dim() << ' ' << buf << '\n';
    return out.str();
}

namespace {

template <typename T>
void write_le(std::ofstream& out, T value) {
    unsigned char bytes[sizeof(T)];
    for (std::size_t i = 0; i < sizeof(T); ++i)
        bytes[i] = static_cast<unsigned char>((value >> (8 * i)) & 0xff);
    out.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T read_le(std::ifstream& in, const std::string& path) {
    unsigned char bytes[sizeof(T)];
    in.read(reinterpret_cast<char*>(bytes), sizeof(T));
    if (!in) throw DataError(DataError::Kind::truncated, "truncated mask file: " + path);
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(bytes[i]) << (8 * i);
    return v;
}

} // namespace

void write_mask(const SparseMask& mask, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError(DataError::Kind::io, "cannot write " + path);
    out.write("SBMK", 4);
    write_le<std::uint32_t>(out, 1);
    write_le<std::uint64_t>(out, mask.bits.size());
    write_le<std::uint64_t>(out, mask.ones());
    for (std::size_t i = 0; i < mask.bits.size(); ++i)
        if (mask.bits[i]) write_le<std::uint64_t>(out, i);
    if (!out) throw DataError(DataError::Kind::io, "write failed: " + path);

    std::ofstream side(path + ".txt");
    side << "segment kind offset length ones fraction\n";
    for (std::size_t s = 0; s < mask.layout.segments.size(); ++s) {
        const auto& seg = mask.layout.segments[s];
        std::size_t n = 0;
        for (std::size_t i = 0; i < seg.length; ++i) n += mask.bits[seg.offset + i];
        const char* kind = seg.kind == SegmentKind::conv
                               ? "conv"
                               : (seg.kind == SegmentKind::bias ? "bias" : "fc");
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%.6f", static_cast<double>(n) / seg.length);
        side << seg.name << ' ' << kind << ' ' << seg.offset << ' ' << seg.length << ' ' << n
             << ' ' << buf << '\n';
    }
}

SparseMask read_mask(const std::string& path, const LayerLayout& layout) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError(DataError::Kind::io, "cannot open " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::string_view(magic, 4) != "SBMK")
        throw DataError(DataError::Kind::bad_magic, "not an SBMK mask file: " + path);
    const auto version = read_le<std::uint32_t>(in, path);
    if (version != 1) throw DataError(DataError::Kind::other, "unsupported mask version: " + path);
    const auto d = read_le<std::uint64_t>(in, path);
    if (d != layout.dim())
        throw DimensionError("read_mask: mask dimension does not match layout");
    const auto ones = read_le<std::uint64_t>(in, path);

    SparseMask m = empty_mask(layout);
    std::uint64_t prev = 0;
    for (std::uint64_t i = 0; i < ones; ++i) {
        const auto idx = read_le<std::uint64_t>(in, path);
        if (idx >= d || (i > 0 && idx <= prev))
            throw DataError(DataError::Kind::other, "corrupt mask index list: " + path);
        m.bits[idx] = 1;
        prev = idx;
    }
    m.recompute_stats();
    return m;
}

MaskMethod mask_method_from_string(std::string_view s) {
    if (s == "random") return MaskMethod::random_global;
    if (s == "random-layer") return MaskMethod::random_layerwise;
    if (s == "erk") return MaskMethod::erk;
    if (s == "force") return MaskMethod::force;
    throw ConfigError("unknown mask method: " + std::string(s));
}

} // namespace fedsim
