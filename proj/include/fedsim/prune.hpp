#ifndef FEDSIM_PRUNE_HPP
#define FEDSIM_PRUNE_HPP

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "fedsim/model.hpp"

namespace fedsim {

// Binary selector over the flat parameter vector. Ones mark the aggressively
// attacked coordinates. Bias segments never receive ones.
struct SparseMask {
    std::vector<std::uint8_t> bits;
    LayerLayout layout;
    double delta = 0.0;              // ones / d
    std::vector<double> per_layer;   // ones fraction per layout segment

    std::size_t ones() const;
    void recompute_stats();
};

enum class MaskMethod { random_global, random_layerwise, erk, force };

struct MaskPolicy {
    MaskMethod method = MaskMethod::random_global;
    double delta = 0.0;
    bool critical_layers = false;                 // force critical segments to all-ones
    std::map<std::string, double> caps;           // per-segment max ones density
    std::uint64_t seed = 0;
    int force_steps = 10;
    int force_batch_size = 32;
};

// Exactly round(delta * weight_count) ones, uniform over weight coordinates.
SparseMask mask_random_global(const LayerLayout& layout, double delta, std::uint64_t seed);

// Exactly round(delta * segment_length) ones per weight segment.
SparseMask mask_random_layerwise(const LayerLayout& layout, double delta, std::uint64_t seed);

// Sets every coordinate of the named segments to one.
SparseMask apply_critical_layers(SparseMask mask, const std::vector<std::string>& critical);

// Erdos-Renyi-Kernel budget split: per-segment density proportional to
// (fan_in + fan_out + kernel dims) / segment length, clipped to 1 with
// iterative redistribution, hitting round(delta * weight_count) ones exactly.
SparseMask mask_erk(const LayerLayout& layout, double delta, std::uint64_t seed = 0);

// |theta .* grad F(theta)| elementwise.
ParamVector snip_saliency(const Model& m, const Dataset& ds, std::span<const std::size_t> batch);

// Exponential decay from kappa_0 = d to kappa_T = kappa:
// floor(exp((t/T) log kappa + (1 - t/T) log d)).
std::size_t sparsity_schedule(std::size_t d, std::size_t kappa, int steps, int t);

// Per-client saliency for a given mask at pruning step `step` (1-based);
// decouples the FORCE selection loop from model evaluation.
using SaliencyFn =
    std::function<ParamVector(const std::vector<std::uint8_t>& mask_bits, int step, int client)>;

// Iterative FORCE pruning: start from the all-ones mask, re-evaluate the
// consensus saliency at each scheduled sparsity level, and keep the top
// weight coordinates subject to per-segment caps (cap-constrained greedy;
// when a step's scheduled count exceeds the capped capacity the overflow
// spills back into capped segments, which only happens at early steps).
SparseMask force_prune_with(const LayerLayout& layout, const SaliencyFn& saliency,
                            int num_clients, std::size_t kappa, int steps,
                            const std::map<std::string, double>& caps);

// Model-backed FORCE: each colluding client draws a fresh seeded mini-batch
// from the colluded dataset per step.
SparseMask force_prune(const Model& m, const Dataset& colluded, int num_clients, int batch_size,
                       std::size_t kappa, int steps, const std::map<std::string, double>& caps,
                       std::uint64_t seed);

SparseMask make_mask(const Model& m, const Dataset* colluded, const MaskPolicy& policy);

struct OccupancyRow {
    std::string name;
    std::size_t ones = 0;
    double fraction = 0.0;
};

std::vector<OccupancyRow> layer_occupancy_report(const SparseMask& mask);
std::string occupancy_table(const SparseMask& mask);

// SBMK binary format (little-endian): "SBMK", u32 version = 1, u64 d,
// u64 ones-count, then ascending u64 coordinate indices. write_mask also
// emits a text sidecar at path + ".txt" with the segment table.
void write_mask(const SparseMask& mask, const std::string& path);
SparseMask read_mask(const std::string& path, const LayerLayout& layout);

MaskMethod mask_method_from_string(std::string_view s);

} // namespace fedsim

#endif
