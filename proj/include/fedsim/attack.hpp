#ifndef FEDSIM_ATTACK_HPP
#define FEDSIM_ATTACK_HPP

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "fedsim/linalg.hpp"

namespace fedsim {

// Index-wise mean and population standard deviation of the benign momenta:
// the side information the adversary works from.
struct BenignStats {
    ParamVector mean;
    ParamVector std;
    int count = 0;
};

enum class AttackKind { none, bitflip, labelflip, alie, ipm, minmax, minsum, hybrid_sparse };
enum class Z1Policy { fixed, minsum_adaptive };

struct AttackConfig {
    AttackKind kind = AttackKind::none;
    double ipm_z = 0.4;
    double alie_z = -1.0;       // < 0 means use compute_z_max(k, k_m)
    Z1Policy z1_policy = Z1Policy::fixed;
    double z1 = -1.0;           // hybrid dense scale; < 0 means z_max
    double z2 = 1.5;            // hybrid aggressive scale
    double z_hi = 20.0;         // adaptive search upper bound
    double search_tol = 1e-3;   // adaptive bisection tolerance
    bool perturb_minus = true;  // subtract z*sigma (default) vs add
    std::string mask_path;      // hybrid_sparse: SBMK mask file
};

BenignStats benign_stats(const std::vector<ParamVector>& benign_updates);

// Inverse standard normal CDF, |error| <= 1e-8 on (0, 1).
double std_normal_inv_cdf(double p);

struct ZMax {
    double z = 0.0;
    bool degenerate = false; // quantile <= 0.5, so z <= 0
    int supporters = 0;
    double quantile = 0.0;
};

// s = floor(k/2 + 1) - k_m supporters; z = Phi^-1((k - k_m - s)/(k - k_m)).
ZMax compute_z_max(int k, int k_m);

// mean - z * std (or + when minus = false). All Byzantines send this vector.
ParamVector attack_alie(const BenignStats& stats, double z, bool minus = true);

// -z * mean.
ParamVector attack_ipm(const BenignStats& stats, double z);

// Elementwise negation of the client's own honest gradient.
ParamVector attack_bitflip(const ParamVector& own_gradient);

enum class MinOptMode { max, sum };

struct MinOptResult {
    double z = 0.0;
    ParamVector poisoned;
    bool degenerate = false;
};

// Largest z in [0, z_hi] such that mean - z*std stays within the benign
// distance envelope (max pairwise norm for `max`, max per-client sum of
// squared norms for `sum`). Bisection to tolerance tol.
MinOptResult attack_min_opt(const BenignStats& stats, const std::vector<ParamVector>& benign,
                            MinOptMode mode, double z_hi, double tol);

// mean - (z1*(1-c) + z2*c) .* std over the given mask bits.
ParamVector attack_hybrid_sparse(const BenignStats& stats, std::span<const std::uint8_t> mask_bits,
                                 double z1, double z2, bool minus = true);

// Largest z1 <= z1_cap for which the hybrid perturbation with fixed z2 still
// satisfies the Min-Sum envelope; 0 when infeasible.
double hybrid_z1_adaptive(const BenignStats& stats, const std::vector<ParamVector>& benign,
                          std::span<const std::uint8_t> mask_bits, double z2, double z1_cap,
                          double tol);

AttackKind attack_kind_from_string(std::string_view s);
std::string attack_kind_to_string(AttackKind k);

} // namespace fedsim

#endif
