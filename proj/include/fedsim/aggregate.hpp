#ifndef FEDSIM_AGGREGATE_HPP
#define FEDSIM_AGGREGATE_HPP

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "fedsim/linalg.hpp"

namespace fedsim {

struct ClientUpdate {
    int client_id = 0;
    ParamVector momentum;
};

enum class AggKind { mean, krum, multikrum, bulyan, cc, cm, tm, rfa, signsgd, gas };

struct AggregatorConfig {
    AggKind kind = AggKind::mean;
    int byzantine_count = -1;     // k_m the rule assumes; -1 = the run's k_m
    int neighborhood = -1;        // Krum |S*|; -1 means k - k_m - 2
    int multikrum_select = -1;    // -1 means k - k_m
    double cc_tau = 1.0;
    int cc_iters = 1;
    double rfa_eps = 1e-8;
    int rfa_max_iters = 100;
    double rfa_tol = 1e-6;
    int gas_chunks = 1;
    AggKind gas_base = AggKind::multikrum;
};

// Per-client sum of squared distances to the `neighborhood` nearest other
// updates.
std::vector<double> krum_scores(const std::vector<ClientUpdate>& updates, int neighborhood);

ParamVector agg_mean(const std::vector<ClientUpdate>& updates);

// Average of the n_select lowest-score updates; ties broken by client_id.
// n_select = 1 is plain Krum. Appends the chosen ids to `selected` when given.
ParamVector agg_multikrum(const std::vector<ClientUpdate>& updates, int k_m, int n_select,
                          int neighborhood = -1, std::vector<int>* selected = nullptr);

// Iterated Krum selection of k - 2*k_m updates, then per coordinate the mean
// of the values closest to the coordinate median. Requires k >= 4*k_m + 3.
ParamVector agg_bulyan(const std::vector<ClientUpdate>& updates, int k_m,
                       std::vector<int>* selected = nullptr);

// ref + min(1, tau/||m - ref||) (m - ref).
ParamVector clip_to_ball(std::span<const double> m, std::span<const double> ref, double tau);

// Centered clipping: l rounds of clip-and-average starting from `ref`; the
// result is next round's reference.
ParamVector agg_cc(const std::vector<ClientUpdate>& updates, const ParamVector& ref, double tau,
                   int iters);

ParamVector agg_cm(const std::vector<ClientUpdate>& updates);
ParamVector agg_tm(const std::vector<ClientUpdate>& updates, int k_m);

// Smoothed Weiszfeld iteration for the geometric median, started at the mean;
// returns the iterate with the best objective seen.
ParamVector agg_rfa(const std::vector<ClientUpdate>& updates, double eps, int max_iters,
                    double tol);

// sign(sum_i sign(m_i)) with sign(0) = 0.
ParamVector agg_signsgd(const std::vector<ClientUpdate>& updates);

// Splits coordinates into p contiguous chunks (the first d mod p are one
// element longer) and applies `base` independently per chunk.
ParamVector agg_gas(const std::vector<ClientUpdate>& updates, int p, const AggregatorConfig& base,
                    std::vector<int>* selected = nullptr);

// Dispatch facade. Holds the CC reference between rounds; everything else is
// stateless, so distinct instances may run concurrently.
class Aggregator {
public:
    explicit Aggregator(AggregatorConfig cfg) : cfg_(cfg) {}

    struct Result {
        ParamVector value;
        // Client ids picked by selection-based rules (Krum family, Bulyan,
        // GAS chunks with such bases); empty for the others.
        std::vector<int> selected_ids;
    };

    Result aggregate(const std::vector<ClientUpdate>& updates);

    const AggregatorConfig& config() const { return cfg_; }
    const ParamVector& cc_reference() const { return cc_ref_; }

private:
    AggregatorConfig cfg_;
    ParamVector cc_ref_;
};

AggKind agg_kind_from_string(std::string_view s);
std::string agg_kind_to_string(AggKind k);

} // namespace fedsim

#endif
