#ifndef FEDSIM_SIM_HPP
#define FEDSIM_SIM_HPP

#include <functional>
#include <memory>
#include <optional>
#include <vector>

#include "fedsim/aggregate.hpp"
#include "fedsim/attack.hpp"
#include "fedsim/data.hpp"
#include "fedsim/model.hpp"
#include "fedsim/prune.hpp"

namespace fedsim {

struct LrSchedule {
    double initial = 0.1;
    double decay_factor = 0.1;
    double decay_at_fraction = 0.75; // of total rounds
};

struct DataConfig {
    enum class Source { synthetic, idx };
    enum class Scheme { iid, dirichlet };

    Source source = Source::synthetic;
    std::string train_images, train_labels, test_images, test_labels;
    int blob_classes = 10;
    int blob_per_class = 200;
    int blob_test_per_class = 50;
    double blob_spread = 0.3;
    double blob_contrast = 1.0;
    // Fraction of train labels reassigned uniformly at random. Keeps client
    // gradient variance alive after the blobs are fit; the test set is clean.
    double blob_label_noise = 0.0;
    Scheme partition = Scheme::iid;
    double alpha = 1.0;
};

struct ExperimentConfig {
    ModelSpec model;
    DataConfig data;
    int clients = 25;        // k
    int byzantine = 5;       // k_m actually controlled by the adversary
    double momentum = 0.9;   // beta
    int epochs = 5;
    int batch_size = 32;
    LrSchedule lr;
    double signsgd_lr = 0.01; // SignSGD trains with its own rate
    AggregatorConfig agg;
    AttackConfig attack;
    std::shared_ptr<const SparseMask> attack_mask; // hybrid_sparse, if preloaded
    std::uint64_t seed = 0;
    int threads = 1;

    void validate() const;
};

struct RoundMetrics {
    int round = 0; // 1-based
    int epoch = 0; // 0-based epoch the round belongs to
    std::optional<double> train_loss;
    std::optional<double> test_acc;
    std::optional<double> escape_cm;
    std::optional<double> escape_tm;
    std::optional<double> byz_selected_frac;
    std::optional<double> drift_norm;
    std::optional<double> angle_deg;
    std::optional<double> temporal_cos;
};

enum class RunStatus { completed, diverged };

struct RunResult {
    std::vector<RoundMetrics> metrics;
    RunStatus status = RunStatus::completed;
    Model final_model;
    ParamVector last_aggregate;
    std::vector<ParamVector> final_momenta; // what each client slot last sent
    double final_test_accuracy = 0.0;
    int rounds_per_epoch = 0;
};

// Full loop: benign momentum clients, Byzantine substitution, robust
// aggregation, lr schedule, per-round diagnostics. Deterministic for a given
// config and seed at any thread count. on_round, when set, sees each metrics
// row as soon as it is final.
using RoundCallback = std::function<void(const RoundMetrics&)>;
RunResult run_experiment(const ExperimentConfig& cfg);
RunResult run_experiment(const ExperimentConfig& cfg, const Dataset& train, const Dataset& test,
                         const RoundCallback& on_round = {});

// Fraction of coordinates where the aggregate equals the Byzantine value
// within 1e-12.
double escape_ratio_cm(std::span<const double> byz, std::span<const double> aggregate);

// Fraction of coordinates where the Byzantine value's sorted rank falls
// inside the trimmed window [k_m, k - k_m); duplicates survive if any copy
// does.
double escape_ratio_tm(const ParamVector& byz, const std::vector<ClientUpdate>& updates, int k_m);

struct DriftMetrics {
    double norm = 0.0;
    std::optional<double> angle_deg;
    std::optional<double> temporal_cos;
    ParamVector effective; // clipped drift, threaded to the next round
};

// drift = byz - ref, clipped to tau; angle against ref and cosine against the
// previous effective perturbation (absent for zero vectors).
DriftMetrics reference_drift_metrics(std::span<const double> byz, std::span<const double> ref,
                                     double tau, const std::optional<ParamVector>& prev_effective);

// Datasets described by a DataConfig (blob fixtures or IDX files).
std::pair<Dataset, Dataset> build_datasets(const ExperimentConfig& cfg);

} // namespace fedsim

#endif
