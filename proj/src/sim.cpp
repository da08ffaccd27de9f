#include "fedsim/sim.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <functional>
#include <limits>
#include <thread>

#include "fedsim/errors.hpp"
#include "fedsim/rng.hpp"

namespace fedsim {

void ExperimentConfig::validate() const {
    model.validate();
    if (clients < 1) throw ConfigError("config: need at least one client");
    if (byzantine < 0 || 2 * byzantine >= clients)
        throw ConfigError("config: requires k_m < k/2");
    if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("config: momentum must be in [0, 1)");
    if (lr.initial <= 0.0) throw ConfigError("config: learning rate must be positive");
    if (epochs < 1) throw ConfigError("config: epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("config: batch size must be >= 1");
    if (threads < 1) throw ConfigError("config: threads must be >= 1");
}

double escape_ratio_cm(std::span<const double> byz, std::span<const double> aggregate) {
    if (byz.size() != aggregate.size()) throw DimensionError("escape_ratio_cm: dimension mismatch");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < byz.size(); ++i)
        if (std::abs(byz[i] - aggregate[i]) <= 1e-12) ++hits;
    return static_cast<double>(hits) / static_cast<double>(byz.size());
}

double escape_ratio_tm(const ParamVector& byz, const std::vector<ClientUpdate>& updates, int k_m) {
    const int k = static_cast<int>(updates.size());
    if (k_m < 0 || k <= 2 * k_m) throw InfeasibleError("escape_ratio_tm: requires k > 2*k_m");
    const std::size_t d = byz.size();
    for (const auto& u : updates)
        if (u.momentum.size() != d) throw DimensionError("escape_ratio_tm: dimension mismatch");
    std::size_t hits = 0;
    for (std::size_t j = 0; j < d; ++j) {
        int less = 0, eq = 0;
        for (const auto& u : updates) {
            if (u.momentum[j] < byz[j])
                ++less;
            else if (u.momentum[j] == byz[j])
                ++eq;
        }
        // Ranks available to the Byzantine copies are [less, less + eq).
        if (less < k - k_m && less + eq > k_m) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(d);
}

DriftMetrics reference_drift_metrics(std::span<const double> byz, std::span<const double> ref,
                                     double tau, const std::optional<ParamVector>& prev_effective) {
    if (byz.size() != ref.size())
        throw DimensionError("reference_drift_metrics: dimension mismatch");
    DriftMetrics out;
    ParamVector drift(byz.size());
    double norm = 0.0;
    for (std::size_t i = 0; i < byz.size(); ++i) {
        drift[i] = byz[i] - ref[i];
        norm += drift[i] * drift[i];
    }
    norm = std::sqrt(norm);
    out.norm = norm;
    out.effective = drift;
    if (norm > tau && norm > 0.0) {
        const double scale = tau / norm;
        for (double& x : out.effective) x *= scale;
    }
    const double eff_norm = norm > tau ? tau : norm;
    double ref_norm = 0.0;
    for (double x : ref) ref_norm += x * x;
    ref_norm = std::sqrt(ref_norm);
    if (eff_norm > 0.0 && ref_norm > 0.0) out.angle_deg = angle_degrees(out.effective, ref);
    if (prev_effective && eff_norm > 0.0) {
        double pn = 0.0;
        for (double x : *prev_effective) pn += x * x;
        if (pn > 0.0) out.temporal_cos = cosine_similarity(out.effective, *prev_effective);
    }
    return out;
}

namespace {

// Minimal thread fan-out over [0, n); results must land in per-index slots.
void parallel_for(int n, int threads, const std::function<void(int)>& body) {
    threads = std::min(threads, n);
    if (threads <= 1) {
        for (int i = 0; i < n; ++i) body(i);
        return;
    }
    std::vector<std::thread> pool;
    std::atomic<int> next{0};
    for (int t = 0; t < threads; ++t) {
        pool.emplace_back([&] {
            for (;;) {
                const int i = next.fetch_add(1);
                if (i >= n) return;
                body(i);
            }
        });
    }
    for (auto& th : pool) th.join();
}

// Copies one mini-batch into a scratch dataset, optionally flipping labels.
Dataset scratch_batch(const Dataset& ds, std::span<const std::size_t> indices, bool flip) {
    Dataset out;
    out.input_dim = ds.input_dim;
    out.num_classes = ds.num_classes;
    out.inputs.resize(indices.size() * static_cast<std::size_t>(ds.input_dim));
    out.labels.resize(indices.size());
    for (std::size_t i = 0; i < indices.size(); ++i) {
        const auto src = ds.input(indices[i]);
        std::copy(src.begin(), src.end(), out.inputs.begin() + i * ds.input_dim);
        out.labels[i] = flip ? flip_label(ds.labels[indices[i]], ds.num_classes) : ds.labels[indices[i]];
    }
    return out;
}

bool is_omniscient(AttackKind k) {
    return k == AttackKind::alie || k == AttackKind::ipm || k == AttackKind::minmax ||
           k == AttackKind::minsum || k == AttackKind::hybrid_sparse;
}

} // namespace

std::pair<Dataset, Dataset> build_datasets(const ExperimentConfig& cfg) {
    if (cfg.data.source == DataConfig::Source::idx) {
        Dataset train = load_idx(cfg.data.train_images, cfg.data.train_labels);
        Dataset test = load_idx(cfg.data.test_images, cfg.data.test_labels);
        return {std::move(train), std::move(test)};
    }
    const int dim = cfg.model.input_dim();
    Dataset train = synthetic_blobs(cfg.data.blob_classes, cfg.data.blob_per_class, dim,
                                    cfg.data.blob_spread, derive_seed(cfg.seed, 0x7237),
                                    cfg.data.blob_contrast);
    if (cfg.data.blob_label_noise > 0.0) {
        Rng rng(derive_seed(cfg.seed, 0x401e));
        for (auto& y : train.labels) {
            if (rng.uniform() < cfg.data.blob_label_noise)
                y = static_cast<int>(rng.uniform_index(train.num_classes));
        }
    }
    Dataset test = synthetic_blobs(cfg.data.blob_classes, cfg.data.blob_test_per_class, dim,
                                   cfg.data.blob_spread, derive_seed(cfg.seed, 0x7e57),
                                   cfg.data.blob_contrast);
    return {std::move(train), std::move(test)};
}

RunResult run_experiment(const ExperimentConfig& cfg) {
    const auto [train, test] = build_datasets(cfg);
    return run_experiment(cfg, train, test);
}

RunResult run_experiment(const ExperimentConfig& cfg, const Dataset& train, const Dataset& test,
                         const RoundCallback& on_round) {
    cfg.validate();
    train.validate();
    test.validate();
    if (train.num_classes != cfg.model.num_classes)
        throw ConfigError("config: dataset classes do not match the model");

    const int k = cfg.clients;
    const int k_m = cfg.byzantine;

    const Partition part =
        cfg.data.partition == DataConfig::Scheme::iid
            ? partition_iid(train, k, derive_seed(cfg.seed, 0x9a27))
            : partition_dirichlet(train, k, cfg.data.alpha, derive_seed(cfg.seed, 0x9a27));

    Model model = init_model(cfg.model, derive_seed(cfg.seed, 0x10de1));
    const std::size_t d = model.params.size();

    // Attack setup. Scale defaults come from the ALIE z_max rule.
    double z_max = 0.0;
    if (k_m > 0) {
        const ZMax zm = compute_z_max(k, k_m);
        z_max = std::max(0.0, zm.z); // degenerate small-k cases fall back to 0
    }
    const double alie_z = cfg.attack.alie_z >= 0.0 ? cfg.attack.alie_z : z_max;
    const double hybrid_z1 = cfg.attack.z1 >= 0.0 ? cfg.attack.z1 : z_max;

    std::shared_ptr<const SparseMask> mask = cfg.attack_mask;
    if (cfg.attack.kind == AttackKind::hybrid_sparse) {
        if (!mask) {
            if (cfg.attack.mask_path.empty())
                throw ConfigError("hybrid_sparse attack requires a mask");
            mask = std::make_shared<SparseMask>(read_mask(cfg.attack.mask_path, model.layout));
        }
        if (mask->bits.size() != d) throw DimensionError("attack mask dimension mismatch");
    }

    Aggregator aggregator([&] {
        AggregatorConfig a = cfg.agg;
        if (a.byzantine_count < 0) a.byzantine_count = k_m;
        return a;
    }());

    const int rounds_per_epoch = static_cast<int>(std::max<std::size_t>(
        1, (train.size() / k + cfg.batch_size - 1) / cfg.batch_size));
    const int total_rounds = cfg.epochs * rounds_per_epoch;
    const int decay_round =
        static_cast<int>(std::floor(cfg.lr.decay_at_fraction * total_rounds));
    const double base_lr =
        cfg.agg.kind == AggKind::signsgd ? cfg.signsgd_lr : cfg.lr.initial;

    std::vector<ParamVector> momenta(k, ParamVector(d, 0.0));
    std::vector<Rng> batch_rng;
    batch_rng.reserve(k);
    for (int i = 0; i < k; ++i) batch_rng.emplace_back(derive_seed(cfg.seed, 0xba7c, i));

    RunResult res;
    res.rounds_per_epoch = rounds_per_epoch;
    ParamVector prev_aggregate(d, 0.0);
    std::optional<ParamVector> prev_effective;

    const bool flip_style =
        cfg.attack.kind == AttackKind::bitflip || cfg.attack.kind == AttackKind::labelflip;
    const bool omniscient = is_omniscient(cfg.attack.kind);

    auto record_diverged_tail = [&](int from_round) {
        res.status = RunStatus::diverged;
        const double chance = 1.0 / static_cast<double>(cfg.model.num_classes);
        for (int t = from_round; t <= total_rounds; ++t) {
            if (t % rounds_per_epoch != 0) continue;
            RoundMetrics rm;
            rm.round = t;
            rm.epoch = (t - 1) / rounds_per_epoch;
            rm.test_acc = chance;
            if (on_round) on_round(rm);
            res.metrics.push_back(rm);
            res.final_test_accuracy = chance;
        }
    };

    int t = 1;
    for (; t <= total_rounds; ++t) {
        if (!all_finite(model.params)) break;

        const double lr = t > decay_round ? base_lr * cfg.lr.decay_factor : base_lr;

        // Client side. Benign clients and data-level attackers run local
        // momentum SGD; each writes only its own slot.
        std::vector<double> losses(k, 0.0);
        auto client_step = [&](int i) {
            const bool byz = i < k_m;
            if (byz && !flip_style && cfg.attack.kind != AttackKind::none) return;
            const auto& own = part.assignments[i];
            const std::size_t take = std::min<std::size_t>(cfg.batch_size, own.size());
            auto local = batch_rng[i].sample_without_replacement(own.size(), take);
            std::vector<std::size_t> batch(local.size());
            for (std::size_t b = 0; b < local.size(); ++b) batch[b] = own[local[b]];

            LossGrad lg;
            if (byz && cfg.attack.kind == AttackKind::labelflip) {
                const Dataset scratch = scratch_batch(train, batch, true);
                std::vector<std::size_t> all(scratch.size());
                for (std::size_t b = 0; b < all.size(); ++b) all[b] = b;
                lg = eval_at(model.spec, model.params, scratch, all, true);
            } else {
                lg = loss_and_grad(model, train, batch);
            }
            if (byz && cfg.attack.kind == AttackKind::bitflip) lg.grad = attack_bitflip(lg.grad);

            ParamVector& m = momenta[i];
            for (std::size_t j = 0; j < d; ++j)
                m[j] = (1.0 - cfg.momentum) * lg.grad[j] + cfg.momentum * m[j];
            losses[i] = lg.loss;
        };
        parallel_for(k, cfg.threads, client_step);

        // Adversary side: omniscient attacks see this round's benign momenta.
        ParamVector attack_vector;
        if (k_m > 0 && omniscient) {
            std::vector<ParamVector> benign(momenta.begin() + k_m, momenta.end());
            const BenignStats stats = benign_stats(benign);
            switch (cfg.attack.kind) {
                case AttackKind::alie:
                    attack_vector = attack_alie(stats, alie_z, cfg.attack.perturb_minus);
                    break;
                case AttackKind::ipm: attack_vector = attack_ipm(stats, cfg.attack.ipm_z); break;
                case AttackKind::minmax:
                    attack_vector = attack_min_opt(stats, benign, MinOptMode::max, cfg.attack.z_hi,
                                                   cfg.attack.search_tol)
                                        .poisoned;
                    break;
                case AttackKind::minsum:
                    attack_vector = attack_min_opt(stats, benign, MinOptMode::sum, cfg.attack.z_hi,
                                                   cfg.attack.search_tol)
                                        .poisoned;
                    break;
                case AttackKind::hybrid_sparse: {
                    double z1 = hybrid_z1;
                    if (cfg.attack.z1_policy == Z1Policy::minsum_adaptive)
                        z1 = hybrid_z1_adaptive(stats, benign, mask->bits, cfg.attack.z2,
                                                cfg.attack.z_hi, cfg.attack.search_tol);
                    attack_vector = attack_hybrid_sparse(stats, mask->bits, z1, cfg.attack.z2,
                                                         cfg.attack.perturb_minus);
                    break;
                }
                default: break;
            }
            for (int i = 0; i < k_m; ++i) momenta[i] = attack_vector;
        }

        std::vector<ClientUpdate> updates(k);
        for (int i = 0; i < k; ++i) updates[i] = {i, momenta[i]};
        bool finite = true;
        for (const auto& u : updates)
            if (!all_finite(u.momentum)) finite = false;
        if (!finite) break;

        Aggregator::Result agg;
        try {
            agg = aggregator.aggregate(updates);
        } catch (const InfeasibleError& e) {
            throw InfeasibleError(std::string(e.what()) + " (round " + std::to_string(t) + ")");
        }
        if (!all_finite(agg.value)) break;

        RoundMetrics rm;
        rm.round = t;
        rm.epoch = (t - 1) / rounds_per_epoch;
        double loss_acc = 0.0;
        for (int i = k_m; i < k; ++i) loss_acc += losses[i];
        rm.train_loss = loss_acc / static_cast<double>(k - k_m);
        if (!std::isfinite(*rm.train_loss)) break;

        if (k_m > 0) {
            const ParamVector& byz_vec = omniscient ? attack_vector : momenta[0];
            rm.escape_cm = escape_ratio_cm(byz_vec, agg.value);
            if (k > 2 * k_m) rm.escape_tm = escape_ratio_tm(byz_vec, updates, k_m);
            const DriftMetrics dm =
                reference_drift_metrics(byz_vec, prev_aggregate, cfg.agg.cc_tau, prev_effective);
            rm.drift_norm = dm.norm;
            rm.angle_deg = dm.angle_deg;
            rm.temporal_cos = dm.temporal_cos;
            prev_effective = dm.effective;
            if (!agg.selected_ids.empty()) {
                int hit = 0;
                for (int id : agg.selected_ids)
                    if (id < k_m) ++hit;
                rm.byz_selected_frac =
                    static_cast<double>(hit) / static_cast<double>(agg.selected_ids.size());
            }
        }

        model = apply_update(model, agg.value, lr);
        prev_aggregate = agg.value;
        res.last_aggregate = agg.value;

        if (t % rounds_per_epoch == 0) {
            rm.test_acc = accuracy(model, test);
            res.final_test_accuracy = *rm.test_acc;
        }
        if (on_round) on_round(rm);
        res.metrics.push_back(rm);
    }

    if (t <= total_rounds) record_diverged_tail(t);
    res.final_model = std::move(model);
    res.final_momenta = std::move(momenta);
    return res;
}

} // namespace fedsim
