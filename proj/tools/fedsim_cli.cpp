#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "fedsim/config.hpp"
#include "fedsim/errors.hpp"
#include "fedsim/report.hpp"
#include "fedsim/rng.hpp"
#include "fedsim/sim.hpp"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitDiverged = 4;
constexpr int kExitInfeasible = 5;
constexpr const char* kArtifactVersion = "1.0.0";

std::string iso_now() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t tt = std::chrono::system_clock::to_time_t(now);
    char buf[32];
    std::tm tm{};
    gmtime_r(&tt, &tm);
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

std::string hash_hex(std::uint64_t h) {
    char buf[24];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

int cmd_run(const std::string& config_path, const std::string& out_path, long long seed_override,
            int threads_override) {
    fedsim::KeyValues kv;
    fedsim::ResolvedConfig rc;
    try {
        kv = fedsim::parse_config_file(config_path);
        if (seed_override >= 0) kv["run.seed"] = std::to_string(seed_override);
        if (threads_override > 0) kv["run.threads"] = std::to_string(threads_override);
        rc = fedsim::resolve_config(kv);
    } catch (const fedsim::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const fedsim::DimensionError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    }

    const std::string started = iso_now();
    fedsim::Dataset train, test;
    try {
        std::tie(train, test) = fedsim::build_datasets(rc.experiment);
    } catch (const fedsim::DataError& e) {
        std::cerr << "dataset error: " << e.what() << "\n";
        return kExitData;
    }

    std::ofstream csv(out_path, std::ios::trunc);
    if (!csv) {
        std::cerr << "config error: cannot write " << out_path << "\n";
        return kExitConfig;
    }
    csv << fedsim::metrics_csv_header() << "\n";
    csv.flush();

    fedsim::RunResult result;
    try {
        result = fedsim::run_experiment(rc.experiment, train, test,
                                        [&](const fedsim::RoundMetrics& rm) {
                                            csv << fedsim::metrics_csv_row(rm) << "\n";
                                            csv.flush();
                                        });
    } catch (const fedsim::DataError& e) {
        std::cerr << "dataset error: " << e.what() << "\n";
        return kExitData;
    } catch (const std::exception& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    }

    nlohmann::json manifest;
    manifest["artifact_version"] = kArtifactVersion;
    manifest["config_path"] = config_path;
    manifest["config_hash"] = hash_hex(fedsim::config_hash(rc.resolved));
    manifest["seed"] = rc.experiment.seed;
    manifest["outputs"] = {out_path};
    manifest["started"] = started;
    manifest["finished"] = iso_now();
    manifest["status"] =
        result.status == fedsim::RunStatus::completed ? "completed" : "diverged";
    manifest["final_test_accuracy"] = result.final_test_accuracy;
    manifest["rounds_per_epoch"] = result.rounds_per_epoch;
    std::ofstream mout(out_path + ".manifest.json");
    mout << manifest.dump(2) << "\n";

    std::cout << "rounds: " << result.metrics.size() << "  final test accuracy: "
              << result.final_test_accuracy
              << (result.status == fedsim::RunStatus::diverged ? "  (diverged)" : "") << "\n";
    return result.status == fedsim::RunStatus::diverged ? kExitDiverged : 0;
}

fedsim::Dataset mask_dataset(const std::string& data_arg, const fedsim::ModelSpec& spec,
                             std::uint64_t seed) {
    if (data_arg.empty() || data_arg == "synthetic")
        return fedsim::synthetic_blobs(spec.num_classes, 200, spec.input_dim(), 0.3,
                                       fedsim::derive_seed(seed, 0x7237));
    namespace fs = std::filesystem;
    auto find_idx = [&](const std::string& stem) -> std::string {
        for (const char* suffix : {"", ".gz"}) {
            const fs::path p = fs::path(data_arg) / (stem + suffix);
            if (fs::exists(p)) return p.string();
        }
        throw fedsim::DataError(fedsim::DataError::Kind::io,
                                "no " + stem + " under " + data_arg);
    };
    return fedsim::load_idx(find_idx("train-images-idx3-ubyte"), find_idx("train-labels-idx1-ubyte"));
}

int cmd_make_mask(const std::string& method, double delta, bool critical, double fc_cap,
                  const std::string& model_arg, int hidden, int conv1, int conv2, int rows,
                  int cols, int classes, const std::string& data_arg, int steps,
                  std::uint64_t seed, const std::string& out_path) {
    try {
        fedsim::ModelSpec spec;
        spec.arch = fedsim::arch_from_string(model_arg);
        spec.hidden = hidden;
        spec.conv1_channels = conv1;
        spec.conv2_channels = conv2;
        spec.input_rows = rows;
        spec.input_cols = cols;
        spec.num_classes = classes;
        const fedsim::Model model = fedsim::init_model(spec, seed);

        fedsim::MaskPolicy policy;
        policy.method = fedsim::mask_method_from_string(method);
        policy.delta = delta;
        policy.critical_layers = critical;
        policy.seed = seed;
        policy.force_steps = steps;
        if (fc_cap > 0.0) {
            for (auto it = model.layout.segments.rbegin(); it != model.layout.segments.rend(); ++it) {
                if (it->kind == fedsim::SegmentKind::fully_connected) {
                    policy.caps[it->name] = fc_cap;
                    break;
                }
            }
        }

        fedsim::Dataset colluded;
        const fedsim::Dataset* colluded_ptr = nullptr;
        if (policy.method == fedsim::MaskMethod::force) {
            colluded = mask_dataset(data_arg, spec, seed);
            colluded_ptr = &colluded;
        }

        const fedsim::SparseMask mask = fedsim::make_mask(model, colluded_ptr, policy);
        fedsim::write_mask(mask, out_path);
        std::cout << fedsim::occupancy_table(mask);
        return 0;
    } catch (const fedsim::InfeasibleError& e) {
        std::cerr << "infeasible: " << e.what() << "\n";
        return kExitInfeasible;
    } catch (const fedsim::DataError& e) {
        std::cerr << "dataset error: " << e.what() << "\n";
        return kExitData;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitConfig;
    }
}

int cmd_plot(const std::vector<std::string>& inputs, const std::string& metric,
             const std::string& out_path) {
    try {
        std::vector<fedsim::PlotSeries> series;
        for (const auto& path : inputs) {
            std::ifstream in(path);
            if (!in) throw fedsim::ConfigError("cannot open " + path);
            std::ostringstream buf;
            buf << in.rdbuf();
            fedsim::PlotSeries s;
            s.label = std::filesystem::path(path).stem().string();
            s.points = fedsim::csv_metric_series(buf.str(), metric);
            series.push_back(std::move(s));
        }
        std::ofstream out(out_path, std::ios::trunc);
        if (!out) throw fedsim::ConfigError("cannot write " + out_path);
        out << fedsim::render_svg(series, "epoch", metric);
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitConfig;
    }
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Byzantine-robust federated learning simulator"};
    app.require_subcommand(1);

    std::string config_path, out_path = "metrics.csv";
    long long seed_override = -1;
    int threads_override = 0;
    auto* run = app.add_subcommand("run", "Run an experiment from a config file");
    run->add_option("--config", config_path, "experiment config file")->required();
    run->add_option("--out", out_path, "metrics CSV output path");
    run->add_option("--seed", seed_override, "override run.seed");
    run->add_option("--threads", threads_override, "override run.threads");

    std::string method = "random", model_arg = "mlp2", data_arg, mask_out = "mask.sbmk";
    double delta = 0.005, fc_cap = 0.0;
    bool critical = false;
    int steps = 10, hidden = 64, conv1 = 16, conv2 = 32, rows = 28, cols = 28, classes = 10;
    std::uint64_t mask_seed = 0;
    auto* mk = app.add_subcommand("make-mask", "Generate a sparse attack mask");
    mk->add_option("--method", method, "random | random-layer | erk | force");
    mk->add_option("--delta", delta, "target ones fraction over weights")->required();
    mk->add_option("--critical", critical, "force critical layers to all-ones");
    mk->add_option("--fc-cap", fc_cap, "max ones density for the final FC weight segment");
    mk->add_option("--model", model_arg, "mlp2 | cnn2");
    mk->add_option("--hidden", hidden, "mlp2 hidden width");
    mk->add_option("--conv1", conv1, "cnn2 first conv channels");
    mk->add_option("--conv2", conv2, "cnn2 second conv channels");
    mk->add_option("--rows", rows, "input rows");
    mk->add_option("--cols", cols, "input cols");
    mk->add_option("--classes", classes, "class count");
    mk->add_option("--data", data_arg, "force: IDX directory or 'synthetic'");
    mk->add_option("--steps", steps, "force pruning steps");
    mk->add_option("--seed", mask_seed, "mask seed");
    mk->add_option("--out", mask_out, "mask output path");

    std::vector<std::string> plot_inputs;
    std::string plot_metric = "test_acc", plot_out = "plot.svg";
    auto* plot = app.add_subcommand("plot", "Render metric curves from metrics CSVs");
    plot->add_option("--in", plot_inputs, "metrics CSV files")->required()->expected(-1);
    plot->add_option("--metric", plot_metric, "metric column name");
    plot->add_option("--out", plot_out, "SVG output path");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : kExitConfig;
    }

    if (run->parsed()) return cmd_run(config_path, out_path, seed_override, threads_override);
    if (mk->parsed())
        return cmd_make_mask(method, delta, critical, fc_cap, model_arg, hidden, conv1, conv2,
                             rows, cols, classes, data_arg, steps, mask_seed, mask_out);
    if (plot->parsed()) return cmd_plot(plot_inputs, plot_metric, plot_out);
    return kExitConfig;
}
