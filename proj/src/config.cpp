#include "fedsim/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "fedsim/errors.hpp"

namespace fedsim {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

int parse_int(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const int x = std::stoi(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw ConfigError("config: bad integer for " + key + ": '" + v + "'");
    }
}

double parse_dbl(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const double x = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw ConfigError("config: bad number for " + key + ": '" + v + "'");
    }
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const unsigned long long x = std::stoull(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw ConfigError("config: bad seed for " + key + ": '" + v + "'");
    }
}

} // namespace

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    // Prefer the shortest representation that round-trips.
    for (int prec = 1; prec < 17; ++prec) {
        char shorter[64];
        std::snprintf(shorter, sizeof(shorter), "%.*g", prec, v);
        double back = 0.0;
        std::sscanf(shorter, "%lf", &back);
        if (back == v) return shorter;
    }
    return buf;
}

KeyValues parse_config_text(const std::string& text) {
    KeyValues kv;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config: line " + std::to_string(lineno) + " is not 'key = value'");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty()) throw ConfigError("config: empty key at line " + std::to_string(lineno));
        kv[key] = value;
    }
    return kv;
}

KeyValues parse_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_config_text(buf.str());
}

ResolvedConfig resolve_config(const KeyValues& kv) {
    // Defaults mirror the standard experiment: 25 clients, 5 Byzantine,
    // beta 0.9, batch 32, lr 0.1 decayed x0.1 at 75%, tau 1, one clip pass,
    // IPM z 0.4, Dirichlet alpha 1, 100 GAS chunks.
    KeyValues out = {
        {"model.arch", "mlp2"},
        {"model.input_rows", "28"},
        {"model.input_cols", "28"},
        {"model.input_channels", "1"},
        {"model.classes", "10"},
        {"model.hidden", "64"},
        {"model.conv1", "16"},
        {"model.conv2", "32"},
        {"data.source", "synthetic"},
        {"data.train_images", ""},
        {"data.train_labels", ""},
        {"data.test_images", ""},
        {"data.test_labels", ""},
        {"data.blob_classes", "10"},
        {"data.blob_per_class", "200"},
        {"data.blob_test_per_class", "50"},
        {"data.blob_spread", "0.3"},
        {"data.partition", "iid"},
        {"data.alpha", "1"},
        {"run.clients", "25"},
        {"run.byzantine", "5"},
        {"run.momentum", "0.9"},
        {"run.epochs", "5"},
        {"run.batch", "32"},
        {"run.lr", "0.1"},
        {"run.lr_decay", "0.1"},
        {"run.lr_decay_at", "0.75"},
        {"run.seed", "0"},
        {"run.threads", "1"},
        {"agg.kind", "mean"},
        {"agg.km", "-1"},
        {"agg.neighborhood", "-1"},
        {"agg.select", "-1"},
        {"agg.tau", "1"},
        {"agg.clip_iters", "1"},
        {"agg.rfa_eps", "1e-08"},
        {"agg.rfa_iters", "100"},
        {"agg.rfa_tol", "1e-06"},
        {"agg.p", "100"},
        {"agg.base", "multikrum"},
        {"agg.signsgd_lr", "0.01"},
        {"attack.kind", "none"},
        {"attack.z", "-1"},
        {"attack.ipm_z", "0.4"},
        {"attack.z1", "-1"},
        {"attack.z2", "1.5"},
        {"attack.z1_policy", "fixed"},
        {"attack.z_hi", "20"},
        {"attack.tol", "0.001"},
        {"attack.sign", "minus"},
        {"attack.mask_path", ""},
    };
    for (const auto& [key, value] : kv) {
        if (!out.count(key)) throw ConfigError("config: unknown key '" + key + "'");
        out[key] = value;
    }

    ResolvedConfig rc;
    ExperimentConfig& c = rc.experiment;
    c.model.arch = arch_from_string(out["model.arch"]);
    c.model.input_rows = parse_int("model.input_rows", out["model.input_rows"]);
    c.model.input_cols = parse_int("model.input_cols", out["model.input_cols"]);
    c.model.input_channels = parse_int("model.input_channels", out["model.input_channels"]);
    c.model.num_classes = parse_int("model.classes", out["model.classes"]);
    c.model.hidden = parse_int("model.hidden", out["model.hidden"]);
    c.model.conv1_channels = parse_int("model.conv1", out["model.conv1"]);
    c.model.conv2_channels = parse_int("model.conv2", out["model.conv2"]);

    const std::string source = out["data.source"];
    if (source == "synthetic")
        c.data.source = DataConfig::Source::synthetic;
    else if (source == "idx")
        c.data.source = DataConfig::Source::idx;
    else
        throw ConfigError("config: data.source must be synthetic or idx");
    c.data.train_images = out["data.train_images"];
    c.data.train_labels = out["data.train_labels"];
    c.data.test_images = out["data.test_images"];
    c.data.test_labels = out["data.test_labels"];
    c.data.blob_classes = parse_int("data.blob_classes", out["data.blob_classes"]);
    c.data.blob_per_class = parse_int("data.blob_per_class", out["data.blob_per_class"]);
    c.data.blob_test_per_class =
        parse_int("data.blob_test_per_class", out["data.blob_test_per_class"]);
    c.data.blob_spread = parse_dbl("data.blob_spread", out["data.blob_spread"]);
    const std::string scheme = out["data.partition"];
    if (scheme == "iid")
        c.data.partition = DataConfig::Scheme::iid;
    else if (scheme == "dirichlet")
        c.data.partition = DataConfig::Scheme::dirichlet;
    else
        throw ConfigError("config: data.partition must be iid or dirichlet");
    c.data.alpha = parse_dbl("data.alpha", out["data.alpha"]);

    c.clients = parse_int("run.clients", out["run.clients"]);
    c.byzantine = parse_int("run.byzantine", out["run.byzantine"]);
    c.momentum = parse_dbl("run.momentum", out["run.momentum"]);
    c.epochs = parse_int("run.epochs", out["run.epochs"]);
    c.batch_size = parse_int("run.batch", out["run.batch"]);
    c.lr.initial = parse_dbl("run.lr", out["run.lr"]);
    c.lr.decay_factor = parse_dbl("run.lr_decay", out["run.lr_decay"]);
    c.lr.decay_at_fraction = parse_dbl("run.lr_decay_at", out["run.lr_decay_at"]);
    c.seed = parse_u64("run.seed", out["run.seed"]);
    c.threads = parse_int("run.threads", out["run.threads"]);

    c.agg.kind = agg_kind_from_string(out["agg.kind"]);
    c.agg.byzantine_count = parse_int("agg.km", out["agg.km"]);
    c.agg.neighborhood = parse_int("agg.neighborhood", out["agg.neighborhood"]);
    c.agg.multikrum_select = parse_int("agg.select", out["agg.select"]);
    c.agg.cc_tau = parse_dbl("agg.tau", out["agg.tau"]);
    c.agg.cc_iters = parse_int("agg.clip_iters", out["agg.clip_iters"]);
    c.agg.rfa_eps = parse_dbl("agg.rfa_eps", out["agg.rfa_eps"]);
    c.agg.rfa_max_iters = parse_int("agg.rfa_iters", out["agg.rfa_iters"]);
    c.agg.rfa_tol = parse_dbl("agg.rfa_tol", out["agg.rfa_tol"]);
    c.agg.gas_chunks = parse_int("agg.p", out["agg.p"]);
    c.agg.gas_base = agg_kind_from_string(out["agg.base"]);
    c.signsgd_lr = parse_dbl("agg.signsgd_lr", out["agg.signsgd_lr"]);

    c.attack.kind = attack_kind_from_string(out["attack.kind"]);
    c.attack.alie_z = parse_dbl("attack.z", out["attack.z"]);
    c.attack.ipm_z = parse_dbl("attack.ipm_z", out["attack.ipm_z"]);
    c.attack.z1 = parse_dbl("attack.z1", out["attack.z1"]);
    c.attack.z2 = parse_dbl("attack.z2", out["attack.z2"]);
    const std::string policy = out["attack.z1_policy"];
    if (policy == "fixed")
        c.attack.z1_policy = Z1Policy::fixed;
    else if (policy == "minsum-adaptive")
        c.attack.z1_policy = Z1Policy::minsum_adaptive;
    else
        throw ConfigError("config: attack.z1_policy must be fixed or minsum-adaptive");
    c.attack.z_hi = parse_dbl("attack.z_hi", out["attack.z_hi"]);
    c.attack.search_tol = parse_dbl("attack.tol", out["attack.tol"]);
    const std::string sign = out["attack.sign"];
    if (sign == "minus")
        c.attack.perturb_minus = true;
    else if (sign == "plus")
        c.attack.perturb_minus = false;
    else
        throw ConfigError("config: attack.sign must be minus or plus");
    c.attack.mask_path = out["attack.mask_path"];

    c.validate();
    if (c.data.source == DataConfig::Source::idx &&
        (c.data.train_images.empty() || c.data.train_labels.empty() ||
         c.data.test_images.empty() || c.data.test_labels.empty()))
        throw ConfigError("config: idx source requires all four data paths");
    if (c.attack.kind == AttackKind::hybrid_sparse && c.attack.mask_path.empty())
        throw ConfigError("config: hybrid_sparse requires attack.mask_path");

    // Normalize numeric values so equivalent inputs canonicalize identically.
    auto norm_int = [&](const char* key) { out[key] = std::to_string(parse_int(key, out[key])); };
    auto norm_dbl = [&](const char* key) {
        out[key] = format_double(parse_dbl(key, out[key]));
    };
    for (const char* key : {"model.input_rows", "model.input_cols", "model.input_channels",
                            "model.classes", "model.hidden", "model.conv1", "model.conv2",
                            "data.blob_classes", "data.blob_per_class", "data.blob_test_per_class",
                            "run.clients", "run.byzantine", "run.epochs", "run.batch",
                            "run.threads", "agg.km", "agg.neighborhood", "agg.select",
                            "agg.clip_iters", "agg.rfa_iters", "agg.p"})
        norm_int(key);
    for (const char* key :
         {"data.blob_spread", "data.alpha", "run.momentum", "run.lr", "run.lr_decay",
          "run.lr_decay_at", "agg.tau", "agg.rfa_eps", "agg.rfa_tol", "agg.signsgd_lr",
          "attack.z", "attack.ipm_z", "attack.z1", "attack.z2", "attack.z_hi", "attack.tol"})
        norm_dbl(key);
    out["run.seed"] = std::to_string(parse_u64("run.seed", out["run.seed"]));

    rc.resolved = std::move(out);
    return rc;
}

std::string canonical_text(const KeyValues& kv) {
    std::string out;
    for (const auto& [key, value] : kv) { // std::map iterates in key order
        out += key;
        out += " = ";
        out += value;
        out += '\n';
    }
    return out;
}

std::uint64_t config_hash(const KeyValues& kv) {
    const std::string text = canonical_text(kv);
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

} // namespace fedsim
