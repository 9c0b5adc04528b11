#include "cli_config.hpp"

#include <fstream>
#include <map>
#include <sstream>

namespace charbench::cli {

namespace {

std::string trim(const std::string& s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string::npos) return "";
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "1" || v == "true" || v == "yes") return true;
    if (v == "0" || v == "false" || v == "no") return false;
    throw UsageError(cat("config key '", key, "': expected a boolean, got '", v, "'"));
}

double parse_real(const std::string& key, const std::string& v) {
    try {
        size_t used = 0;
        const double d = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return d;
    } catch (const std::exception&) {
        throw UsageError(cat("config key '", key, "': expected a number, got '", v, "'"));
    }
}

int64_t parse_int(const std::string& key, const std::string& v) {
    try {
        size_t used = 0;
        const long long i = std::stoll(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return i;
    } catch (const std::exception&) {
        throw UsageError(cat("config key '", key, "': expected an integer, got '", v, "'"));
    }
}

void apply_key(Config& cfg, const std::string& key, const std::string& value) {
    if (key == "batch_size") {
        cfg.train.batch_size = static_cast<int>(parse_int(key, value));
    } else if (key == "lr") {
        cfg.train.lr = parse_real(key, value);
    } else if (key == "momentum") {
        cfg.train.momentum = parse_real(key, value);
    } else if (key == "step_size") {
        cfg.train.step_size = static_cast<int>(parse_int(key, value));
    } else if (key == "gamma") {
        cfg.train.gamma = parse_real(key, value);
    } else if (key == "epochs") {
        cfg.train.epochs = static_cast<int>(parse_int(key, value));
    } else if (key == "seed") {
        cfg.train.seed = static_cast<uint64_t>(parse_int(key, value));
    } else if (key == "freeze") {
        cfg.train.freeze_policy = parse_freeze_policy(value);
    } else if (key == "arch") {
        cfg.arch = canonical_model_id(value);
    } else if (key == "models") {
        cfg.models = parse_model_list(value);
    } else if (key == "scale") {
        cfg.scale = parse_scale(value);
    } else if (key == "data") {
        cfg.data = value;
    } else if (key == "source_data") {
        cfg.source_data = value;
    } else if (key == "weights") {
        cfg.weights = value;
    } else if (key == "weights_dir") {
        cfg.weights_dir = value;
    } else if (key == "out") {
        cfg.out = value;
    } else if (key == "deterministic") {
        cfg.deterministic = parse_bool(key, value);
    } else if (key == "parallel") {
        cfg.parallel = parse_bool(key, value);
    } else if (key == "classes") {
        cfg.classes = static_cast<int>(parse_int(key, value));
    } else if (key == "per_class") {
        cfg.per_class = static_cast<int>(parse_int(key, value));
    } else {
        throw UsageError(cat("unknown config key '", key, "'"));
    }
}

} // namespace

void apply_config_file(Config& cfg, const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw UsageError(cat("cannot open config file '", path.string(), "'"));
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        const std::string stripped = trim(line);
        if (stripped.empty()) continue;
        const auto eq = stripped.find('=');
        if (eq == std::string::npos) {
            throw UsageError(cat(path.string(), ":", line_no, ": expected 'key = value'"));
        }
        try {
            apply_key(cfg, trim(stripped.substr(0, eq)), trim(stripped.substr(eq + 1)));
        } catch (const UsageError&) {
            throw;
        } catch (const std::exception& e) {
            throw UsageError(cat(path.string(), ":", line_no, ": ", e.what()));
        }
    }
}

std::string render_config(const Config& cfg) {
    std::map<std::string, std::string> kv;
    kv["batch_size"] = std::to_string(cfg.train.batch_size);
    {
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.9g", cfg.train.lr);
        kv["lr"] = buf;
        std::snprintf(buf, sizeof buf, "%.9g", cfg.train.momentum);
        kv["momentum"] = buf;
        std::snprintf(buf, sizeof buf, "%.9g", cfg.train.gamma);
        kv["gamma"] = buf;
    }
    kv["step_size"] = std::to_string(cfg.train.step_size);
    kv["epochs"] = std::to_string(cfg.train.epochs);
    kv["seed"] = std::to_string(cfg.train.seed);
    kv["freeze"] = to_string(cfg.train.freeze_policy);
    kv["arch"] = cfg.arch;
    {
        std::string list;
        for (const auto& m : cfg.models.empty() ? zoo_model_ids() : cfg.models) {
            if (!list.empty()) list += ",";
            list += m;
        }
        kv["models"] = list;
    }
    kv["scale"] = to_string(cfg.scale);
    kv["data"] = cfg.data.string();
    kv["source_data"] = cfg.source_data.string();
    kv["weights"] = cfg.weights.string();
    kv["weights_dir"] = cfg.weights_dir.string();
    kv["out"] = cfg.out.string();
    kv["deterministic"] = cfg.deterministic ? "1" : "0";
    kv["parallel"] = cfg.parallel ? "1" : "0";
    kv["classes"] = std::to_string(cfg.classes);
    kv["per_class"] = std::to_string(cfg.per_class);

    std::ostringstream os;
    for (const auto& [k, v] : kv) os << k << " = " << v << "\n";
    return os.str();
}

void write_resolved_config(const Config& cfg, const std::filesystem::path& out_dir) {
    std::ofstream f(out_dir / "config.resolved", std::ios::binary | std::ios::trunc);
    if (!f) throw IoError(cat("cannot write '", (out_dir / "config.resolved").string(), "'"));
    f << render_config(cfg);
}

std::vector<std::string> parse_model_list(const std::string& csv) {
    if (trim(csv).empty()) return zoo_model_ids();
    std::vector<std::string> out;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const std::string id = trim(item);
        if (id.empty()) continue;
        try {
            out.push_back(canonical_model_id(id));
        } catch (const ValueError& e) {
            throw UsageError(e.what());
        }
    }
    if (out.empty()) throw UsageError(cat("no model ids in '", csv, "'"));
    return out;
}

} // namespace charbench::cli
