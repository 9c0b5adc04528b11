#ifndef CHARBENCH_CLI_CONFIG_HPP
#define CHARBENCH_CLI_CONFIG_HPP

#include <filesystem>
#include <string>
#include <vector>

#include "charbench/train.hpp"

namespace charbench::cli {

/// Flag or config-file misuse; mapped to exit code 2.
class UsageError : public ValueError {
public:
    explicit UsageError(const std::string& msg) : ValueError(msg) {}
};

/// Effective settings for one command invocation. Defaults reproduce the
/// reference recipe (batch 32, lr 0.001, momentum 0.9, step 7, gamma 0.1,
/// 15 epochs).
struct Config {
    TrainConfig train;
    std::string arch = "alexnet";
    std::vector<std::string> models; // empty = all seven
    Scale scale = Scale::mini;
    std::filesystem::path data;
    std::filesystem::path source_data;
    std::filesystem::path weights;
    std::filesystem::path weights_dir;
    std::filesystem::path out;
    bool deterministic = false;
    bool parallel = false;
    int classes = 10;
    int per_class = 200;
};

/// Applies `key = value` lines (# comments, blank lines allowed) onto cfg.
/// Unknown keys are rejected.
void apply_config_file(Config& cfg, const std::filesystem::path& path);

/// One `key = value` per line, sorted; parseable back via --config.
std::string render_config(const Config& cfg);

/// Writes render_config(cfg) to <out_dir>/config.resolved.
void write_resolved_config(const Config& cfg, const std::filesystem::path& out_dir);

/// Comma-separated model list -> canonical ids; empty input = the full zoo.
std::vector<std::string> parse_model_list(const std::string& csv);

} // namespace charbench::cli

#endif
