#include "CLI11.hpp"

#include <cstdio>

#include "commands.hpp"

using namespace charbench;
using namespace charbench::cli;

namespace {

// Flag values parked here during parsing; only flags the user actually set
// override the config file (which in turn overrides the defaults).
struct FlagBag {
    std::string config_file;
    std::string arch, models, scale, freeze;
    std::string data, source_data, weights, weights_dir, out;
    int batch_size = 0, step_size = 0, epochs = 0, classes = 0, per_class = 0;
    double lr = 0, momentum = -1, gamma = 0;
    uint64_t seed = 0;
    bool deterministic = false, parallel = false;
};

void add_train_flags(CLI::App* sub, FlagBag& f) {
    sub->add_option("--config", f.config_file, "config file (key = value lines)");
    sub->add_option("--batch-size", f.batch_size, "samples per batch");
    sub->add_option("--lr", f.lr, "base learning rate");
    sub->add_option("--momentum", f.momentum, "sgd momentum");
    sub->add_option("--step-size", f.step_size, "epochs between lr decays");
    sub->add_option("--gamma", f.gamma, "lr decay factor");
    sub->add_option("--epochs", f.epochs, "training epochs");
    sub->add_option("--seed", f.seed, "master seed");
}

/// defaults <- config file <- explicit flags
Config resolve(const CLI::App* sub, const FlagBag& f) {
    auto set = [&](const char* flag) {
        const CLI::Option* opt = sub->get_option_no_throw(flag);
        return opt != nullptr && opt->count() > 0;
    };
    Config cfg;
    if (set("--config")) apply_config_file(cfg, f.config_file);
    if (set("--batch-size")) cfg.train.batch_size = f.batch_size;
    if (set("--lr")) cfg.train.lr = f.lr;
    if (set("--momentum")) cfg.train.momentum = f.momentum;
    if (set("--step-size")) cfg.train.step_size = f.step_size;
    if (set("--gamma")) cfg.train.gamma = f.gamma;
    if (set("--epochs")) cfg.train.epochs = f.epochs;
    if (set("--seed")) cfg.train.seed = f.seed;
    if (set("--freeze")) cfg.train.freeze_policy = parse_freeze_policy(f.freeze);
    if (set("--arch")) cfg.arch = f.arch;
    if (set("--models")) cfg.models = parse_model_list(f.models);
    if (set("--scale")) cfg.scale = parse_scale(f.scale);
    if (set("--data")) cfg.data = f.data;
    if (set("--source-data")) cfg.source_data = f.source_data;
    if (set("--weights")) cfg.weights = f.weights;
    if (set("--weights-dir")) cfg.weights_dir = f.weights_dir;
    if (set("--out")) cfg.out = f.out;
    if (set("--classes")) cfg.classes = f.classes;
    if (set("--per-class")) cfg.per_class = f.per_class;
    if (set("--deterministic")) cfg.deterministic = f.deterministic;
    if (set("--parallel")) cfg.parallel = f.parallel;
    cfg.train.validate();
    return cfg;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"charbench - transfer-learning benchmark for handwritten characters"};
    app.require_subcommand(1);

    FlagBag f;
    double gc_tolerance = 1e-4;
    std::string gc_op;
    int gc_seeds = 10;
    std::string audit_format = "markdown";
    bool inject_fault = false;

    CLI::App* synth = app.add_subcommand("synth", "generate a synthetic glyph dataset");
    synth->add_option("--out", f.out, "dataset root to create")->required();
    synth->add_option("--classes", f.classes, "number of classes");
    synth->add_option("--per-class", f.per_class, "images per class");
    synth->add_option("--seed", f.seed, "generator seed");
    synth->add_option("--config", f.config_file, "config file");

    CLI::App* pretrain = app.add_subcommand("pretrain", "train a source model from scratch");
    pretrain->add_option("--arch", f.arch, "model id (alexnet, vgg_11, ...)");
    pretrain->add_option("--data", f.data, "source dataset root");
    pretrain->add_option("--out", f.out, "output directory")->required();
    pretrain->add_option("--scale", f.scale, "full|mini");
    add_train_flags(pretrain, f);

    CLI::App* transfer = app.add_subcommand("transfer", "train a classifier head on frozen features");
    transfer->add_option("--arch", f.arch, "model id");
    transfer->add_option("--weights", f.weights, "pretrained parameter file");
    transfer->add_option("--data", f.data, "target dataset root");
    transfer->add_option("--out", f.out, "output directory")->required();
    transfer->add_option("--scale", f.scale, "full|mini");
    transfer->add_option("--freeze", f.freeze, "fixed_extractor|full_finetune");
    transfer->add_flag("--deterministic", f.deterministic, "zero timing columns for byte-stable outputs");
    add_train_flags(transfer, f);

    CLI::App* benchmark = app.add_subcommand("benchmark", "pretrain+transfer every model, emit reports");
    benchmark->add_option("--models", f.models, "comma-separated model ids (default: all seven)");
    benchmark->add_option("--data", f.data, "target dataset root");
    benchmark->add_option("--source-data", f.source_data, "source dataset for pretraining");
    benchmark->add_option("--weights-dir", f.weights_dir, "directory of <model>.cbpw files");
    benchmark->add_option("--out", f.out, "output directory")->required();
    benchmark->add_option("--scale", f.scale, "full|mini");
    benchmark->add_option("--freeze", f.freeze, "fixed_extractor|full_finetune");
    benchmark->add_flag("--deterministic", f.deterministic, "zero timing columns for byte-stable outputs");
    benchmark->add_flag("--parallel", f.parallel, "run models on worker threads (CHARBENCH_THREADS)");
    add_train_flags(benchmark, f);

    CLI::App* audit = app.add_subcommand("audit", "check the full-scale zoo against its published shape");
    audit->add_option("--out", f.out, "directory for audit.csv");
    audit->add_option("--format", audit_format, "csv|markdown (stdout format)");
    audit->add_option("--config", f.config_file, "config file");
    audit->add_flag("--inject-fault", inject_fault, "test hook: force one row to fail")
        ->group(""); // hidden
    audit->add_option("--seed", f.seed, "unused; accepted for config symmetry")->group("");

    CLI::App* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of every primitive");
    gradcheck->add_option("--tolerance", gc_tolerance, "max relative error");
    gradcheck->add_option("--op", gc_op, "check a single op");
    gradcheck->add_option("--seeds", gc_seeds, "seeds per op");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    // bad flag values are usage errors, not runtime failures
    auto resolved = [&](const CLI::App* sub) {
        try {
            return resolve(sub, f);
        } catch (const UsageError&) {
            throw;
        } catch (const ValueError& e) {
            throw UsageError(e.what());
        }
    };

    try {
        if (app.got_subcommand(synth)) return cmd_synth(resolved(synth));
        if (app.got_subcommand(pretrain)) return cmd_pretrain(resolved(pretrain));
        if (app.got_subcommand(transfer)) return cmd_transfer(resolved(transfer));
        if (app.got_subcommand(benchmark)) return cmd_benchmark(resolved(benchmark));
        if (app.got_subcommand(audit)) {
            return cmd_audit(resolved(audit), parse_report_format(audit_format), inject_fault);
        }
        if (app.got_subcommand(gradcheck)) return cmd_gradcheck(gc_tolerance, gc_op, gc_seeds);
    } catch (const UsageError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        std::fprintf(stderr, "run 'charbench --help' for usage\n");
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 2;
}
