#include "commands.hpp"

#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <mutex>
#include <sstream>
#include <thread>

#include "charbench/gradcheck.hpp"
#include "charbench/synth.hpp"

namespace charbench::cli {

namespace {

namespace fs = std::filesystem;

void ensure_out_dir(const fs::path& out) {
    if (out.empty()) throw UsageError("--out is required");
    std::error_code ec;
    fs::create_directories(out, ec);
    if (ec || !fs::is_directory(out)) {
        throw IoError(cat("cannot create output directory '", out.string(), "'"));
    }
}

void require_data(const fs::path& data) {
    if (data.empty()) throw UsageError("--data is required");
    if (!fs::is_directory(data)) {
        throw IoError(cat("dataset path '", data.string(), "' is not a directory"));
    }
}

std::string canonical_arch(const std::string& id) {
    try {
        return canonical_model_id(id);
    } catch (const ValueError& e) {
        throw UsageError(e.what());
    }
}

std::string iso_now() {
    const std::time_t now = std::time(nullptr);
    char buf[32];
    std::tm tm_utc{};
    gmtime_r(&now, &tm_utc);
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
    return buf;
}

std::string host_name() {
    char buf[256] = {0};
    if (gethostname(buf, sizeof buf - 1) != 0) return "unknown";
    return buf;
}

void print_epoch(const std::string& model, int total_epochs, const EpochMetrics& m) {
    std::printf("[%s] epoch %2d/%d  loss %.4f  train %.4f  valid %.4f  lr %g  %.1fs\n",
                model.c_str(), m.epoch + 1, total_epochs, m.train_loss, m.train_accuracy,
                m.valid_accuracy, m.lr_used, m.wall_seconds);
}

BenchmarkRun make_run(const Config& cfg, const std::string& model_id,
                      std::vector<EpochMetrics> metrics, int64_t in_features) {
    BenchmarkRun run;
    run.model_id = model_id;
    run.scale = cfg.scale;
    run.config = cfg.train;
    run.metrics = std::move(metrics);
    run.classifier_in_features = in_features;
    if (cfg.deterministic) {
        // wall time is the one nondeterministic column; zero it so reruns
        // with identical inputs emit identical bytes
        for (EpochMetrics& m : run.metrics) m.wall_seconds = 0.0;
    } else {
        run.started_at = iso_now();
        run.host = host_name();
    }
    return run;
}

struct ModelOutcome {
    BenchmarkRun run;
    ConfusionMatrix confusion{std::vector<std::string>{"a", "b"}};
    std::string error; // empty = success
};

ModelOutcome run_one_model(const Config& cfg, const std::string& model_id, bool quiet) {
    ModelOutcome outcome;
    try {
        fs::path wfile;
        if (!cfg.weights_dir.empty()) {
            wfile = cfg.weights_dir / (model_id + ".cbpw");
            if (!fs::exists(wfile)) {
                throw IoError(cat("no pretrained weights at '", wfile.string(), "'"));
            }
        } else {
            const fs::path wdir = cfg.out / "weights";
            std::error_code ec;
            fs::create_directories(wdir, ec);
            wfile = wdir / (model_id + ".cbpw");
            if (!quiet) std::printf("[%s] pretraining on %s\n", model_id.c_str(),
                                    cfg.source_data.string().c_str());
            pretrain_source(model_id, cfg.source_data, cfg.train, wfile, cfg.scale);
        }

        TransferResult r = transfer(model_id, wfile, cfg.data, cfg.train, cfg.scale,
                                    quiet ? std::function<void(const EpochMetrics&)>{}
                                          : [&](const EpochMetrics& m) {
                                                print_epoch(model_id, cfg.train.epochs, m);
                                            });
        outcome.run = make_run(cfg, model_id, r.metrics, r.model.plan().classifier_in_features);
        outcome.confusion = confusion(r.model, r.data_split.test, r.classes, cfg.train.batch_size);
        save_params(r.model.params(), cfg.out / (model_id + "_transferred.cbpw"));
    } catch (const std::exception& e) {
        outcome.error = e.what();
    }
    return outcome;
}

} // namespace

int cmd_synth(const Config& cfg) {
    if (cfg.out.empty()) throw UsageError("--out is required");
    synth_generate(cfg.out, cfg.classes, cfg.per_class, cfg.train.seed);
    std::printf("wrote %d classes x %d images under %s\n", cfg.classes, cfg.per_class,
                cfg.out.string().c_str());
    return 0;
}

int cmd_pretrain(const Config& cfg) {
    const std::string arch = canonical_arch(cfg.arch);
    require_data(cfg.data);
    ensure_out_dir(cfg.out);

    const fs::path wfile = cfg.out / "weights.cbpw";
    std::vector<EpochMetrics> metrics =
        pretrain_source(arch, cfg.data, cfg.train, wfile, cfg.scale,
                        [&](const EpochMetrics& m) { print_epoch(arch, cfg.train.epochs, m); });

    const LabeledDataset ds = ingest(cfg.data);
    const int64_t in_features =
        classifier_in_features(zoo_spec(arch, cfg.scale, static_cast<int>(ds.classes.size())));
    const BenchmarkRun run = make_run(cfg, arch, std::move(metrics), in_features);
    write_epochs_csv(std::span<const BenchmarkRun>(&run, 1), cfg.out / "epochs.csv");
    write_resolved_config(cfg, cfg.out);
    std::printf("saved %s\n", wfile.string().c_str());
    return 0;
}

int cmd_transfer(const Config& cfg) {
    const std::string arch = canonical_arch(cfg.arch);
    require_data(cfg.data);
    if (cfg.weights.empty()) throw UsageError("--weights is required");
    ensure_out_dir(cfg.out);

    TransferResult r = transfer(arch, cfg.weights, cfg.data, cfg.train, cfg.scale,
                                [&](const EpochMetrics& m) { print_epoch(arch, cfg.train.epochs, m); });
    std::printf("frozen parameters: %lld, trainable: %lld\n",
                static_cast<long long>(r.model.params().frozen_count()),
                static_cast<long long>(r.model.params().trainable_count()));
    if (cfg.train.freeze_policy == FreezePolicy::fixed_extractor) {
        std::printf("feature hash before/after: %016llx / %016llx (%s)\n",
                    static_cast<unsigned long long>(r.feature_hash_before),
                    static_cast<unsigned long long>(r.feature_hash_after),
                    r.feature_hash_before == r.feature_hash_after ? "frozen intact" : "MOVED");
    }

    const BenchmarkRun run =
        make_run(cfg, arch, r.metrics, r.model.plan().classifier_in_features);
    emit_report(std::span<const BenchmarkRun>(&run, 1), ReportFormat::csv,
                cfg.out / "summary.csv");
    write_epochs_csv(std::span<const BenchmarkRun>(&run, 1), cfg.out / "epochs.csv");
    const ConfusionMatrix cm =
        confusion(r.model, r.data_split.test, r.classes, cfg.train.batch_size);
    write_confusion_csv(cm, cfg.out / "confusion.csv");
    for (const ConfusedPair& p : top_confused_pairs(cm, 5)) {
        std::printf("confused pair: %s vs %s (%lld)\n", r.classes[static_cast<size_t>(p.a)].c_str(),
                    r.classes[static_cast<size_t>(p.b)].c_str(),
                    static_cast<long long>(p.count));
    }
    save_params(r.model.params(), cfg.out / "transferred.cbpw");
    write_resolved_config(cfg, cfg.out);
    return 0;
}

int cmd_benchmark(const Config& cfg) {
    require_data(cfg.data);
    ensure_out_dir(cfg.out);
    if (cfg.source_data.empty() && cfg.weights_dir.empty()) {
        throw UsageError("benchmark needs --source-data (pretrain first) or --weights-dir");
    }
    if (!cfg.source_data.empty() && !cfg.weights_dir.empty()) {
        throw UsageError("--source-data and --weights-dir are mutually exclusive");
    }
    if (cfg.parallel && cfg.deterministic) {
        throw UsageError("--parallel cannot honor --deterministic timing; drop one");
    }
    const std::vector<std::string> models = cfg.models.empty() ? zoo_model_ids() : cfg.models;

    std::vector<ModelOutcome> outcomes(models.size(),
                                       ModelOutcome{BenchmarkRun{}, ConfusionMatrix({"a", "b"}), ""});
    if (cfg.parallel) {
        const int workers =
            std::min<int>(static_cast<int>(models.size()), std::max(1, env_worker_threads()));
        std::mutex log_mutex;
        std::atomic<size_t> next{0};
        auto worker = [&]() {
            while (true) {
                const size_t i = next.fetch_add(1);
                if (i >= models.size()) break;
                ModelOutcome o = run_one_model(cfg, models[i], /*quiet=*/true);
                std::lock_guard lock(log_mutex);
                std::printf("[%s] %s\n", models[i].c_str(),
                            o.error.empty() ? "done" : o.error.c_str());
                outcomes[i] = std::move(o);
            }
        };
        std::vector<std::thread> pool;
        for (int t = 0; t < workers; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    } else {
        for (size_t i = 0; i < models.size(); ++i) {
            outcomes[i] = run_one_model(cfg, models[i], /*quiet=*/false);
        }
    }

    std::vector<BenchmarkRun> runs;
    int failures = 0;
    for (size_t i = 0; i < models.size(); ++i) {
        if (!outcomes[i].error.empty()) {
            std::fprintf(stderr, "error: model %s failed: %s\n", models[i].c_str(),
                         outcomes[i].error.c_str());
            ++failures;
            continue;
        }
        runs.push_back(outcomes[i].run);
        write_confusion_csv(outcomes[i].confusion,
                            cfg.out / ("confusion_" + models[i] + ".csv"));
        if (models.size() == 1) write_confusion_csv(outcomes[i].confusion, cfg.out / "confusion.csv");
    }
    if (!runs.empty()) {
        emit_report(runs, ReportFormat::csv, cfg.out / "summary.csv");
        emit_report(runs, ReportFormat::markdown, cfg.out / "summary.md");
        write_epochs_csv(runs, cfg.out / "epochs.csv");
    }
    write_resolved_config(cfg, cfg.out);
    std::printf("%zu/%zu models completed; reports under %s\n", runs.size(), models.size(),
                cfg.out.string().c_str());
    return failures == 0 ? 0 : 1;
}

int cmd_audit(const Config& cfg, ReportFormat format, bool inject_fault) {
    std::vector<AuditRow> rows = audit_architectures();
    if (inject_fault) {
        // test hook: pretend the first spec disagrees with its published shape
        rows[0].in_features_expected = rows[0].in_features + 1;
        rows[0].in_features_status = "fail";
        rows[0].note = "fault injected via --inject-fault";
    }
    std::ostringstream os;
    write_audit(rows, format, os);
    std::fputs(os.str().c_str(), stdout);
    if (!cfg.out.empty()) {
        ensure_out_dir(cfg.out);
        write_audit_file(rows, ReportFormat::csv, cfg.out / "audit.csv");
        write_resolved_config(cfg, cfg.out);
    }
    return audit_passed(rows) ? 0 : 1;
}

int cmd_gradcheck(double tolerance, const std::string& op_filter, int seeds) {
    if (seeds < 1) throw UsageError(cat("--seeds must be >= 1, got ", seeds));
    if (!(tolerance > 0)) throw UsageError(cat("--tolerance must be > 0, got ", tolerance));
    std::vector<std::string> ops;
    if (op_filter.empty()) {
        ops = gradcheck_op_names();
    } else {
        const auto& known = gradcheck_op_names();
        if (std::find(known.begin(), known.end(), op_filter) == known.end()) {
            throw UsageError(cat("unknown op '", op_filter, "' (see gradcheck --help)"));
        }
        ops = {op_filter};
    }
    bool all_passed = true;
    for (const GradCheckSummary& s : run_gradcheck_suite(ops, seeds, tolerance)) {
        std::printf("%-24s max_rel_error %.3e over %d seeds  %s\n", s.op_name.c_str(),
                    s.max_rel_error, s.seeds, s.passed ? "pass" : "FAIL");
        all_passed = all_passed && s.passed;
    }
    return all_passed ? 0 : 1;
}

} // namespace charbench::cli
