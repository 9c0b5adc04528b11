#include "charbench/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace charbench {

std::string fmt_real(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

SummaryRow summarize(const BenchmarkRun& run) {
    if (run.metrics.empty()) throw ValueError(cat("run for '", run.model_id, "' has no epochs"));
    SummaryRow row;
    row.model_id = run.model_id;
    row.classifier_in_features = run.classifier_in_features;
    row.first_epoch_valid_acc = run.metrics.front().valid_accuracy;
    row.best_valid_acc = run.metrics.front().valid_accuracy;
    row.best_epoch = 1;
    for (size_t i = 0; i < run.metrics.size(); ++i) {
        const EpochMetrics& m = run.metrics[i];
        row.total_seconds += m.wall_seconds;
        if (m.valid_accuracy > row.best_valid_acc) {
            row.best_valid_acc = m.valid_accuracy;
            row.best_epoch = static_cast<int>(i) + 1; // earliest argmax, 1-based
        }
    }
    row.avg_epoch_seconds = row.total_seconds / static_cast<double>(run.metrics.size());
    return row;
}

ConfusionMatrix::ConfusionMatrix(std::vector<std::string> classes)
    : classes_(std::move(classes)),
      counts_(classes_.size() * classes_.size(), 0) {
    if (classes_.size() < 2) throw ValueError("confusion matrix needs at least two classes");
}

void ConfusionMatrix::add(int t, int p, int64_t count) {
    const int c = num_classes();
    if (t < 0 || t >= c || p < 0 || p >= c) {
        throw ValueError(cat("confusion cell (", t, ",", p, ") out of range for ", c, " classes"));
    }
    counts_[static_cast<size_t>(t) * c + p] += count;
}

int64_t ConfusionMatrix::at(int t, int p) const {
    return counts_[static_cast<size_t>(t) * num_classes() + p];
}

int64_t ConfusionMatrix::total() const {
    int64_t s = 0;
    for (int64_t v : counts_) s += v;
    return s;
}

int64_t ConfusionMatrix::row_sum(int t) const {
    int64_t s = 0;
    for (int p = 0; p < num_classes(); ++p) s += at(t, p);
    return s;
}

ConfusionMatrix confusion(const Model& model, std::span<const Sample> test,
                          const std::vector<std::string>& classes, int batch_size) {
    if (test.empty()) throw ValueError("confusion needs a non-empty test set");
    ConfusionMatrix cm(classes);
    const TransformConfig tcfg = transform_for(model);
    BatchStream stream(test, tcfg, batch_size, epoch_order(test.size(), 0, 0, false),
                       env_worker_threads());
    while (auto batch = stream.next()) {
        Tensor logits = model.forward(nullptr, batch->images, Phase::eval);
        const std::vector<int> pred = argmax_rows(logits);
        for (size_t i = 0; i < pred.size(); ++i) cm.add(batch->labels[i], pred[i]);
    }
    return cm;
}

std::vector<ConfusedPair> top_confused_pairs(const ConfusionMatrix& cm, int k) {
    if (k < 1) throw ValueError(cat("k must be >= 1, got ", k));
    std::vector<ConfusedPair> pairs;
    for (int a = 0; a < cm.num_classes(); ++a) {
        for (int b = a + 1; b < cm.num_classes(); ++b) {
            const int64_t c = cm.at(a, b) + cm.at(b, a);
            if (c > 0) pairs.push_back({a, b, c});
        }
    }
    std::sort(pairs.begin(), pairs.end(), [](const ConfusedPair& x, const ConfusedPair& y) {
        if (x.count != y.count) return x.count > y.count;
        if (x.a != y.a) return x.a < y.a;
        return x.b < y.b;
    });
    if (static_cast<int>(pairs.size()) > k) pairs.resize(static_cast<size_t>(k));
    return pairs;
}

ReportFormat parse_report_format(const std::string& s) {
    if (s == "csv") return ReportFormat::csv;
    if (s == "markdown" || s == "md") return ReportFormat::markdown;
    throw ValueError(cat("unknown report format '", s, "' (expected csv|markdown)"));
}

namespace {

std::string pct(double fraction) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f%%", fraction * 100.0);
    return buf;
}

std::string minutes(double seconds) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.1fm", seconds / 60.0);
    return buf;
}

void write_text_file(const std::filesystem::path& out, const std::string& text) {
    std::ofstream f(out, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError(cat("cannot write '", out.string(), "'"));
    f.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!f) throw IoError(cat("short write to '", out.string(), "'"));
}

} // namespace

void emit_report(std::span<const BenchmarkRun> runs, ReportFormat format,
                 const std::filesystem::path& out) {
    if (runs.empty()) throw ValueError("emit_report needs at least one run");
    std::ostringstream os;
    if (format == ReportFormat::csv) {
        os << "model,first_epoch_valid_acc,best_valid_acc,best_epoch,total_seconds,"
              "avg_epoch_seconds,classifier_in_features\n";
        for (const BenchmarkRun& run : runs) {
            const SummaryRow r = summarize(run);
            os << r.model_id << ',' << fmt_real(r.first_epoch_valid_acc) << ','
               << fmt_real(r.best_valid_acc) << ',' << r.best_epoch << ','
               << fmt_real(r.total_seconds) << ',' << fmt_real(r.avg_epoch_seconds) << ','
               << r.classifier_in_features << '\n';
        }
    } else {
        os << "| Model | Valid accuracy (1st epoch) | Best accuracy | Best epoch | Total time | "
              "Avg epoch time | In features |\n";
        os << "|---|---|---|---|---|---|---|\n";
        for (const BenchmarkRun& run : runs) {
            const SummaryRow r = summarize(run);
            os << "| " << r.model_id << " | " << pct(r.first_epoch_valid_acc) << " | "
               << pct(r.best_valid_acc) << " | " << r.best_epoch << " | "
               << minutes(r.total_seconds) << " | " << minutes(r.avg_epoch_seconds) << " | "
               << r.classifier_in_features << " |\n";
        }
    }
    write_text_file(out, os.str());
}

void write_epochs_csv(std::span<const BenchmarkRun> runs, const std::filesystem::path& out) {
    if (runs.empty()) throw ValueError("write_epochs_csv needs at least one run");
    std::ostringstream os;
    os << "model,epoch,train_loss,train_acc,valid_acc,lr,epoch_seconds\n";
    for (const BenchmarkRun& run : runs) {
        for (const EpochMetrics& m : run.metrics) {
            os << run.model_id << ',' << (m.epoch + 1) << ',' << fmt_real(m.train_loss) << ','
               << fmt_real(m.train_accuracy) << ',' << fmt_real(m.valid_accuracy) << ','
               << fmt_real(m.lr_used) << ',' << fmt_real(m.wall_seconds) << '\n';
        }
    }
    write_text_file(out, os.str());
}

void write_confusion_csv(const ConfusionMatrix& cm, const std::filesystem::path& out) {
    std::ostringstream os;
    os << "class";
    for (const std::string& c : cm.classes()) os << ',' << c;
    os << '\n';
    for (int t = 0; t < cm.num_classes(); ++t) {
        os << cm.classes()[static_cast<size_t>(t)];
        for (int p = 0; p < cm.num_classes(); ++p) os << ',' << cm.at(t, p);
        os << '\n';
    }
    write_text_file(out, os.str());
}

std::vector<AuditRow> audit_architectures() {
    struct Expectation {
        const char* id;
        double params_millions; // 0 = informational
        int64_t in_features;    // 0 = informational
        const char* note;
    };
    // DenseNet parameter figures and the vgg_11 in-features figure in the
    // published comparison are inconsistent with the models themselves, so
    // those cells are reported without being asserted.
    static const Expectation expectations[] = {
        {"alexnet", 60.0, 9216, ""},
        {"densenet_121", 0.0, 1024, "published size (25M) inconsistent; measured count reported"},
        {"densenet_201", 0.0, 1920, "published size (20M) inconsistent; measured count reported"},
        {"vgg_11", 134.0, 0, "published in-features (4096) is the final hidden width"},
        {"vgg_16", 138.0, 25088, ""},
        {"vgg_19", 144.0, 25088, ""},
        {"inception_v3", 0.0, 2048, "published size given as an upper bound (<=25M)"},
    };

    std::vector<AuditRow> rows;
    for (const Expectation& e : expectations) {
        const ArchSpec spec = zoo_spec(e.id, Scale::full, 1000);
        const NetPlan plan = expand(spec);
        AuditRow row;
        row.model_id = e.id;
        row.param_count = param_count(spec);
        row.in_features = plan.classifier_in_features;
        row.final_hidden_width = final_hidden_width(plan);
        row.note = e.note;
        row.param_expected_millions = e.params_millions;
        if (e.params_millions > 0) {
            const double expected = e.params_millions * 1e6;
            row.param_status =
                std::abs(static_cast<double>(row.param_count) - expected) <= 0.05 * expected
                    ? "pass"
                    : "fail";
        } else {
            row.param_status = "info";
        }
        row.in_features_expected = e.in_features;
        if (e.in_features > 0) {
            row.in_features_status = row.in_features == e.in_features ? "pass" : "fail";
        } else {
            row.in_features_status = "info";
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

bool audit_passed(const std::vector<AuditRow>& rows) {
    for (const AuditRow& r : rows) {
        if (r.param_status == "fail" || r.in_features_status == "fail") return false;
    }
    return true;
}

void write_audit(const std::vector<AuditRow>& rows, ReportFormat format, std::ostream& os) {
    if (format == ReportFormat::csv) {
        os << "model,param_count,param_expected_millions,param_status,in_features,"
              "in_features_expected,in_features_status,final_hidden_width,note\n";
        for (const AuditRow& r : rows) {
            os << r.model_id << ',' << r.param_count << ',' << fmt_real(r.param_expected_millions)
               << ',' << r.param_status << ',' << r.in_features << ',' << r.in_features_expected
               << ',' << r.in_features_status << ',' << r.final_hidden_width << ",\"" << r.note
               << "\"\n";
        }
    } else {
        os << "| Model | Parameters | Expected | Status | In features | Expected | Status | Final "
              "hidden | Note |\n";
        os << "|---|---|---|---|---|---|---|---|---|\n";
        for (const AuditRow& r : rows) {
            os << "| " << r.model_id << " | " << r.param_count << " | ";
            if (r.param_expected_millions > 0) {
                os << fmt_real(r.param_expected_millions) << "M";
            } else {
                os << "-";
            }
            os << " | " << r.param_status << " | " << r.in_features << " | ";
            if (r.in_features_expected > 0) {
                os << r.in_features_expected;
            } else {
                os << "-";
            }
            os << " | " << r.in_features_status << " | " << r.final_hidden_width << " | " << r.note
               << " |\n";
        }
    }
}

void write_audit_file(const std::vector<AuditRow>& rows, ReportFormat format,
                      const std::filesystem::path& out) {
    std::ostringstream os;
    write_audit(rows, format, os);
    write_text_file(out, os.str());
}

} // namespace charbench
