#ifndef CHARBENCH_REPORT_HPP
#define CHARBENCH_REPORT_HPP

#include <iosfwd>

#include "charbench/train.hpp"

namespace charbench {

struct BenchmarkRun {
    std::string model_id;
    Scale scale = Scale::mini;
    TrainConfig config;
    std::vector<EpochMetrics> metrics;
    int64_t classifier_in_features = 0;
    std::string started_at; // empty in deterministic mode
    std::string host;
};

struct SummaryRow {
    std::string model_id;
    double first_epoch_valid_acc = 0.0;
    double best_valid_acc = 0.0;
    int best_epoch = 1; // 1-based, earliest epoch achieving the best accuracy
    double total_seconds = 0.0;
    double avg_epoch_seconds = 0.0;
    int64_t classifier_in_features = 0;
};

/// Pure aggregation of a run's metrics; throws ValueError on an empty run.
SummaryRow summarize(const BenchmarkRun& run);

class ConfusionMatrix {
public:
    explicit ConfusionMatrix(std::vector<std::string> classes);

    void add(int true_class, int predicted_class, int64_t count = 1);
    int64_t at(int true_class, int predicted_class) const;
    int num_classes() const { return static_cast<int>(classes_.size()); }
    int64_t total() const;
    int64_t row_sum(int true_class) const;
    const std::vector<std::string>& classes() const { return classes_; }

private:
    std::vector<std::string> classes_;
    std::vector<int64_t> counts_; // row = true class, col = predicted
};

/// Eval-mode predictions over `test` in its stored order.
ConfusionMatrix confusion(const Model& model, std::span<const Sample> test,
                          const std::vector<std::string>& classes, int batch_size = 32);

struct ConfusedPair {
    int a = 0;
    int b = 0;
    int64_t count = 0; // counts[a][b] + counts[b][a]
};

/// Off-diagonal pairs ranked by symmetric confusion count, descending; ties
/// broken by (a,b) lexicographic order; zero-count pairs are dropped.
std::vector<ConfusedPair> top_confused_pairs(const ConfusionMatrix& cm, int k);

enum class ReportFormat { csv, markdown };

ReportFormat parse_report_format(const std::string& s);

/// Summary table, one row per run. CSV schema:
/// model,first_epoch_valid_acc,best_valid_acc,best_epoch,total_seconds,
/// avg_epoch_seconds,classifier_in_features. Markdown mirrors the published
/// comparison layout (percentages, minutes). Identical runs give identical
/// bytes; empty input is an error and creates no file.
void emit_report(std::span<const BenchmarkRun> runs, ReportFormat format,
                 const std::filesystem::path& out);

/// model,epoch,train_loss,train_acc,valid_acc,lr,epoch_seconds (epoch 1-based).
void write_epochs_csv(std::span<const BenchmarkRun> runs, const std::filesystem::path& out);

/// Square integer table with class names on both axes.
void write_confusion_csv(const ConfusionMatrix& cm, const std::filesystem::path& out);

// ---- structural audit of the full-scale zoo ----

struct AuditRow {
    std::string model_id;
    int64_t param_count = 0;
    double param_expected_millions = 0.0; // 0 = no expectation
    std::string param_status;             // pass | fail | info
    int64_t in_features = 0;
    int64_t in_features_expected = 0; // 0 = no expectation
    std::string in_features_status;
    int64_t final_hidden_width = 0;
    std::string note;
};

/// Measures every full-scale spec (shape inference only; parameter counts
/// within 5% of the published sizes where asserted, classifier in-features
/// exact). Rows whose published figures are known-inconsistent are reported
/// as informational.
std::vector<AuditRow> audit_architectures();

bool audit_passed(const std::vector<AuditRow>& rows);

void write_audit(const std::vector<AuditRow>& rows, ReportFormat format, std::ostream& out);
void write_audit_file(const std::vector<AuditRow>& rows, ReportFormat format,
                      const std::filesystem::path& out);

/// Shortest decimal form that round-trips a double within 9 significant
/// digits; the single float formatter every CSV uses.
std::string fmt_real(double v);

} // namespace charbench

#endif
