#ifndef CHARBENCH_TRAIN_HPP
#define CHARBENCH_TRAIN_HPP

#include <functional>

#include "charbench/data.hpp"
#include "charbench/network.hpp"
#include "charbench/params_io.hpp"

namespace charbench {

/// Defaults are the training recipe this toolkit reproduces: batch 32,
/// lr 0.001, momentum 0.9, step size 7, gamma 0.1, 15 epochs.
struct TrainConfig {
    int batch_size = 32;
    double lr = 0.001;
    double momentum = 0.9;
    int step_size = 7;
    double gamma = 0.1;
    int epochs = 15;
    uint64_t seed = 0;
    FreezePolicy freeze_policy = FreezePolicy::fixed_extractor;

    void validate() const;
};

struct EpochMetrics {
    int epoch = 0; // 0-based internally; reports print it 1-based
    double train_loss = 0.0;
    double train_accuracy = 0.0;
    double valid_accuracy = 0.0;
    double lr_used = 0.0;
    double wall_seconds = 0.0; // monotonic clock around both phases
};

/// Per-parameter momentum buffers. Frozen parameters never hold an entry.
class OptimizerState {
public:
    std::vector<float>& velocity_for(const std::string& name, size_t size);
    void drop(const std::string& name) { velocity_.erase(name); }
    bool has(const std::string& name) const { return velocity_.count(name) != 0; }
    size_t size() const { return velocity_.size(); }

private:
    std::map<std::string, std::vector<float>> velocity_;
};

/// base_lr * gamma^floor(epoch / step_size).
double step_lr(double base_lr, int epoch, int step_size, double gamma);

/// For every trainable parameter: v <- momentum*v + grad; p <- p - lr*v;
/// gradients are zeroed afterwards. Frozen parameters and buffers are
/// untouched.
void sgd_step(ParamStore& params, OptimizerState& state, double lr, double momentum);

struct PhaseStats {
    double loss = 0.0;
    double accuracy = 0.0;
    int64_t samples = 0;
};

/// One pass over `part`. The train phase shuffles by (seed, epoch), runs
/// forward/loss/backward/sgd_step per batch and keeps unfrozen batchnorm in
/// batch-stats mode; the eval phase mutates nothing. Accuracy is the exact
/// argmax-match fraction (first index on logit ties).
PhaseStats run_epoch(Model& model, OptimizerState& state, std::span<const Sample> part,
                     const TransformConfig& tcfg, const TrainConfig& cfg, int epoch, double lr,
                     Phase phase);

/// The full recipe: for each epoch, scheduled lr, train phase, eval phase,
/// one metrics row. Deterministic under (config, data, seed).
std::vector<EpochMetrics> fit(Model& model, const SplitDataset& data, const TrainConfig& cfg,
                              const std::function<void(const EpochMetrics&)>& on_epoch = {});

/// Transform matching the model's canonical input size.
TransformConfig transform_for(const Model& model);

/// Builds a mini-scale model for the source task, trains it end to end
/// (full_finetune) and saves all parameters to out_file.
std::vector<EpochMetrics> pretrain_source(const std::string& arch_id,
                                          const std::filesystem::path& source_root,
                                          const TrainConfig& cfg,
                                          const std::filesystem::path& out_file,
                                          Scale scale = Scale::mini,
                                          const std::function<void(const EpochMetrics&)>& on_epoch = {});

struct TransferResult {
    std::vector<EpochMetrics> metrics;
    Model model;
    uint64_t feature_hash_before = 0;
    uint64_t feature_hash_after = 0;
    std::vector<std::string> classes;
    SplitDataset data_split;
};

/// Loads pretrained parameters, swaps the head for the target classes and
/// fits under cfg.freeze_policy (fixed_extractor reproduces the transfer
/// protocol; the pretrained features then stay bit-identical).
TransferResult transfer(const std::string& arch_id, const std::filesystem::path& weights_file,
                        const std::filesystem::path& target_root, const TrainConfig& cfg,
                        Scale scale = Scale::mini,
                        const std::function<void(const EpochMetrics&)>& on_epoch = {});

} // namespace charbench

#endif
