#include "charbench/train.hpp"

#include <chrono>
#include <cmath>

namespace charbench {

void TrainConfig::validate() const {
    if (batch_size < 1) throw ValueError(cat("batch_size must be >= 1, got ", batch_size));
    if (!(lr > 0.0)) throw ValueError(cat("lr must be > 0, got ", lr));
    if (!(momentum >= 0.0 && momentum < 1.0)) {
        throw ValueError(cat("momentum must be in [0,1), got ", momentum));
    }
    if (!(gamma > 0.0 && gamma <= 1.0)) throw ValueError(cat("gamma must be in (0,1], got ", gamma));
    if (step_size < 1) throw ValueError(cat("step_size must be >= 1, got ", step_size));
    if (epochs < 1) throw ValueError(cat("epochs must be >= 1, got ", epochs));
}

std::vector<float>& OptimizerState::velocity_for(const std::string& name, size_t size) {
    auto it = velocity_.find(name);
    if (it == velocity_.end()) it = velocity_.emplace(name, std::vector<float>(size, 0.0f)).first;
    if (it->second.size() != size) {
        throw ValueError(cat("velocity for '", name, "' has length ", it->second.size(),
                             ", parameter has ", size));
    }
    return it->second;
}

double step_lr(double base_lr, int epoch, int step_size, double gamma) {
    if (epoch < 0) throw ValueError(cat("epoch must be >= 0, got ", epoch));
    return base_lr * std::pow(gamma, static_cast<double>(epoch / step_size));
}

void sgd_step(ParamStore& params, OptimizerState& state, double lr, double momentum) {
    for (auto& [name, e] : params.entries()) {
        if (e.is_buffer) continue;
        if (e.frozen) {
            state.drop(name); // no velocity entry ever exists for frozen params
            continue;
        }
        if (!e.tensor.has_grad()) {
            throw ValueError(cat("trainable parameter '", name, "' has no gradient"));
        }
        auto g = e.tensor.grad();
        auto p = e.tensor.data();
        auto& v = state.velocity_for(name, p.size());
        const float mu = static_cast<float>(momentum);
        const float step = static_cast<float>(lr);
        for (size_t i = 0; i < p.size(); ++i) {
            v[i] = mu * v[i] + g[i];
            p[i] -= step * v[i];
        }
        e.tensor.zero_grad();
    }
}

PhaseStats run_epoch(Model& model, OptimizerState& state, std::span<const Sample> part,
                     const TransformConfig& tcfg, const TrainConfig& cfg, int epoch, double lr,
                     Phase phase) {
    if (part.empty()) throw ValueError("run_epoch needs a non-empty sample list");
    const bool training = phase == Phase::train;
    auto order = epoch_order(part.size(), cfg.seed, epoch, training);
    BatchStream stream(part, tcfg, cfg.batch_size, std::move(order), env_worker_threads());
    Rng dropout_rng(
        hash_combine(cfg.seed, hash_combine(hash_str("dropout"), static_cast<uint64_t>(epoch))));

    double loss_sum = 0.0;
    int64_t correct = 0, total = 0;
    while (auto batch = stream.next()) {
        const int n = batch->images.dim(0);
        std::vector<int> predictions;
        if (training) {
            Tape tape;
            Tensor logits = model.forward(&tape, batch->images, Phase::train, &dropout_rng);
            Tensor loss = softmax_cross_entropy(&tape, logits, batch->labels);
            backward(loss, tape);
            sgd_step(model.params(), state, lr, cfg.momentum);
            loss_sum += static_cast<double>(loss.item()) * n;
            predictions = argmax_rows(logits);
        } else {
            Tensor logits = model.forward(nullptr, batch->images, Phase::eval);
            Tensor loss = softmax_cross_entropy(nullptr, logits, batch->labels);
            loss_sum += static_cast<double>(loss.item()) * n;
            predictions = argmax_rows(logits);
        }
        for (int i = 0; i < n; ++i) {
            correct += predictions[static_cast<size_t>(i)] == batch->labels[static_cast<size_t>(i)];
        }
        total += n;
    }

    PhaseStats out;
    out.samples = total;
    out.loss = loss_sum / static_cast<double>(total);
    out.accuracy = static_cast<double>(correct) / static_cast<double>(total);
    return out;
}

TransformConfig transform_for(const Model& model) {
    TransformConfig tcfg;
    tcfg.target_size = model.plan().input_size;
    return tcfg;
}

std::vector<EpochMetrics> fit(Model& model, const SplitDataset& data, const TrainConfig& cfg,
                              const std::function<void(const EpochMetrics&)>& on_epoch) {
    cfg.validate();
    if (data.train.empty() || data.test.empty()) {
        throw ValueError("fit needs non-empty train and test splits");
    }
    const TransformConfig tcfg = transform_for(model);
    OptimizerState state;
    std::vector<EpochMetrics> metrics;
    metrics.reserve(static_cast<size_t>(cfg.epochs));
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = step_lr(cfg.lr, epoch, cfg.step_size, cfg.gamma);
        const auto t0 = std::chrono::steady_clock::now();
        PhaseStats train = run_epoch(model, state, data.train, tcfg, cfg, epoch, lr, Phase::train);
        PhaseStats valid = run_epoch(model, state, data.test, tcfg, cfg, epoch, lr, Phase::eval);
        const auto t1 = std::chrono::steady_clock::now();

        EpochMetrics m;
        m.epoch = epoch;
        m.train_loss = train.loss;
        m.train_accuracy = train.accuracy;
        m.valid_accuracy = valid.accuracy;
        m.lr_used = lr;
        m.wall_seconds = std::chrono::duration<double>(t1 - t0).count();
        metrics.push_back(m);
        if (on_epoch) on_epoch(m);
    }
    return metrics;
}

std::vector<EpochMetrics> pretrain_source(const std::string& arch_id,
                                          const std::filesystem::path& source_root,
                                          const TrainConfig& cfg,
                                          const std::filesystem::path& out_file, Scale scale,
                                          const std::function<void(const EpochMetrics&)>& on_epoch) {
    cfg.validate();
    const LabeledDataset ds = ingest(source_root);
    const SplitDataset sp = split(ds, 0.85, cfg.seed);
    Model model(zoo_spec(arch_id, scale, static_cast<int>(ds.classes.size())), cfg.seed);
    model.set_freeze_policy(FreezePolicy::full_finetune);
    std::vector<EpochMetrics> metrics = fit(model, sp, cfg, on_epoch);
    save_params(model.params(), out_file);
    return metrics;
}

TransferResult transfer(const std::string& arch_id, const std::filesystem::path& weights_file,
                        const std::filesystem::path& target_root, const TrainConfig& cfg,
                        Scale scale, const std::function<void(const EpochMetrics&)>& on_epoch) {
    cfg.validate();
    const LabeledDataset ds = ingest(target_root);
    const SplitDataset sp = split(ds, 0.85, cfg.seed);

    // head width in the file tells us how many classes the source task had
    const NetPlan probe = expand(zoo_spec(arch_id, scale, 2));
    const std::string head_weight = probe.ops.back().params.at(0).name;
    int source_classes = -1;
    for (const auto& [name, shape] : inspect_params(weights_file)) {
        if (name == head_weight && shape.size() == 2) source_classes = shape[0];
    }
    if (source_classes < 2) {
        throw IoError(cat("'", weights_file.string(), "' does not hold ", arch_id,
                          " parameters (no ", head_weight, " entry)"));
    }

    Model model(zoo_spec(arch_id, scale, source_classes), cfg.seed);
    load_params(weights_file, model.params());
    model.replace_head(static_cast<int>(ds.classes.size()), cfg.seed);
    model.set_freeze_policy(cfg.freeze_policy);

    TransferResult result{{}, std::move(model), 0, 0, ds.classes, sp};
    result.feature_hash_before = result.model.feature_hash();
    result.metrics = fit(result.model, sp, cfg, on_epoch);
    result.feature_hash_after = result.model.feature_hash();
    return result;
}

} // namespace charbench
