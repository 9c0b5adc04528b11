#include "charbench/network.hpp"

#include <algorithm>
#include <cmath>

namespace charbench {

ParamEntry& ParamStore::add(const std::string& name, ParamEntry entry) {
    auto [it, inserted] = entries_.emplace(name, std::move(entry));
    if (!inserted) throw ValueError(cat("duplicate parameter '", name, "'"));
    return it->second;
}

void ParamStore::remove(const std::string& name) {
    if (entries_.erase(name) == 0) throw ValueError(cat("unknown parameter '", name, "'"));
}

ParamEntry& ParamStore::at(const std::string& name) {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw ValueError(cat("unknown parameter '", name, "'"));
    return it->second;
}

const ParamEntry& ParamStore::at(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw ValueError(cat("unknown parameter '", name, "'"));
    return it->second;
}

void ParamStore::zero_grads() {
    for (auto& [name, e] : entries_) {
        if (e.tensor.has_grad()) e.tensor.zero_grad();
    }
}

int64_t ParamStore::trainable_count() const {
    int64_t n = 0;
    for (const auto& [name, e] : entries_) {
        if (!e.is_buffer && !e.frozen) ++n;
    }
    return n;
}

int64_t ParamStore::frozen_count() const {
    int64_t n = 0;
    for (const auto& [name, e] : entries_) {
        if (!e.is_buffer && e.frozen) ++n;
    }
    return n;
}

uint64_t ParamStore::value_hash(
    const std::function<bool(const std::string&, const ParamEntry&)>& filter) const {
    uint64_t h = 0xcbf29ce484222325ULL;
    auto feed = [&h](const void* data, size_t len) {
        const auto* p = static_cast<const unsigned char*>(data);
        for (size_t i = 0; i < len; ++i) {
            h ^= p[i];
            h *= 0x100000001b3ULL;
        }
    };
    for (const auto& [name, e] : entries_) {
        if (filter && !filter(name, e)) continue;
        feed(name.data(), name.size());
        auto d = e.tensor.data();
        feed(d.data(), d.size() * sizeof(float));
    }
    return h;
}

std::string to_string(FreezePolicy p) {
    return p == FreezePolicy::fixed_extractor ? "fixed_extractor" : "full_finetune";
}

FreezePolicy parse_freeze_policy(const std::string& s) {
    if (s == "fixed_extractor") return FreezePolicy::fixed_extractor;
    if (s == "full_finetune") return FreezePolicy::full_finetune;
    throw ValueError(cat("unknown freeze policy '", s, "' (expected fixed_extractor|full_finetune)"));
}

Tensor init_param(const ParamShape& p, uint64_t init_seed) {
    Rng rng(hash_combine(init_seed, hash_str(p.name)));
    const std::string leaf = p.name.substr(p.name.rfind('.') + 1);
    const int64_t n = shape_numel(p.shape);
    std::vector<float> v(static_cast<size_t>(n));

    if (leaf == "gamma" || leaf == "running_var") {
        std::fill(v.begin(), v.end(), 1.0f);
    } else if (leaf == "beta" || leaf == "running_mean") {
        std::fill(v.begin(), v.end(), 0.0f);
    } else if (leaf == "weight") {
        // Kaiming-uniform, fan-in: bound = gain * sqrt(3/fan_in), relu gain
        int64_t fan_in = 1;
        for (size_t i = 1; i < p.shape.size(); ++i) fan_in *= p.shape[i];
        const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
        for (auto& x : v) x = static_cast<float>(rng.uniform(-bound, bound));
    } else if (leaf == "bias") {
        // small uniform band around zero, scaled by the layer width
        const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<int64_t>(n, 1)));
        for (auto& x : v) x = static_cast<float>(rng.uniform(-bound, bound));
    } else {
        throw ValueError(cat("parameter '", p.name, "' has no init rule"));
    }
    return Tensor(p.shape, std::move(v));
}

Model::Model(const ArchSpec& spec, uint64_t init_seed) : Model(expand(spec), init_seed) {}

Model::Model(NetPlan plan, uint64_t init_seed)
    : plan_(std::move(plan)), params_(std::make_unique<ParamStore>()) {
    allocate_params(init_seed);
}

void Model::allocate_params(uint64_t init_seed) {
    for (size_t i = 0; i < plan_.ops.size(); ++i) {
        const PlanOp& op = plan_.ops[i];
        for (const ParamShape& p : op.params) {
            ParamEntry e;
            e.tensor = init_param(p, init_seed);
            e.is_buffer = p.is_buffer;
            if (!e.is_buffer) e.tensor.set_requires_grad(true);
            params_->add(p.name, std::move(e));
            if (!op.in_classifier) feature_param_names_.push_back(p.name);
        }
    }
}

bool Model::is_feature_param(const std::string& name) const {
    return std::find(feature_param_names_.begin(), feature_param_names_.end(), name) !=
           feature_param_names_.end();
}

Tensor Model::forward(Tape* tape, const Tensor& input, Phase phase, Rng* dropout_rng) const {
    if (input.rank() != 4) {
        throw ShapeError(cat("model input must be [N,C,H,W], got ", shape_str(input.shape())));
    }
    if (input.dim(1) != 3 || input.dim(2) != plan_.input_size.h ||
        input.dim(3) != plan_.input_size.w) {
        throw ShapeError(cat("model '", plan_.model_id, "' expects [N,3,", plan_.input_size.h, ",",
                             plan_.input_size.w, "], got ", shape_str(input.shape())));
    }

    std::vector<Tensor> acts(plan_.ops.size());
    auto act = [&](int idx) -> const Tensor& { return idx < 0 ? input : acts[static_cast<size_t>(idx)]; };

    for (size_t i = 0; i < plan_.ops.size(); ++i) {
        const PlanOp& op = plan_.ops[i];
        const Tensor& x = act(op.inputs[0]);
        switch (op.kind) {
        case OpKind::conv: {
            const Tensor& w = params_->at(op.params[0].name).tensor;
            Tensor b = op.has_bias ? params_->at(op.params[1].name).tensor : Tensor();
            acts[i] = conv2d(tape, x, w, b, op.stride, op.pad);
            break;
        }
        case OpKind::linear: {
            const Tensor& w = params_->at(op.params[0].name).tensor;
            Tensor b = op.has_bias ? params_->at(op.params[1].name).tensor : Tensor();
            acts[i] = linear(tape, x, w, b);
            break;
        }
        case OpKind::relu:
            acts[i] = relu(tape, x);
            break;
        case OpKind::maxpool:
            acts[i] = maxpool2d(tape, x, op.kernel, op.stride, op.pad);
            break;
        case OpKind::avgpool:
            acts[i] = avgpool2d(tape, x, op.kernel, op.stride, op.pad);
            break;
        case OpKind::adaptive_avgpool:
            acts[i] = adaptive_avgpool2d(tape, x, op.out_hw);
            break;
        case OpKind::batchnorm: {
            ParamEntry& gamma = params_->at(op.params[0].name);
            ParamEntry& beta = params_->at(op.params[1].name);
            BatchNormStats stats{params_->at(op.params[2].name).tensor,
                                 params_->at(op.params[3].name).tensor};
            const Phase eff = (phase == Phase::train && !gamma.frozen) ? Phase::train : Phase::eval;
            acts[i] = batchnorm2d(tape, x, gamma.tensor, beta.tensor, stats, eff, op.momentum,
                                  op.eps);
            break;
        }
        case OpKind::dropout:
            if (phase == Phase::train) {
                if (!dropout_rng) {
                    throw ValueError(cat("op '", op.name,
                                         "': train-phase forward needs a dropout rng"));
                }
                acts[i] = dropout(tape, x, op.p, Phase::train, *dropout_rng);
            } else {
                acts[i] = x;
            }
            break;
        case OpKind::flatten:
            acts[i] = flatten(tape, x);
            break;
        case OpKind::concat: {
            std::vector<Tensor> ins;
            ins.reserve(op.inputs.size());
            for (int idx : op.inputs) ins.push_back(act(idx));
            acts[i] = concat_channels(tape, ins);
            break;
        }
        }
    }
    return acts.back();
}

void Model::replace_head(int num_classes, uint64_t init_seed) {
    if (num_classes < 2) throw ValueError(cat("num_classes must be >= 2, got ", num_classes));
    if (plan_.ops.empty() || plan_.ops.back().kind != OpKind::linear) {
        throw ValueError("replace_head expects the plan to end with a linear layer");
    }
    PlanOp& head = plan_.ops.back();
    const int in_features = head.params[0].shape.at(1);
    head.out_shape = {num_classes};
    head.params[0].shape = Shape{num_classes, in_features};
    if (head.has_bias) head.params[1].shape = Shape{num_classes};
    plan_.num_classes = num_classes;

    for (const ParamShape& p : head.params) {
        if (params_->contains(p.name)) params_->remove(p.name);
        ParamEntry e;
        e.tensor = init_param(p, init_seed);
        e.tensor.set_requires_grad(true);
        e.frozen = false;
        params_->add(p.name, std::move(e));
    }
}

void Model::set_freeze_policy(FreezePolicy policy) {
    for (auto& [name, e] : params_->entries()) {
        if (e.is_buffer) continue;
        const bool freeze =
            policy == FreezePolicy::fixed_extractor ? is_feature_param(name) : false;
        e.frozen = freeze;
        e.tensor.set_requires_grad(!freeze);
    }
}

uint64_t Model::feature_hash() const {
    return params_->value_hash(
        [this](const std::string& name, const ParamEntry&) { return is_feature_param(name); });
}

uint64_t Model::head_hash() const {
    return params_->value_hash(
        [this](const std::string& name, const ParamEntry&) { return !is_feature_param(name); });
}

} // namespace charbench
