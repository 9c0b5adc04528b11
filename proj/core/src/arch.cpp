#include "charbench/arch.hpp"

#include <algorithm>
#include <set>

namespace charbench {

std::string to_string(Scale s) { return s == Scale::full ? "full" : "mini"; }

Scale parse_scale(const std::string& s) {
    if (s == "full") return Scale::full;
    if (s == "mini") return Scale::mini;
    throw ValueError(cat("unknown scale '", s, "' (expected full|mini)"));
}

namespace {

double hyper_get(const LayerSpec& l, const std::string& key) {
    auto it = l.hyper.find(key);
    if (it == l.hyper.end()) {
        throw ValueError(cat("layer '", l.name, "': missing hyperparameter '", key, "'"));
    }
    return it->second;
}

int hyper_int(const LayerSpec& l, const std::string& key) {
    return static_cast<int>(hyper_get(l, key));
}

int hyper_int_or(const LayerSpec& l, const std::string& key, int fallback) {
    auto it = l.hyper.find(key);
    return it == l.hyper.end() ? fallback : static_cast<int>(it->second);
}

double hyper_or(const LayerSpec& l, const std::string& key, double fallback) {
    auto it = l.hyper.find(key);
    return it == l.hyper.end() ? fallback : it->second;
}

/// kernel/stride/pad pairs: "<key>" declares a square value, "<key>_h"/"<key>_w"
/// an asymmetric one.
Int2 hyper_pair(const LayerSpec& l, const std::string& key, int fallback = -1) {
    auto ith = l.hyper.find(key + "_h");
    auto itw = l.hyper.find(key + "_w");
    if (ith != l.hyper.end() || itw != l.hyper.end()) {
        if (ith == l.hyper.end() || itw == l.hyper.end()) {
            throw ValueError(cat("layer '", l.name, "': '", key, "_h' and '", key,
                                 "_w' must be given together"));
        }
        return {static_cast<int>(ith->second), static_cast<int>(itw->second)};
    }
    auto it = l.hyper.find(key);
    if (it != l.hyper.end()) {
        int v = static_cast<int>(it->second);
        return {v, v};
    }
    if (fallback >= 0) return {fallback, fallback};
    throw ValueError(cat("layer '", l.name, "': missing hyperparameter '", key, "'"));
}

class PlanBuilder {
public:
    explicit PlanBuilder(const ArchSpec& spec) : spec_(spec) {
        plan_.model_id = spec.model_id;
        plan_.scale = spec.scale;
        plan_.input_size = spec.input_size;
        plan_.num_classes = spec.num_classes;
    }

    NetPlan build() {
        int cur = -1;
        for (const LayerSpec& l : spec_.feature_layers) cur = lower(l, cur, false);
        plan_.classifier_begin = static_cast<int>(plan_.ops.size());
        plan_.classifier_in_features = shape_numel(shape_of(cur));
        for (const LayerSpec& l : spec_.classifier_layers) cur = lower(l, cur, true);
        if (plan_.ops.empty()) throw ValueError("architecture has no layers");
        const Shape& out = plan_.ops.back().out_shape;
        if (out.size() != 1 || out[0] != spec_.num_classes) {
            throw ShapeError(cat("network output ", shape_str(out), " does not match num_classes ",
                                 spec_.num_classes));
        }
        return std::move(plan_);
    }

private:
    const ArchSpec& spec_;
    NetPlan plan_;
    std::set<std::string> names_;
    bool in_classifier_ = false;

    Shape shape_of(int idx) const {
        if (idx < 0) return Shape{3, spec_.input_size.h, spec_.input_size.w};
        return plan_.ops[static_cast<size_t>(idx)].out_shape;
    }

    Shape image_shape(int idx, const std::string& name) const {
        Shape s = shape_of(idx);
        if (s.size() != 3) {
            throw ShapeError(cat("layer '", name, "': expected a CxHxW input, got ", shape_str(s)));
        }
        return s;
    }

    int emit(PlanOp op) {
        if (!names_.insert(op.name).second) {
            throw ValueError(cat("duplicate layer name '", op.name, "'"));
        }
        op.in_classifier = in_classifier_;
        plan_.ops.push_back(std::move(op));
        return static_cast<int>(plan_.ops.size()) - 1;
    }

    int add_conv(const std::string& name, int cur, int out_ch, Int2 k, Int2 s, Int2 p, bool bias,
                 int declared_in = -1) {
        Shape in = image_shape(cur, name);
        if (declared_in >= 0 && declared_in != in[0]) {
            throw ShapeError(cat("layer '", name, "': declared in_ch ", declared_in,
                                 " but incoming tensor has ", in[0], " channels"));
        }
        PlanOp op;
        op.kind = OpKind::conv;
        op.name = name;
        op.inputs = {cur};
        op.kernel = k;
        op.stride = s;
        op.pad = p;
        op.has_bias = bias;
        int ho, wo;
        try {
            ho = conv_out_extent(in[1], k.h, s.h, p.h, "height");
            wo = conv_out_extent(in[2], k.w, s.w, p.w, "width");
        } catch (const std::exception& e) {
            throw ShapeError(cat("layer '", name, "': ", e.what()));
        }
        op.out_shape = {out_ch, ho, wo};
        op.params.push_back({name + ".weight", Shape{out_ch, in[0], k.h, k.w}, false});
        if (bias) op.params.push_back({name + ".bias", Shape{out_ch}, false});
        return emit(std::move(op));
    }

    int add_bn(const std::string& name, int cur, float momentum = 0.1f, float eps = 1e-5f) {
        Shape in = image_shape(cur, name);
        PlanOp op;
        op.kind = OpKind::batchnorm;
        op.name = name;
        op.inputs = {cur};
        op.momentum = momentum;
        op.eps = eps;
        op.out_shape = in;
        op.params.push_back({name + ".gamma", Shape{in[0]}, false});
        op.params.push_back({name + ".beta", Shape{in[0]}, false});
        op.params.push_back({name + ".running_mean", Shape{in[0]}, true});
        op.params.push_back({name + ".running_var", Shape{in[0]}, true});
        return emit(std::move(op));
    }

    int add_relu(const std::string& name, int cur) {
        PlanOp op;
        op.kind = OpKind::relu;
        op.name = name;
        op.inputs = {cur};
        op.out_shape = shape_of(cur);
        return emit(std::move(op));
    }

    int add_pool(OpKind kind, const std::string& name, int cur, Int2 k, Int2 s, Int2 p) {
        Shape in = image_shape(cur, name);
        PlanOp op;
        op.kind = kind;
        op.name = name;
        op.inputs = {cur};
        op.kernel = k;
        op.stride = s;
        op.pad = p;
        int ho, wo;
        try {
            ho = conv_out_extent(in[1], k.h, s.h, p.h, "height");
            wo = conv_out_extent(in[2], k.w, s.w, p.w, "width");
        } catch (const std::exception& e) {
            throw ShapeError(cat("layer '", name, "': ", e.what()));
        }
        op.out_shape = {in[0], ho, wo};
        return emit(std::move(op));
    }

    int add_adaptive(const std::string& name, int cur, Int2 out_hw) {
        Shape in = image_shape(cur, name);
        if (out_hw.h < 1 || out_hw.w < 1 || out_hw.h > in[1] || out_hw.w > in[2]) {
            throw ShapeError(cat("layer '", name, "': adaptive pool target ", out_hw.h, "x",
                                 out_hw.w, " not within input ", in[1], "x", in[2]));
        }
        PlanOp op;
        op.kind = OpKind::adaptive_avgpool;
        op.name = name;
        op.inputs = {cur};
        op.out_hw = out_hw;
        op.out_shape = {in[0], out_hw.h, out_hw.w};
        return emit(std::move(op));
    }

    int add_concat(const std::string& name, const std::vector<int>& inputs) {
        int channels = 0;
        Shape first = image_shape(inputs.at(0), name);
        for (int idx : inputs) {
            Shape s = image_shape(idx, name);
            if (s[1] != first[1] || s[2] != first[2]) {
                throw ShapeError(cat("layer '", name, "': spatial mismatch ", shape_str(s), " vs ",
                                     shape_str(first)));
            }
            channels += s[0];
        }
        PlanOp op;
        op.kind = OpKind::concat;
        op.name = name;
        op.inputs = inputs;
        op.out_shape = {channels, first[1], first[2]};
        return emit(std::move(op));
    }

    int add_flatten(const std::string& name, int cur) {
        PlanOp op;
        op.kind = OpKind::flatten;
        op.name = name;
        op.inputs = {cur};
        op.out_shape = {static_cast<int>(shape_numel(shape_of(cur)))};
        return emit(std::move(op));
    }

    int add_dropout(const std::string& name, int cur, float p) {
        if (p < 0.0f || p >= 1.0f) {
            throw ValueError(cat("layer '", name, "': dropout p must be in [0,1), got ", p));
        }
        PlanOp op;
        op.kind = OpKind::dropout;
        op.name = name;
        op.inputs = {cur};
        op.p = p;
        op.out_shape = shape_of(cur);
        return emit(std::move(op));
    }

    int add_linear(const std::string& name, int cur, int out_features, bool bias,
                   int declared_in = -1) {
        Shape in = shape_of(cur);
        if (in.size() != 1) {
            throw ShapeError(cat("layer '", name, "': linear needs a flattened input, got ",
                                 shape_str(in)));
        }
        if (declared_in >= 0 && declared_in != in[0]) {
            throw ShapeError(cat("layer '", name, "': declared in_features ", declared_in,
                                 " but incoming width is ", in[0]));
        }
        PlanOp op;
        op.kind = OpKind::linear;
        op.name = name;
        op.inputs = {cur};
        op.has_bias = bias;
        op.out_shape = {out_features};
        op.params.push_back({name + ".weight", Shape{out_features, in[0]}, false});
        if (bias) op.params.push_back({name + ".bias", Shape{out_features}, false});
        return emit(std::move(op));
    }

    /// conv (no bias) + batchnorm + relu, the unit every inception branch and
    /// densenet stem is made of.
    int add_conv_bn_relu(const std::string& prefix, int cur, int out_ch, Int2 k, Int2 s, Int2 p) {
        cur = add_conv(prefix + ".conv", cur, out_ch, k, s, p, /*bias=*/false);
        cur = add_bn(prefix + ".bn", cur);
        return add_relu(prefix + ".relu", cur);
    }

    int lower_dense_block(const LayerSpec& l, int cur) {
        const int num_layers = hyper_int(l, "num_layers");
        const int growth = hyper_int(l, "growth_rate");
        const int bn_size = hyper_int(l, "bn_size");
        for (int i = 1; i <= num_layers; ++i) {
            const std::string lp = cat(l.name, ".layer", i);
            int c = add_bn(lp + ".norm1", cur);
            c = add_relu(lp + ".relu1", c);
            c = add_conv(lp + ".conv1", c, bn_size * growth, {1, 1}, {1, 1}, {0, 0}, false);
            c = add_bn(lp + ".norm2", c);
            c = add_relu(lp + ".relu2", c);
            c = add_conv(lp + ".conv2", c, growth, {3, 3}, {1, 1}, {1, 1}, false);
            cur = add_concat(lp + ".concat", {cur, c});
        }
        return cur;
    }

    int lower_transition(const LayerSpec& l, int cur) {
        const int out_ch = hyper_int(l, "out_ch");
        cur = add_bn(l.name + ".norm", cur);
        cur = add_relu(l.name + ".relu", cur);
        cur = add_conv(l.name + ".conv", cur, out_ch, {1, 1}, {1, 1}, {0, 0}, false);
        return add_pool(OpKind::avgpool, l.name + ".pool", cur, {2, 2}, {2, 2}, {0, 0});
    }

    int lower_inception(const LayerSpec& l, int cur) {
        const int variant = hyper_int(l, "variant"); // 1..5 for a..e
        const int div = hyper_int_or(l, "div", 1);
        auto ch = [div](int full) { return full / div; };
        const std::string& n = l.name;
        std::vector<int> branches;

        switch (variant) {
        case 1: { // 1x1 | 5x5 | double 3x3 | avgpool+1x1
            const int pool_ch = hyper_int(l, "pool_ch");
            branches.push_back(add_conv_bn_relu(n + ".branch1x1", cur, ch(64), {1, 1}, {1, 1}, {0, 0}));
            int b = add_conv_bn_relu(n + ".branch5x5_1", cur, ch(48), {1, 1}, {1, 1}, {0, 0});
            branches.push_back(add_conv_bn_relu(n + ".branch5x5_2", b, ch(64), {5, 5}, {1, 1}, {2, 2}));
            b = add_conv_bn_relu(n + ".branch3x3dbl_1", cur, ch(64), {1, 1}, {1, 1}, {0, 0});
            b = add_conv_bn_relu(n + ".branch3x3dbl_2", b, ch(96), {3, 3}, {1, 1}, {1, 1});
            branches.push_back(add_conv_bn_relu(n + ".branch3x3dbl_3", b, ch(96), {3, 3}, {1, 1}, {1, 1}));
            b = add_pool(OpKind::avgpool, n + ".branch_pool.avg", cur, {3, 3}, {1, 1}, {1, 1});
            branches.push_back(add_conv_bn_relu(n + ".branch_pool", b, ch(pool_ch), {1, 1}, {1, 1}, {0, 0}));
            break;
        }
        case 2: { // grid reduction: 3x3/2 | double 3x3/2 | maxpool
            branches.push_back(add_conv_bn_relu(n + ".branch3x3", cur, ch(384), {3, 3}, {2, 2}, {0, 0}));
            int b = add_conv_bn_relu(n + ".branch3x3dbl_1", cur, ch(64), {1, 1}, {1, 1}, {0, 0});
            b = add_conv_bn_relu(n + ".branch3x3dbl_2", b, ch(96), {3, 3}, {1, 1}, {1, 1});
            branches.push_back(add_conv_bn_relu(n + ".branch3x3dbl_3", b, ch(96), {3, 3}, {2, 2}, {0, 0}));
            branches.push_back(add_pool(OpKind::maxpool, n + ".branch_pool", cur, {3, 3}, {2, 2}, {0, 0}));
            break;
        }
        case 3: { // factorized 7x7
            const int c7 = hyper_int(l, "c7");
            branches.push_back(add_conv_bn_relu(n + ".branch1x1", cur, ch(192), {1, 1}, {1, 1}, {0, 0}));
            int b = add_conv_bn_relu(n + ".branch7x7_1", cur, ch(c7), {1, 1}, {1, 1}, {0, 0});
            b = add_conv_bn_relu(n + ".branch7x7_2", b, ch(c7), {1, 7}, {1, 1}, {0, 3});
            branches.push_back(add_conv_bn_relu(n + ".branch7x7_3", b, ch(192), {7, 1}, {1, 1}, {3, 0}));
            b = add_conv_bn_relu(n + ".branch7x7dbl_1", cur, ch(c7), {1, 1}, {1, 1}, {0, 0});
            b = add_conv_bn_relu(n + ".branch7x7dbl_2", b, ch(c7), {7, 1}, {1, 1}, {3, 0});
            b = add_conv_bn_relu(n + ".branch7x7dbl_3", b, ch(c7), {1, 7}, {1, 1}, {0, 3});
            b = add_conv_bn_relu(n + ".branch7x7dbl_4", b, ch(c7), {7, 1}, {1, 1}, {3, 0});
            branches.push_back(add_conv_bn_relu(n + ".branch7x7dbl_5", b, ch(192), {1, 7}, {1, 1}, {0, 3}));
            b = add_pool(OpKind::avgpool, n + ".branch_pool.avg", cur, {3, 3}, {1, 1}, {1, 1});
            branches.push_back(add_conv_bn_relu(n + ".branch_pool", b, ch(192), {1, 1}, {1, 1}, {0, 0}));
            break;
        }
        case 4: { // grid reduction with factorized 7x7x3
            int b = add_conv_bn_relu(n + ".branch3x3_1", cur, ch(192), {1, 1}, {1, 1}, {0, 0});
            branches.push_back(add_conv_bn_relu(n + ".branch3x3_2", b, ch(320), {3, 3}, {2, 2}, {0, 0}));
            b = add_conv_bn_relu(n + ".branch7x7x3_1", cur, ch(192), {1, 1}, {1, 1}, {0, 0});
            b = add_conv_bn_relu(n + ".branch7x7x3_2", b, ch(192), {1, 7}, {1, 1}, {0, 3});
            b = add_conv_bn_relu(n + ".branch7x7x3_3", b, ch(192), {7, 1}, {1, 1}, {3, 0});
            branches.push_back(add_conv_bn_relu(n + ".branch7x7x3_4", b, ch(192), {3, 3}, {2, 2}, {0, 0}));
            branches.push_back(add_pool(OpKind::maxpool, n + ".branch_pool", cur, {3, 3}, {2, 2}, {0, 0}));
            break;
        }
        case 5: { // expanded filter bank with 1x3/3x1 splits
            branches.push_back(add_conv_bn_relu(n + ".branch1x1", cur, ch(320), {1, 1}, {1, 1}, {0, 0}));
            int b = add_conv_bn_relu(n + ".branch3x3_1", cur, ch(384), {1, 1}, {1, 1}, {0, 0});
            int ba = add_conv_bn_relu(n + ".branch3x3_2a", b, ch(384), {1, 3}, {1, 1}, {0, 1});
            int bb = add_conv_bn_relu(n + ".branch3x3_2b", b, ch(384), {3, 1}, {1, 1}, {1, 0});
            branches.push_back(add_concat(n + ".branch3x3.concat", {ba, bb}));
            b = add_conv_bn_relu(n + ".branch3x3dbl_1", cur, ch(448), {1, 1}, {1, 1}, {0, 0});
            b = add_conv_bn_relu(n + ".branch3x3dbl_2", b, ch(384), {3, 3}, {1, 1}, {1, 1});
            ba = add_conv_bn_relu(n + ".branch3x3dbl_3a", b, ch(384), {1, 3}, {1, 1}, {0, 1});
            bb = add_conv_bn_relu(n + ".branch3x3dbl_3b", b, ch(384), {3, 1}, {1, 1}, {1, 0});
            branches.push_back(add_concat(n + ".branch3x3dbl.concat", {ba, bb}));
            b = add_pool(OpKind::avgpool, n + ".branch_pool.avg", cur, {3, 3}, {1, 1}, {1, 1});
            branches.push_back(add_conv_bn_relu(n + ".branch_pool", b, ch(192), {1, 1}, {1, 1}, {0, 0}));
            break;
        }
        default:
            throw ValueError(cat("layer '", n, "': unknown inception variant ", variant));
        }
        return add_concat(n + ".concat", branches);
    }

    int lower(const LayerSpec& l, int cur, bool classifier) {
        in_classifier_ = classifier;
        switch (l.kind) {
        case LayerKind::conv: {
            Int2 k = hyper_pair(l, "kernel");
            Int2 s = hyper_pair(l, "stride", 1);
            Int2 p = hyper_pair(l, "pad", 0);
            return add_conv(l.name, cur, hyper_int(l, "out_ch"), k, s, p,
                            hyper_or(l, "bias", 1) != 0, hyper_int(l, "in_ch"));
        }
        case LayerKind::linear:
            return add_linear(l.name, cur, hyper_int(l, "out_features"),
                              hyper_or(l, "bias", 1) != 0, hyper_int(l, "in_features"));
        case LayerKind::relu:
            return add_relu(l.name, cur);
        case LayerKind::maxpool:
            return add_pool(OpKind::maxpool, l.name, cur, hyper_pair(l, "kernel"),
                            hyper_pair(l, "stride"), hyper_pair(l, "pad", 0));
        case LayerKind::adaptive_avgpool:
            return add_adaptive(l.name, cur, hyper_pair(l, "out"));
        case LayerKind::batchnorm:
            return add_bn(l.name, cur, static_cast<float>(hyper_or(l, "momentum", 0.1)),
                          static_cast<float>(hyper_or(l, "eps", 1e-5)));
        case LayerKind::dropout:
            return add_dropout(l.name, cur, static_cast<float>(hyper_or(l, "p", 0.5)));
        case LayerKind::flatten:
            return add_flatten(l.name, cur);
        case LayerKind::dense_block:
            return lower_dense_block(l, cur);
        case LayerKind::transition:
            return lower_transition(l, cur);
        case LayerKind::inception_block:
            return lower_inception(l, cur);
        case LayerKind::concat_block:
            throw ValueError(cat("layer '", l.name,
                                 "': concat_block has no second input in a sequential position"));
        }
        throw ValueError(cat("layer '", l.name, "': unhandled kind"));
    }
};

} // namespace

NetPlan expand(const ArchSpec& spec) { return PlanBuilder(spec).build(); }

int64_t param_count(const ArchSpec& spec) {
    NetPlan plan = expand(spec);
    int64_t total = 0;
    for (const PlanOp& op : plan.ops) {
        for (const ParamShape& p : op.params) {
            if (!p.is_buffer) total += shape_numel(p.shape);
        }
    }
    return total;
}

int64_t classifier_in_features(const ArchSpec& spec) { return expand(spec).classifier_in_features; }

int64_t final_hidden_width(const NetPlan& plan) {
    for (auto it = plan.ops.rbegin(); it != plan.ops.rend(); ++it) {
        if (it->kind == OpKind::linear) {
            return it->params.at(0).shape.at(1);
        }
    }
    throw ValueError(cat("plan for '", plan.model_id, "' has no linear layer"));
}

} // namespace charbench
