#ifndef CHARBENCH_ARCH_HPP
#define CHARBENCH_ARCH_HPP

#include <map>
#include <string>
#include <vector>

#include "charbench/ops.hpp"

namespace charbench {

// Declarative layer description. Composite kinds (dense_block,
// inception_block, transition) are lowered to primitive ops by expand();
// concat_block only appears inside composites and is rejected in a plain
// sequential position.
enum class LayerKind {
    conv,
    linear,
    relu,
    maxpool,
    adaptive_avgpool,
    batchnorm,
    dropout,
    flatten,
    concat_block,
    inception_block,
    dense_block,
    transition,
};

struct LayerSpec {
    LayerKind kind;
    std::string name; // unique within an ArchSpec
    std::map<std::string, double> hyper;
};

enum class Scale { full, mini };

std::string to_string(Scale s);
Scale parse_scale(const std::string& s);

struct ArchSpec {
    std::string model_id;
    Scale scale = Scale::mini;
    Int2 input_size{224, 224};
    std::vector<LayerSpec> feature_layers;
    std::vector<LayerSpec> classifier_layers;
    int num_classes = 2;
};

// ---- expanded execution plan ----

enum class OpKind {
    conv,
    linear,
    relu,
    maxpool,
    avgpool,
    adaptive_avgpool,
    batchnorm,
    dropout,
    flatten,
    concat,
};

struct ParamShape {
    std::string name;
    Shape shape;
    bool is_buffer = false; // batchnorm running stats
};

struct PlanOp {
    OpKind kind;
    std::string name;
    std::vector<int> inputs; // producer op indices; -1 is the network input
    Int2 kernel{1, 1};
    Int2 stride{1, 1};
    Int2 pad{0, 0};
    Int2 out_hw{1, 1}; // adaptive pool target
    float p = 0.5f;    // dropout probability
    float momentum = 0.1f;
    float eps = 1e-5f;
    bool has_bias = true;
    Shape out_shape; // per-sample: [C,H,W], or [F] after flatten
    std::vector<ParamShape> params;
    bool in_classifier = false;
};

struct NetPlan {
    std::string model_id;
    Scale scale = Scale::mini;
    Int2 input_size{224, 224};
    int num_classes = 2;
    std::vector<PlanOp> ops;  // topological order; last op emits the logits
    int classifier_begin = 0; // index of the first classifier op
    int64_t classifier_in_features = 0;
};

/// Lowers an ArchSpec to primitive ops, inferring every shape from
/// input_size. Throws ShapeError naming the first inconsistent layer.
NetPlan expand(const ArchSpec& spec);

/// Exact number of parameter elements (weights, biases, batchnorm affine).
int64_t param_count(const ArchSpec& spec);

/// Flattened width at the feature/classifier boundary.
int64_t classifier_in_features(const ArchSpec& spec);

/// In-features of the last linear layer (the final hidden width).
int64_t final_hidden_width(const NetPlan& plan);

// ---- model zoo ----

/// Table-order ids: alexnet, densenet_121, densenet_201, vgg_11, vgg_16,
/// vgg_19, inception_v3.
const std::vector<std::string>& zoo_model_ids();

/// Accepts the canonical ids plus compact aliases (densenet121, vgg16, ...).
std::string canonical_model_id(const std::string& id);

/// Canonical input edge: full scale 224 (299 for inception_v3), mini 64.
Int2 canonical_input_size(const std::string& model_id, Scale scale);

/// Published topology at full scale; same block structure with reduced
/// widths/depths at mini scale.
ArchSpec zoo_spec(const std::string& model_id, Scale scale, int num_classes);

} // namespace charbench

#endif
