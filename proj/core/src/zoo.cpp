#include "charbench/arch.hpp"

#include <algorithm>
#include <cctype>

namespace charbench {

namespace {

using H = std::map<std::string, double>;

LayerSpec conv(std::string name, int in_ch, int out_ch, int k, int s = 1, int p = 0) {
    return {LayerKind::conv, std::move(name),
            H{{"in_ch", double(in_ch)}, {"out_ch", double(out_ch)}, {"kernel", double(k)},
              {"stride", double(s)}, {"pad", double(p)}}};
}

LayerSpec conv_nb(std::string name, int in_ch, int out_ch, int k, int s = 1, int p = 0) {
    LayerSpec l = conv(std::move(name), in_ch, out_ch, k, s, p);
    l.hyper["bias"] = 0;
    return l;
}

LayerSpec relu_l(std::string name) { return {LayerKind::relu, std::move(name), {}}; }

LayerSpec maxpool_l(std::string name, int k, int s, int p = 0) {
    return {LayerKind::maxpool, std::move(name),
            H{{"kernel", double(k)}, {"stride", double(s)}, {"pad", double(p)}}};
}

LayerSpec adaptive_l(std::string name, int out) {
    return {LayerKind::adaptive_avgpool, std::move(name), H{{"out", double(out)}}};
}

LayerSpec bn_l(std::string name) { return {LayerKind::batchnorm, std::move(name), {}}; }

LayerSpec dropout_l(std::string name, double p = 0.5) {
    return {LayerKind::dropout, std::move(name), H{{"p", p}}};
}

LayerSpec flatten_l(std::string name) { return {LayerKind::flatten, std::move(name), {}}; }

LayerSpec fc(std::string name, int in_f, int out_f) {
    return {LayerKind::linear, std::move(name),
            H{{"in_features", double(in_f)}, {"out_features", double(out_f)}}};
}

LayerSpec dense_block_l(std::string name, int num_layers, int growth, int bn_size) {
    return {LayerKind::dense_block, std::move(name),
            H{{"num_layers", double(num_layers)}, {"growth_rate", double(growth)},
              {"bn_size", double(bn_size)}}};
}

LayerSpec transition_l(std::string name, int out_ch) {
    return {LayerKind::transition, std::move(name), H{{"out_ch", double(out_ch)}}};
}

LayerSpec inception_l(std::string name, int variant, int div, int pool_ch = 0, int c7 = 0) {
    H h{{"variant", double(variant)}, {"div", double(div)}};
    if (pool_ch) h["pool_ch"] = double(pool_ch);
    if (c7) h["c7"] = double(c7);
    return {LayerKind::inception_block, std::move(name), std::move(h)};
}

ArchSpec alexnet_spec(Scale scale, int num_classes) {
    const bool mini = scale == Scale::mini;
    const int d = mini ? 4 : 1;
    const int pool_out = mini ? 1 : 6;
    const int fc_w = 4096 / d;
    ArchSpec a;
    a.model_id = "alexnet";
    a.scale = scale;
    a.input_size = canonical_input_size("alexnet", scale);
    a.num_classes = num_classes;
    a.feature_layers = {
        conv("features.conv1", 3, 64 / d, 11, 4, 2),
        relu_l("features.relu1"),
        maxpool_l("features.pool1", 3, 2),
        conv("features.conv2", 64 / d, 192 / d, 5, 1, 2),
        relu_l("features.relu2"),
        maxpool_l("features.pool2", 3, 2),
        conv("features.conv3", 192 / d, 384 / d, 3, 1, 1),
        relu_l("features.relu3"),
        conv("features.conv4", 384 / d, 256 / d, 3, 1, 1),
        relu_l("features.relu4"),
        conv("features.conv5", 256 / d, 256 / d, 3, 1, 1),
        relu_l("features.relu5"),
        maxpool_l("features.pool3", 3, 2),
        adaptive_l("features.avgpool", pool_out),
    };
    const int flat = (256 / d) * pool_out * pool_out;
    a.classifier_layers = {
        flatten_l("classifier.flatten"),
        dropout_l("classifier.drop1"),
        fc("classifier.fc1", flat, fc_w),
        relu_l("classifier.relu1"),
        dropout_l("classifier.drop2"),
        fc("classifier.fc2", fc_w, fc_w),
        relu_l("classifier.relu2"),
        fc("classifier.fc3", fc_w, num_classes),
    };
    return a;
}

ArchSpec vgg_spec(const std::string& id, Scale scale, int num_classes) {
    // 'M' entries are 2x2/2 max pools; numbers are 3x3/1/1 conv widths.
    std::vector<int> cfg;
    if (id == "vgg_11") {
        cfg = {64, -1, 128, -1, 256, 256, -1, 512, 512, -1, 512, 512, -1};
    } else if (id == "vgg_16") {
        cfg = {64, 64, -1, 128, 128, -1, 256, 256, 256, -1,
               512, 512, 512, -1, 512, 512, 512, -1};
    } else {
        cfg = {64, 64, -1, 128, 128, -1, 256, 256, 256, 256, -1,
               512, 512, 512, 512, -1, 512, 512, 512, 512, -1};
    }
    const bool mini = scale == Scale::mini;
    const int d = mini ? 4 : 1;
    const int pool_out = mini ? 2 : 7;
    const int fc_w = 4096 / d;
    ArchSpec a;
    a.model_id = id;
    a.scale = scale;
    a.input_size = canonical_input_size(id, scale);
    a.num_classes = num_classes;
    int ch = 3, ci = 0, pi = 0, last = 3;
    for (int v : cfg) {
        if (v < 0) {
            a.feature_layers.push_back(maxpool_l(cat("features.pool", ++pi), 2, 2));
        } else {
            ++ci;
            a.feature_layers.push_back(conv(cat("features.conv", ci), ch, v / d, 3, 1, 1));
            a.feature_layers.push_back(relu_l(cat("features.relu", ci)));
            ch = v / d;
            last = ch;
        }
    }
    a.feature_layers.push_back(adaptive_l("features.avgpool", pool_out));
    const int flat = last * pool_out * pool_out;
    a.classifier_layers = {
        flatten_l("classifier.flatten"),
        fc("classifier.fc1", flat, fc_w),
        relu_l("classifier.relu1"),
        dropout_l("classifier.drop1"),
        fc("classifier.fc2", fc_w, fc_w),
        relu_l("classifier.relu2"),
        dropout_l("classifier.drop2"),
        fc("classifier.fc3", fc_w, num_classes),
    };
    return a;
}

ArchSpec densenet_spec(const std::string& id, Scale scale, int num_classes) {
    const bool mini = scale == Scale::mini;
    std::vector<int> blocks;
    if (id == "densenet_121") {
        blocks = mini ? std::vector<int>{2, 4, 8, 4} : std::vector<int>{6, 12, 24, 16};
    } else {
        blocks = mini ? std::vector<int>{2, 4, 12, 8} : std::vector<int>{6, 12, 48, 32};
    }
    const int growth = mini ? 8 : 32;
    const int init_ch = mini ? 16 : 64;
    const int bn_size = 4;
    ArchSpec a;
    a.model_id = id;
    a.scale = scale;
    a.input_size = canonical_input_size(id, scale);
    a.num_classes = num_classes;
    a.feature_layers = {
        conv_nb("features.conv0", 3, init_ch, 7, 2, 3),
        bn_l("features.norm0"),
        relu_l("features.relu0"),
        maxpool_l("features.pool0", 3, 2, 1),
    };
    int ch = init_ch;
    for (size_t b = 0; b < blocks.size(); ++b) {
        a.feature_layers.push_back(
            dense_block_l(cat("features.denseblock", b + 1), blocks[b], growth, bn_size));
        ch += blocks[b] * growth;
        if (b + 1 < blocks.size()) {
            ch /= 2;
            a.feature_layers.push_back(transition_l(cat("features.transition", b + 1), ch));
        }
    }
    a.feature_layers.push_back(bn_l("features.norm5"));
    a.feature_layers.push_back(relu_l("features.relu5"));
    a.feature_layers.push_back(adaptive_l("features.avgpool", 1));
    a.classifier_layers = {
        flatten_l("classifier.flatten"),
        fc("classifier.fc", ch, num_classes),
    };
    return a;
}

ArchSpec inception_spec(Scale scale, int num_classes) {
    const bool mini = scale == Scale::mini;
    const int d = mini ? 4 : 1;
    ArchSpec a;
    a.model_id = "inception_v3";
    a.scale = scale;
    a.input_size = canonical_input_size("inception_v3", scale);
    a.num_classes = num_classes;
    // The published stem uses unpadded 3x3 convs from a 299x299 input; the
    // mini stem pads them so a 64x64 input still reaches the last blocks
    // with usable extents.
    const int sp = mini ? 1 : 0;
    a.feature_layers = {
        conv_nb("features.stem.conv1", 3, 32 / d, 3, 2, sp),
        bn_l("features.stem.bn1"),
        relu_l("features.stem.relu1"),
        conv_nb("features.stem.conv2", 32 / d, 32 / d, 3, 1, sp),
        bn_l("features.stem.bn2"),
        relu_l("features.stem.relu2"),
        conv_nb("features.stem.conv3", 32 / d, 64 / d, 3, 1, 1),
        bn_l("features.stem.bn3"),
        relu_l("features.stem.relu3"),
        maxpool_l("features.stem.pool1", 3, 2),
        conv_nb("features.stem.conv4", 64 / d, 80 / d, 1, 1, 0),
        bn_l("features.stem.bn4"),
        relu_l("features.stem.relu4"),
        conv_nb("features.stem.conv5", 80 / d, 192 / d, 3, 1, sp),
        bn_l("features.stem.bn5"),
        relu_l("features.stem.relu5"),
        maxpool_l("features.stem.pool2", 3, 2),
    };
    if (mini) {
        // one block per stage, widths scaled down with the rest of the net
        a.feature_layers.push_back(inception_l("features.mixed_a", 1, d, 32));
        a.feature_layers.push_back(inception_l("features.mixed_b", 2, d));
        a.feature_layers.push_back(inception_l("features.mixed_c", 3, d, 0, 192));
        a.feature_layers.push_back(inception_l("features.mixed_d", 4, d));
        a.feature_layers.push_back(inception_l("features.mixed_e", 5, d));
    } else {
        a.feature_layers.push_back(inception_l("features.mixed_5b", 1, 1, 32));
        a.feature_layers.push_back(inception_l("features.mixed_5c", 1, 1, 64));
        a.feature_layers.push_back(inception_l("features.mixed_5d", 1, 1, 64));
        a.feature_layers.push_back(inception_l("features.mixed_6a", 2, 1));
        a.feature_layers.push_back(inception_l("features.mixed_6b", 3, 1, 0, 128));
        a.feature_layers.push_back(inception_l("features.mixed_6c", 3, 1, 0, 160));
        a.feature_layers.push_back(inception_l("features.mixed_6d", 3, 1, 0, 160));
        a.feature_layers.push_back(inception_l("features.mixed_6e", 3, 1, 0, 192));
        a.feature_layers.push_back(inception_l("features.mixed_7a", 4, 1));
        a.feature_layers.push_back(inception_l("features.mixed_7b", 5, 1));
        a.feature_layers.push_back(inception_l("features.mixed_7c", 5, 1));
    }
    a.feature_layers.push_back(adaptive_l("features.avgpool", 1));
    a.classifier_layers = {
        flatten_l("classifier.flatten"),
        dropout_l("classifier.dropout"),
        fc("classifier.fc", 2048 / d, num_classes),
    };
    return a;
}

} // namespace

const std::vector<std::string>& zoo_model_ids() {
    static const std::vector<std::string> ids = {
        "alexnet", "densenet_121", "densenet_201", "vgg_11", "vgg_16", "vgg_19", "inception_v3",
    };
    return ids;
}

std::string canonical_model_id(const std::string& id) {
    std::string s;
    for (char c : id) s += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    for (const std::string& known : zoo_model_ids()) {
        if (s == known) return known;
        std::string compact;
        for (char c : known) {
            if (c != '_') compact += c;
        }
        if (s == compact) return known;
    }
    throw ValueError(cat("unknown model id '", id, "'"));
}

Int2 canonical_input_size(const std::string& model_id, Scale scale) {
    if (scale == Scale::mini) return {64, 64};
    if (canonical_model_id(model_id) == "inception_v3") return {299, 299};
    return {224, 224};
}

ArchSpec zoo_spec(const std::string& model_id, Scale scale, int num_classes) {
    if (num_classes < 2) throw ValueError(cat("num_classes must be >= 2, got ", num_classes));
    const std::string id = canonical_model_id(model_id);
    if (id == "alexnet") return alexnet_spec(scale, num_classes);
    if (id == "vgg_11" || id == "vgg_16" || id == "vgg_19") return vgg_spec(id, scale, num_classes);
    if (id == "densenet_121" || id == "densenet_201") return densenet_spec(id, scale, num_classes);
    return inception_spec(scale, num_classes);
}

} // namespace charbench
