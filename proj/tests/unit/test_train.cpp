#include "doctest.h"

#include <cmath>
#include <fstream>

#include "charbench/synth.hpp"
#include "charbench/train.hpp"

using namespace charbench;
namespace fs = std::filesystem;

namespace {

struct TempTree {
    fs::path root;
    explicit TempTree(const std::string& stem) {
        root = fs::temp_directory_path() / (stem + "_" + std::to_string(::getpid()));
        fs::remove_all(root);
        fs::create_directories(root);
    }
    ~TempTree() { fs::remove_all(root); }
};

ParamStore single_param_store(float value, float grad) {
    ParamStore store;
    ParamEntry e;
    e.tensor = Tensor(Shape{1}, value, true);
    e.tensor.grad()[0] = grad;
    store.add("p", std::move(e));
    return store;
}

/// conv + relu + pool + fc, small enough to train in tests
ArchSpec toy_spec(int num_classes) {
    ArchSpec a;
    a.model_id = "toy";
    a.scale = Scale::mini;
    a.input_size = {8, 8};
    a.num_classes = num_classes;
    a.feature_layers = {
        {LayerKind::conv, "features.conv1",
         {{"in_ch", 3}, {"out_ch", 4}, {"kernel", 3}, {"stride", 1}, {"pad", 1}}},
        {LayerKind::relu, "features.relu1", {}},
        {LayerKind::maxpool, "features.pool1", {{"kernel", 2}, {"stride", 2}}},
    };
    a.classifier_layers = {
        {LayerKind::flatten, "classifier.flatten", {}},
        {LayerKind::linear, "classifier.fc",
         {{"in_features", 4 * 4 * 4}, {"out_features", double(num_classes)}}},
    };
    return a;
}

/// two trivially separable classes: near-black and near-white 32x32 images
void write_black_white_tree(const fs::path& root, int per_class) {
    std::vector<uint8_t> px(32 * 32);
    for (const char* cls : {"class_black", "class_white"}) {
        fs::create_directories(root / cls);
    }
    for (int i = 0; i < per_class; ++i) {
        std::fill(px.begin(), px.end(), static_cast<uint8_t>(8 + (i % 4)));
        write_png_gray8(root / "class_black" / ("img_" + std::to_string(i) + ".png"), 32, 32, px);
        std::fill(px.begin(), px.end(), static_cast<uint8_t>(240 + (i % 4)));
        write_png_gray8(root / "class_white" / ("img_" + std::to_string(i) + ".png"), 32, 32, px);
    }
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

} // namespace

TEST_CASE("step_lr follows base*gamma^floor(epoch/step)") {
    CHECK(step_lr(0.001, 0, 7, 0.1) == 0.001);
    CHECK(step_lr(0.001, 6, 7, 0.1) == 0.001);
    CHECK(step_lr(0.001, 7, 7, 0.1) == doctest::Approx(0.0001).epsilon(1e-12));
    CHECK(step_lr(0.001, 14, 7, 0.1) == doctest::Approx(0.00001).epsilon(1e-12));
    CHECK_THROWS_AS(step_lr(0.001, -1, 7, 0.1), ValueError);
}

TEST_CASE("sgd_step: plain update, freeze contract, missing grad") {
    OptimizerState state;
    ParamStore store = single_param_store(1.0f, 0.5f);
    sgd_step(store, state, 0.1, 0.0);
    CHECK(store.at("p").tensor.data()[0] == doctest::Approx(0.95).epsilon(1e-7));
    // gradient zeroed after the step
    CHECK(store.at("p").tensor.grad()[0] == 0.0f);

    ParamStore frozen = single_param_store(2.0f, 1.0f);
    frozen.at("p").frozen = true;
    OptimizerState s2;
    sgd_step(frozen, s2, 0.1, 0.9);
    CHECK(frozen.at("p").tensor.data()[0] == 2.0f);
    CHECK(s2.size() == 0);

    ParamStore no_grad;
    ParamEntry e;
    e.tensor = Tensor(Shape{1}, 1.0f, false);
    no_grad.add("p", std::move(e));
    OptimizerState s3;
    CHECK_THROWS_WITH_AS(sgd_step(no_grad, s3, 0.1, 0.0), doctest::Contains("no gradient"),
                         ValueError);
}

TEST_CASE("sgd_step velocity recurrence matches its closed form exactly on dyadic values") {
    // mu=0.5, lr=2^-4, g=0.25: every intermediate is a dyadic rational, so
    // float arithmetic is exact and the closed form must match bitwise.
    const double mu = 0.5, lr = 0.0625, g = 0.25;
    ParamStore store = single_param_store(1.0f, static_cast<float>(g));
    OptimizerState state;
    const int k = 5;
    for (int i = 0; i < k; ++i) {
        sgd_step(store, state, lr, mu);
        store.at("p").tensor.grad()[0] = static_cast<float>(g); // constant gradient
    }
    double expected_delta = 0.0;
    for (int i = 1; i <= k; ++i) expected_delta += (1.0 - std::pow(mu, i)) / (1.0 - mu);
    expected_delta *= -lr * g;
    CHECK(store.at("p").tensor.data()[0] == static_cast<float>(1.0 + expected_delta));

    // two-step special case: the total step is -lr*(g + 1.9 g)
    ParamStore s2 = single_param_store(0.0f, 1.0f);
    OptimizerState st2;
    sgd_step(s2, st2, 0.001, 0.9);
    s2.at("p").tensor.grad()[0] = 1.0f;
    sgd_step(s2, st2, 0.001, 0.9);
    CHECK(s2.at("p").tensor.data()[0] == doctest::Approx(-0.001 * (1.0 + 1.9)).epsilon(1e-6));
}

TEST_CASE("eval phase is pure and repeatable; constant logits score 1/C") {
    TempTree t("eval_purity");
    synth_generate(t.root / "ds", 4, 12, 3);
    LabeledDataset ds = ingest(t.root / "ds");

    // batchnorm included so running-stat purity is covered too
    ArchSpec spec = toy_spec(4);
    spec.feature_layers.push_back({LayerKind::batchnorm, "features.norm_tail", {}});
    Model model(spec, 3);
    TransformConfig tcfg;
    tcfg.target_size = {8, 8};
    TrainConfig cfg;
    cfg.batch_size = 16;
    cfg.seed = 1;
    OptimizerState state;

    const uint64_t before = model.params().value_hash();
    PhaseStats a = run_epoch(model, state, ds.samples, tcfg, cfg, 0, 0.001, Phase::eval);
    PhaseStats b = run_epoch(model, state, ds.samples, tcfg, cfg, 5, 0.001, Phase::eval);
    CHECK(a.accuracy == b.accuracy);
    CHECK(a.loss == b.loss);
    CHECK(model.params().value_hash() == before);
    CHECK(state.size() == 0);

    // zero every parameter: logits are constant, argmax picks class 0
    for (auto& [name, e] : model.params().entries()) {
        for (auto& v : e.tensor.data()) v = 0.0f;
    }
    PhaseStats z = run_epoch(model, state, ds.samples, tcfg, cfg, 0, 0.001, Phase::eval);
    CHECK(z.accuracy == doctest::Approx(0.25).epsilon(1e-9));
}

TEST_CASE("training on a separable toy set drives the loss down monotonically") {
    TempTree t("toy_train");
    write_black_white_tree(t.root / "ds", 12);
    LabeledDataset ds = ingest(t.root / "ds");

    Model model(toy_spec(2), 7);
    TransformConfig tcfg;
    tcfg.target_size = {8, 8};
    TrainConfig cfg;
    cfg.batch_size = 32; // both classes fit into one batch
    cfg.seed = 2;
    OptimizerState state;

    std::vector<double> losses;
    for (int epoch = 0; epoch < 20; ++epoch) {
        losses.push_back(
            run_epoch(model, state, ds.samples, tcfg, cfg, epoch, 0.01, Phase::train).loss);
    }
    CHECK(losses.back() < 0.5 * losses.front());
    for (size_t i = 1; i < losses.size(); ++i) {
        CHECK(losses[i] <= losses[i - 1] + 1e-3);
    }
}

TEST_CASE("fit emits one row per epoch with the exact lr schedule, deterministically") {
    TempTree t("fit");
    synth_generate(t.root / "ds", 3, 10, 21);
    LabeledDataset ds = ingest(t.root / "ds");
    SplitDataset sp = split(ds, 0.8, 5);

    TrainConfig cfg;
    cfg.epochs = 15;
    cfg.seed = 5;
    cfg.batch_size = 8;
    cfg.lr = 0.001;

    auto run = [&]() {
        Model model(toy_spec(3), 5);
        return fit(model, sp, cfg);
    };
    std::vector<EpochMetrics> m = run();
    REQUIRE(m.size() == 15);
    for (int e = 0; e < 15; ++e) {
        CHECK(m[static_cast<size_t>(e)].epoch == e);
        // bitwise equality: fit must use the same computation path
        CHECK(m[static_cast<size_t>(e)].lr_used == step_lr(0.001, e, 7, 0.1));
        CHECK(m[static_cast<size_t>(e)].wall_seconds >= 0.0);
    }
    CHECK(m[0].lr_used == 0.001);
    CHECK(m[7].lr_used == step_lr(0.001, 7, 7, 0.1));
    CHECK(m[14].lr_used == step_lr(0.001, 14, 7, 0.1));

    std::vector<EpochMetrics> m2 = run();
    for (size_t i = 0; i < m.size(); ++i) {
        CHECK(m[i].train_loss == m2[i].train_loss);
        CHECK(m[i].valid_accuracy == m2[i].valid_accuracy);
    }

    TrainConfig one = cfg;
    one.epochs = 1;
    Model model(toy_spec(3), 5);
    std::vector<EpochMetrics> single = fit(model, sp, one);
    CHECK(single.size() == 1);
    CHECK(single[0].valid_accuracy >= 0.0);
    CHECK(single[0].valid_accuracy <= 1.0);

    TrainConfig bad = cfg;
    bad.momentum = 1.0;
    CHECK_THROWS_AS(fit(model, sp, bad), ValueError);
}

TEST_CASE("pretrain_source reaches a trivial task quickly and saves deterministic bytes") {
    TempTree t("pretrain");
    write_black_white_tree(t.root / "src", 100);

    TrainConfig cfg;
    cfg.epochs = 5;
    cfg.seed = 3;
    std::vector<EpochMetrics> m =
        pretrain_source("alexnet", t.root / "src", cfg, t.root / "w1.cbpw");
    REQUIRE(m.size() == 5);
    CHECK(m.back().train_accuracy >= 0.99);
    CHECK(fs::exists(t.root / "w1.cbpw"));

    TrainConfig two = cfg;
    two.epochs = 2;
    pretrain_source("alexnet", t.root / "src", two, t.root / "w2.cbpw");
    pretrain_source("alexnet", t.root / "src", two, t.root / "w3.cbpw");
    CHECK(slurp(t.root / "w2.cbpw") == slurp(t.root / "w3.cbpw"));
    CHECK(slurp(t.root / "w2.cbpw") != slurp(t.root / "w1.cbpw"));
}

TEST_CASE("transfer freezes features bit-exactly while the head moves") {
    TempTree t("transfer");
    synth_generate(t.root / "src", 4, 24, 42);
    synth_generate(t.root / "tgt", 3, 24, 42);

    TrainConfig pre;
    pre.epochs = 2;
    pre.seed = 9;
    pretrain_source("alexnet", t.root / "src", pre, t.root / "w.cbpw");

    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.seed = 9;
    cfg.freeze_policy = FreezePolicy::fixed_extractor;
    TransferResult r = transfer("alexnet", t.root / "w.cbpw", t.root / "tgt", cfg);
    REQUIRE(r.metrics.size() == 3);
    CHECK(r.feature_hash_before == r.feature_hash_after);
    CHECK(r.model.plan().num_classes == 3);

    // head parameters moved on non-degenerate data
    Model reference(zoo_spec("alexnet", Scale::mini, 4), 9);
    load_params(t.root / "w.cbpw", reference.params());
    reference.replace_head(3, 9);
    CHECK(r.model.head_hash() != reference.head_hash());

    // arch/file mismatch is rejected
    CHECK_THROWS_AS(transfer("vgg_11", t.root / "w.cbpw", t.root / "tgt", cfg), IoError);
}

TEST_CASE("frozen batchnorm keeps its running statistics through head training") {
    TempTree t("transfer_bn");
    synth_generate(t.root / "src", 3, 16, 8);
    synth_generate(t.root / "tgt", 2, 16, 8);

    TrainConfig cfg;
    cfg.epochs = 1;
    cfg.seed = 8;
    pretrain_source("densenet_121", t.root / "src", cfg, t.root / "w.cbpw");

    cfg.epochs = 2;
    cfg.freeze_policy = FreezePolicy::fixed_extractor;
    TransferResult r = transfer("densenet_121", t.root / "w.cbpw", t.root / "tgt", cfg);
    // feature hash covers the running mean/var buffers as well
    CHECK(r.feature_hash_before == r.feature_hash_after);
    CHECK(r.model.params().at("features.norm0.running_mean").tensor.data()[0] != 0.0f);
}
