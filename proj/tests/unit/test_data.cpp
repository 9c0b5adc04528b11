#include "doctest.h"

#include <fstream>
#include <set>

#include "charbench/data.hpp"
#include "charbench/synth.hpp"

using namespace charbench;
namespace fs = std::filesystem;

namespace {

struct TempTree {
    fs::path root;
    explicit TempTree(const std::string& stem) {
        root = fs::temp_directory_path() / (stem + "_" + std::to_string(::getpid()));
        fs::remove_all(root);
    }
    ~TempTree() { fs::remove_all(root); }
};

uint64_t hash_tree(const fs::path& root) {
    uint64_t h = 0xcbf29ce484222325ULL;
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(root)) {
        if (e.is_regular_file()) files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    for (const fs::path& p : files) {
        const std::string rel = fs::relative(p, root).string();
        for (unsigned char c : rel) {
            h = (h ^ c) * 0x100000001b3ULL;
        }
        std::ifstream in(p, std::ios::binary);
        char buf[4096];
        while (in.read(buf, sizeof buf) || in.gcount() > 0) {
            for (std::streamsize i = 0; i < in.gcount(); ++i) {
                h = (h ^ static_cast<unsigned char>(buf[i])) * 0x100000001b3ULL;
            }
        }
    }
    return h;
}

} // namespace

TEST_CASE("synth_generate writes the expected tree, deterministically") {
    TempTree t("synth_det");
    synth_generate(t.root / "a", 10, 20, 1);
    size_t files = 0, dirs = 0;
    for (const auto& e : fs::recursive_directory_iterator(t.root / "a")) {
        files += e.is_regular_file();
        dirs += e.is_directory();
    }
    CHECK(files == 200);
    CHECK(dirs == 10);

    synth_generate(t.root / "b", 10, 20, 1);
    CHECK(hash_tree(t.root / "a") == hash_tree(t.root / "b"));

    synth_generate(t.root / "c", 10, 20, 2);
    CHECK(hash_tree(t.root / "a") != hash_tree(t.root / "c"));
}

TEST_CASE("ingest enumerates sorted classes and rejects degenerate trees") {
    TempTree t("ingest");
    synth_generate(t.root / "ds", 5, 4, 3);
    LabeledDataset ds = ingest(t.root / "ds");
    CHECK(ds.classes.size() == 5);
    CHECK(ds.samples.size() == 20);
    CHECK(std::is_sorted(ds.classes.begin(), ds.classes.end()));
    for (size_t i = 1; i < ds.samples.size(); ++i) {
        CHECK(ds.samples[i - 1].label <= ds.samples[i].label);
    }

    LabeledDataset again = ingest(t.root / "ds");
    REQUIRE(again.samples.size() == ds.samples.size());
    for (size_t i = 0; i < ds.samples.size(); ++i) {
        CHECK(again.samples[i].path == ds.samples[i].path);
        CHECK(again.samples[i].label == ds.samples[i].label);
    }

    CHECK_THROWS_AS(ingest(t.root / "missing"), IoError);

    fs::create_directories(t.root / "single" / "only_class");
    std::ofstream(t.root / "single" / "only_class" / "x.png") << "not a real png";
    CHECK_THROWS_AS(ingest(t.root / "single"), ValueError);

    fs::create_directories(t.root / "empties" / "class_a");
    fs::create_directories(t.root / "empties" / "class_b");
    CHECK_THROWS_WITH_AS(ingest(t.root / "empties"), doctest::Contains("no PNG"), IoError);
}

TEST_CASE("split is a stratified partition, deterministic per seed") {
    TempTree t("split");
    synth_generate(t.root / "ds", 4, 40, 9);
    LabeledDataset ds = ingest(t.root / "ds");

    SplitDataset sp = split(ds, 0.85, 42);
    CHECK(sp.train.size() == 4 * 34);
    CHECK(sp.test.size() == 4 * 6);

    std::set<std::string> train_paths, test_paths;
    for (const auto& s : sp.train) train_paths.insert(s.path.string());
    for (const auto& s : sp.test) test_paths.insert(s.path.string());
    CHECK(train_paths.size() == sp.train.size());
    CHECK(test_paths.size() == sp.test.size());
    for (const auto& p : test_paths) CHECK(train_paths.count(p) == 0);
    CHECK(train_paths.size() + test_paths.size() == ds.samples.size());

    // per-class counts equal round(count * fraction)
    std::vector<int> per_class(4, 0);
    for (const auto& s : sp.train) per_class[static_cast<size_t>(s.label)]++;
    for (int c : per_class) CHECK(c == 34);

    SplitDataset sp2 = split(ds, 0.85, 42);
    for (size_t i = 0; i < sp.train.size(); ++i) CHECK(sp.train[i].path == sp2.train[i].path);

    SplitDataset sp3 = split(ds, 0.85, 43);
    CHECK(sp3.train.size() == sp.train.size());
    std::set<std::string> train3;
    for (const auto& s : sp3.train) train3.insert(s.path.string());
    CHECK(train3 != train_paths);

    CHECK_THROWS_AS(split(ds, 1.0, 1), ValueError);
    CHECK_THROWS_AS(split(ds, 0.0, 1), ValueError);
}

TEST_CASE("split stratification holds on unbalanced classes") {
    TempTree t("unbalanced");
    synth_generate(t.root / "ds", 3, 11, 5);
    // thin one class down to 7 samples
    LabeledDataset full = ingest(t.root / "ds");
    int removed = 0;
    for (const auto& s : full.samples) {
        if (s.label == 1 && removed < 4) {
            fs::remove(s.path);
            ++removed;
        }
    }
    LabeledDataset ds = ingest(t.root / "ds");
    SplitDataset sp = split(ds, 0.6, 7);
    std::vector<int> train_count(3, 0), total(3, 0);
    for (const auto& s : sp.train) train_count[static_cast<size_t>(s.label)]++;
    for (const auto& s : ds.samples) total[static_cast<size_t>(s.label)]++;
    for (int c = 0; c < 3; ++c) {
        CHECK(train_count[static_cast<size_t>(c)] ==
              static_cast<int>(std::llround(total[static_cast<size_t>(c)] * 0.6)));
    }
}

TEST_CASE("load_and_transform resizes, replicates and normalizes") {
    TempTree t("transform");
    fs::create_directories(t.root);

    // constant image at the channel-0 mean value: 0.485 * 255 ~ 124
    std::vector<uint8_t> px(32 * 32, 124);
    write_png_gray8(t.root / "mean.png", 32, 32, px);
    TransformConfig cfg;
    cfg.target_size = {224, 224};
    Tensor img = load_and_transform({t.root / "mean.png", 0}, cfg);
    CHECK(img.shape() == Shape{3, 224, 224});
    const float v0 = (124.0f / 255.0f - 0.485f) / 0.229f;
    for (int i = 0; i < 224 * 224; ++i) {
        CHECK(img.data()[static_cast<size_t>(i)] == doctest::Approx(v0).epsilon(1e-6));
    }

    // constant white image: channel 2 = (1 - 0.406)/0.225 ~ 2.64
    std::fill(px.begin(), px.end(), 255);
    write_png_gray8(t.root / "white.png", 32, 32, px);
    Tensor white = load_and_transform({t.root / "white.png", 0}, cfg);
    const size_t plane = 224 * 224;
    CHECK(white.data()[2 * plane] == doctest::Approx((1.0f - 0.406f) / 0.225f).epsilon(1e-5));
    // constant in -> constant out, exactly
    for (size_t i = 0; i < plane; ++i) CHECK(white.data()[i] == white.data()[0]);

    // normalization round-trip
    Tensor copy = white.clone();
    denormalize_inplace(copy, cfg);
    for (size_t i = 0; i < 3 * plane; ++i) {
        CHECK(copy.data()[i] == doctest::Approx(1.0f).epsilon(1e-6));
    }
}

TEST_CASE("batch stream: coverage, short final batch, fixed eval order") {
    TempTree t("batches");
    synth_generate(t.root / "ds", 3, 25, 11);
    LabeledDataset ds = ingest(t.root / "ds");
    TransformConfig cfg;
    cfg.target_size = {32, 32};

    // 75 samples, batch 32 -> 3 batches (32, 32, 11)
    auto order = epoch_order(ds.samples.size(), 5, 0, true);
    BatchStream stream(ds.samples, cfg, 32, order);
    CHECK(stream.num_batches() == 3);
    std::vector<int> sizes;
    std::multiset<std::string> seen;
    size_t pos = 0;
    while (auto b = stream.next()) {
        sizes.push_back(b->images.dim(0));
        for (size_t k = 0; k < b->labels.size(); ++k) {
            seen.insert(ds.samples[order[pos + k]].path.string());
        }
        pos += b->labels.size();
    }
    CHECK(sizes == std::vector<int>{32, 32, 11});
    CHECK(seen.size() == 75);

    // every sample appears exactly once per epoch
    std::set<std::string> unique(seen.begin(), seen.end());
    CHECK(unique.size() == 75);

    // same (seed, epoch) -> same order; different epoch -> different order
    CHECK(epoch_order(75, 5, 0, true) == order);
    CHECK(epoch_order(75, 5, 1, true) != order);
    // unshuffled order is the identity (test part contract)
    auto fixed = epoch_order(5, 99, 3, false);
    CHECK(fixed == std::vector<size_t>{0, 1, 2, 3, 4});
}

TEST_CASE("multi-threaded decoding emits bit-identical batches") {
    TempTree t("threads");
    synth_generate(t.root / "ds", 2, 30, 13);
    LabeledDataset ds = ingest(t.root / "ds");
    TransformConfig cfg;
    cfg.target_size = {64, 64};

    auto order = epoch_order(ds.samples.size(), 1, 0, true);
    BatchStream seq(ds.samples, cfg, 16, order, 1);
    BatchStream par(ds.samples, cfg, 16, order, 4);
    while (true) {
        auto a = seq.next();
        auto b = par.next();
        CHECK(a.has_value() == b.has_value());
        if (!a) break;
        CHECK(a->labels == b->labels);
        auto da = a->images.data();
        auto db = b->images.data();
        REQUIRE(da.size() == db.size());
        size_t diff = 0;
        for (size_t i = 0; i < da.size(); ++i) diff += da[i] != db[i];
        CHECK(diff == 0);
    }
}

TEST_CASE("unreadable PNG reports its path") {
    TempTree t("badpng");
    fs::create_directories(t.root);
    std::ofstream(t.root / "broken.png") << "this is not a png";
    TransformConfig cfg;
    cfg.target_size = {32, 32};
    CHECK_THROWS_WITH_AS(load_and_transform({t.root / "broken.png", 0}, cfg),
                         doctest::Contains("broken.png"), IoError);
}
