#include "charbench/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <thread>

#include "charbench/rng.hpp"

namespace charbench {

namespace fs = std::filesystem;

LabeledDataset ingest(const fs::path& root) {
    if (!fs::is_directory(root)) {
        throw IoError(cat("dataset root '", root.string(), "' is not a directory"));
    }
    std::vector<std::string> classes;
    for (const auto& entry : fs::directory_iterator(root)) {
        if (entry.is_directory()) classes.push_back(entry.path().filename().string());
    }
    std::sort(classes.begin(), classes.end());
    if (classes.empty()) {
        throw IoError(cat("dataset root '", root.string(), "' contains no class directories"));
    }
    if (classes.size() < 2) {
        throw ValueError(cat("dataset root '", root.string(), "' has a single class '", classes[0],
                             "'; classification needs at least two"));
    }

    LabeledDataset ds;
    ds.root = root;
    ds.classes = classes;
    for (size_t ci = 0; ci < classes.size(); ++ci) {
        std::vector<std::string> files;
        for (const auto& entry : fs::directory_iterator(root / classes[ci])) {
            if (entry.is_regular_file() && entry.path().extension() == ".png") {
                files.push_back(entry.path().filename().string());
            }
        }
        if (files.empty()) {
            throw IoError(cat("class directory '", (root / classes[ci]).string(),
                              "' contains no PNG files"));
        }
        std::sort(files.begin(), files.end());
        for (const std::string& f : files) {
            ds.samples.push_back({root / classes[ci] / f, static_cast<int>(ci)});
        }
    }
    return ds;
}

SplitDataset split(const LabeledDataset& ds, double train_fraction, uint64_t seed) {
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
        throw ValueError(cat("train fraction must be in (0,1), got ", train_fraction));
    }
    SplitDataset out;
    out.seed = seed;
    out.train_fraction = train_fraction;

    std::vector<std::vector<size_t>> per_class(ds.classes.size());
    for (size_t i = 0; i < ds.samples.size(); ++i) {
        per_class[static_cast<size_t>(ds.samples[i].label)].push_back(i);
    }
    for (size_t ci = 0; ci < per_class.size(); ++ci) {
        auto& idx = per_class[ci];
        Rng rng(hash_combine(seed, hash_combine(hash_str("split"), ci)));
        rng.shuffle(idx);
        const size_t take =
            static_cast<size_t>(std::llround(static_cast<double>(idx.size()) * train_fraction));
        for (size_t k = 0; k < idx.size(); ++k) {
            (k < take ? out.train : out.test).push_back(ds.samples[idx[k]]);
        }
    }
    return out;
}

Tensor load_and_transform(const Sample& sample, const TransformConfig& cfg) {
    ImageU8 img = read_png(sample.path);
    bool was_color = false;
    std::vector<float> gray = to_gray_f32(img, &was_color);
    if (was_color) {
        std::fprintf(stderr, "warning: '%s' is not grayscale; using its luminance\n",
                     sample.path.string().c_str());
    }
    std::vector<float> resized =
        resize_bilinear(gray, img.width, img.height, cfg.target_size.w, cfg.target_size.h);

    const size_t plane = resized.size();
    Tensor out(Shape{3, cfg.target_size.h, cfg.target_size.w});
    auto dst = out.data();
    for (int c = 0; c < 3; ++c) {
        const float m = cfg.mean[static_cast<size_t>(c)];
        const float inv_s = 1.0f / cfg.stddev[static_cast<size_t>(c)];
        for (size_t i = 0; i < plane; ++i) dst[c * plane + i] = (resized[i] - m) * inv_s;
    }
    return out;
}

void denormalize_inplace(Tensor& image, const TransformConfig& cfg) {
    if (image.rank() != 3 || image.dim(0) != 3) {
        throw ShapeError(cat("expected a [3,H,W] image, got ", shape_str(image.shape())));
    }
    const size_t plane = static_cast<size_t>(image.dim(1)) * image.dim(2);
    auto d = image.data();
    for (int c = 0; c < 3; ++c) {
        for (size_t i = 0; i < plane; ++i) {
            d[c * plane + i] = d[c * plane + i] * cfg.stddev[static_cast<size_t>(c)] +
                               cfg.mean[static_cast<size_t>(c)];
        }
    }
}

std::vector<size_t> epoch_order(size_t n, uint64_t seed, int epoch, bool shuffle) {
    std::vector<size_t> order(n);
    for (size_t i = 0; i < n; ++i) order[i] = i;
    if (shuffle) {
        Rng rng(hash_combine(seed, hash_combine(hash_str("epoch"), static_cast<uint64_t>(epoch))));
        rng.shuffle(order);
    }
    return order;
}

BatchStream::BatchStream(std::span<const Sample> part, const TransformConfig& cfg, int batch_size,
                         std::vector<size_t> order, int num_threads)
    : part_(part), cfg_(cfg), batch_size_(batch_size), order_(std::move(order)),
      num_threads_(std::max(1, num_threads)) {
    if (batch_size_ < 1) throw ValueError(cat("batch size must be >= 1, got ", batch_size_));
    if (order_.size() != part_.size()) {
        throw ValueError(cat("order covers ", order_.size(), " samples, part has ", part_.size()));
    }
}

int BatchStream::num_batches() const {
    return static_cast<int>((part_.size() + static_cast<size_t>(batch_size_) - 1) /
                            static_cast<size_t>(batch_size_));
}

std::optional<Batch> BatchStream::next() {
    if (cursor_ >= order_.size()) return std::nullopt;
    const size_t n = std::min(static_cast<size_t>(batch_size_), order_.size() - cursor_);

    Batch batch;
    batch.batch_index = batch_index_++;
    batch.images = Tensor(Shape{static_cast<int>(n), 3, cfg_.target_size.h, cfg_.target_size.w});
    batch.labels.resize(n);
    const int64_t sample_len = 3LL * cfg_.target_size.h * cfg_.target_size.w;

    auto fill_range = [&](size_t lo, size_t hi) {
        for (size_t k = lo; k < hi; ++k) {
            const Sample& s = part_[order_[cursor_ + k]];
            Tensor img = load_and_transform(s, cfg_);
            auto src = img.data();
            std::copy(src.begin(), src.end(),
                      batch.images.data().begin() + static_cast<int64_t>(k) * sample_len);
            batch.labels[k] = s.label;
        }
    };

    const int workers = std::min<int>(num_threads_, static_cast<int>(n));
    if (workers <= 1) {
        fill_range(0, n);
    } else {
        std::vector<std::thread> pool;
        const size_t chunk = (n + static_cast<size_t>(workers) - 1) / static_cast<size_t>(workers);
        for (int t = 0; t < workers; ++t) {
            const size_t lo = static_cast<size_t>(t) * chunk;
            const size_t hi = std::min(n, lo + chunk);
            if (lo >= hi) break;
            pool.emplace_back(fill_range, lo, hi);
        }
        for (auto& th : pool) th.join();
    }
    cursor_ += n;
    return batch;
}

int env_worker_threads() {
    const char* env = std::getenv("CHARBENCH_THREADS");
    if (!env || !*env) return 1;
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end == env || v < 1) return 1;
    return static_cast<int>(std::min<long>(v, 64));
}

} // namespace charbench
