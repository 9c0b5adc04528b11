#ifndef CHARBENCH_DATA_HPP
#define CHARBENCH_DATA_HPP

#include <array>
#include <filesystem>
#include <optional>
#include <string>

#include "charbench/image.hpp"
#include "charbench/ops.hpp"

namespace charbench {

struct Sample {
    std::filesystem::path path;
    int label = 0;
};

/// Directory-per-class dataset: <root>/<class_name>/<file>.png. Classes and
/// files are enumerated in sorted order so the label mapping and sample
/// order are deterministic.
struct LabeledDataset {
    std::filesystem::path root;
    std::vector<std::string> classes; // sorted
    std::vector<Sample> samples;
    Int2 image_size{32, 32}; // nominal source resolution
};

LabeledDataset ingest(const std::filesystem::path& root);

struct SplitDataset {
    std::vector<Sample> train;
    std::vector<Sample> test;
    uint64_t seed = 0;
    double train_fraction = 0.85;
};

/// Stratified split: every class is shuffled with its own seeded generator
/// and the first round(count * fraction) samples go to train.
SplitDataset split(const LabeledDataset& ds, double train_fraction, uint64_t seed);

struct TransformConfig {
    Int2 target_size{224, 224};
    std::array<float, 3> mean{0.485f, 0.456f, 0.406f};
    std::array<float, 3> stddev{0.229f, 0.224f, 0.225f};
};

/// decode -> [0,1] -> bilinear resize -> replicate gray to 3 channels ->
/// per-channel (x - mean) / std. Non-grayscale files are luminance-converted
/// with a warning on stderr.
Tensor load_and_transform(const Sample& sample, const TransformConfig& cfg);

/// Inverse of the normalization step, for round-trip checks.
void denormalize_inplace(Tensor& image, const TransformConfig& cfg);

struct Batch {
    Tensor images; // [N,3,H,W]
    std::vector<int> labels;
    int batch_index = 0;
};

/// Deterministic sample order for an epoch: shuffled by (seed, epoch) for
/// training parts, identity for test parts.
std::vector<size_t> epoch_order(size_t n, uint64_t seed, int epoch, bool shuffle);

/// Streams batches over `part` in the given order; the final short batch is
/// emitted. Decoding may use up to `num_threads` workers, the emitted
/// batches are identical to the single-threaded ones.
class BatchStream {
public:
    BatchStream(std::span<const Sample> part, const TransformConfig& cfg, int batch_size,
                std::vector<size_t> order, int num_threads = 1);

    std::optional<Batch> next();
    int num_batches() const;

private:
    std::span<const Sample> part_;
    TransformConfig cfg_;
    int batch_size_;
    std::vector<size_t> order_;
    int num_threads_;
    size_t cursor_ = 0;
    int batch_index_ = 0;
};

/// CHARBENCH_THREADS, clamped to [1, 64]; 1 when unset or unparsable.
int env_worker_threads();

} // namespace charbench

#endif
