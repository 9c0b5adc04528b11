#ifndef CHARBENCH_NETWORK_HPP
#define CHARBENCH_NETWORK_HPP

#include <functional>
#include <map>
#include <memory>

#include "charbench/arch.hpp"

namespace charbench {

struct ParamEntry {
    Tensor tensor;
    bool frozen = false;
    bool is_buffer = false; // running stats; never trainable, still serialized
};

// Named parameter collection; map order (lexicographic) fixes the iteration
// order for the optimizer and the serializer. Entry addresses are stable.
class ParamStore {
public:
    ParamStore() = default;
    ParamStore(const ParamStore&) = delete;
    ParamStore& operator=(const ParamStore&) = delete;
    ParamStore(ParamStore&&) = default;
    ParamStore& operator=(ParamStore&&) = default;

    ParamEntry& add(const std::string& name, ParamEntry entry);
    void remove(const std::string& name);
    bool contains(const std::string& name) const { return entries_.count(name) != 0; }
    ParamEntry& at(const std::string& name);
    const ParamEntry& at(const std::string& name) const;

    std::map<std::string, ParamEntry>& entries() { return entries_; }
    const std::map<std::string, ParamEntry>& entries() const { return entries_; }
    size_t size() const { return entries_.size(); }

    void zero_grads();
    int64_t trainable_count() const; // entries, not elements
    int64_t frozen_count() const;

    /// FNV-1a over names and raw value bits of entries accepted by `filter`
    /// (all entries when absent); bit-exact identity check.
    uint64_t value_hash(
        const std::function<bool(const std::string&, const ParamEntry&)>& filter = {}) const;

private:
    std::map<std::string, ParamEntry> entries_;
};

enum class FreezePolicy { fixed_extractor, full_finetune };

std::string to_string(FreezePolicy p);
FreezePolicy parse_freeze_policy(const std::string& s);

// A built network: an expanded plan bound to its parameter store. Forward
// walks the plan ops; batchnorm layers whose parameters are frozen run in
// eval statistics even during the train phase, so frozen features stay a
// fixed function of the input.
class Model {
public:
    Model(const ArchSpec& spec, uint64_t init_seed);
    Model(NetPlan plan, uint64_t init_seed);

    Model(Model&&) = default;
    Model& operator=(Model&&) = default;

    const NetPlan& plan() const { return plan_; }
    ParamStore& params() { return *params_; }
    const ParamStore& params() const { return *params_; }

    /// Runs the plan on input [N,3,H,W] and returns [N,num_classes] logits.
    /// `dropout_rng` is required in the train phase when the plan contains
    /// dropout ops.
    Tensor forward(Tape* tape, const Tensor& input, Phase phase, Rng* dropout_rng = nullptr) const;

    /// Swaps the output layer for a fresh `num_classes`-wide one. The new
    /// parameters are trainable; everything else (values and freeze flags)
    /// is untouched.
    void replace_head(int num_classes, uint64_t init_seed);

    /// fixed_extractor freezes every parameter outside the classifier
    /// section; full_finetune unfreezes all.
    void set_freeze_policy(FreezePolicy policy);

    /// Hash of feature-section parameters and buffers (freeze-invariance
    /// checks).
    uint64_t feature_hash() const;
    /// Hash of classifier-section parameters.
    uint64_t head_hash() const;

private:
    NetPlan plan_;
    std::unique_ptr<ParamStore> params_;
    std::vector<std::string> feature_param_names_; // includes buffers

    void allocate_params(uint64_t init_seed);
    bool is_feature_param(const std::string& name) const;
};

/// Deterministic per-parameter init: Kaiming-uniform (fan-in, relu gain) for
/// conv/linear weights, uniform +-1/sqrt(fan_in) for biases, gamma=1/beta=0
/// and mean=0/var=1 for batchnorm. The draw depends only on
/// (init_seed, param name, shape).
Tensor init_param(const ParamShape& p, uint64_t init_seed);

} // namespace charbench

#endif
