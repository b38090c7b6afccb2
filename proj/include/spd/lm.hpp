#pragma once

#include "spd/tensor.hpp"

#include <functional>
#include <string>
#include <vector>

namespace spd {

struct ModelConfig {
    int n_layers = 8;
    int d_model = 64;
    int n_heads = 4;
    int d_head = 16;
    int vocab_size = 256;
    int max_seq_len = 256;
    uint64_t seed = 1;

    void validate() const;
};

// Binary mask over layers; x[l] = 1 means the attention sublayer of layer l
// is bypassed (draft) or replaced (hybrid).
struct SkipConfig {
    std::vector<uint8_t> x;

    SkipConfig() = default;
    explicit SkipConfig(int n_layers) : x((size_t) n_layers, 0) {}

    static SkipConfig from_indices(int n_layers, const std::vector<int> & idx);
    static SkipConfig from_bitstring(const std::string & bits);

    int size() const { return (int) x.size(); }
    int count() const;
    std::vector<int> indices() const;
    std::string bitstring() const;
    bool operator==(const SkipConfig & o) const { return x == o.x; }
};

struct ToyLM {
    ModelConfig cfg;
    ParamStore params;
};

// deterministic seeded initialization
ToyLM init_model(const ModelConfig & cfg);

// Replacement hook used by the hybrid model: for layers with replaced[l] = 1
// the attention sublayer output is produced by fn(l, pre-normed input).
struct AttnOverride {
    std::vector<uint8_t> replaced;
    std::function<TensorPtr(int, const TensorPtr &)> fn;
};

// Full-sequence forward; logits [n, vocab]. Skipped attention sublayers
// contribute nothing to the residual stream (their pre-norm is not computed
// either); MLP sublayers always run.
TensorPtr lm_forward(const ToyLM & model, const std::vector<int> & tokens,
                     const SkipConfig & skip, const AttnOverride * override_hook = nullptr);

// softmax of the last-position logits, no tape
std::vector<double> next_token_dist(const ToyLM & model, const std::vector<int> & tokens,
                                    const SkipConfig & skip,
                                    const AttnOverride * override_hook = nullptr);

// ---- analytic FLOP accounting ----
// Per-position FLOPs at context length t (1-based position count). Only
// projection / attention-mix / MLP / unembed multiply-adds are charged, each
// as 2 FLOPs. Attention cost is identical across layers, so the full-forward
// cost is linear in the number of kept layers.
double attn_flops_at(const ModelConfig & cfg, int64_t t);
double mlp_flops(const ModelConfig & cfg);
double unembed_flops(const ModelConfig & cfg);
double per_position_flops(const ModelConfig & cfg, const SkipConfig & skip, int64_t t);

// cost of a full forward over seq_len positions, in cost units (MFLOP)
double flop_cost(const ToyLM & model, const SkipConfig & skip, int64_t seq_len);
// cost of extending a ctx_len prefix by n_new positions (cached-inference economics)
double incremental_cost(const ModelConfig & cfg, const SkipConfig & skip,
                        int64_t ctx_len, int64_t n_new);

constexpr double kCostUnitFlops = 1e6;

// ---- base-model training (cross entropy on next tokens) ----
struct TrainBaseConfig {
    int64_t steps = 1200;
    int batch_size = 8;
    int context_len = 64;
    double peak_lr = 1e-3;
    double min_lr = 1e-4;
    double grad_clip = 1.0;
    uint64_t seed = 7;
};

struct TrainBaseLogRow {
    int64_t step;
    double lr;
    double loss;
};

struct TrainBaseResult {
    std::vector<TrainBaseLogRow> log;
    double heldout_ce = 0.0;   // nats/token on the held-out split
};

TrainBaseResult train_base(ToyLM & model, const std::vector<int> & train_tokens,
                           const std::vector<int> & heldout_tokens,
                           const TrainBaseConfig & cfg);

// mean next-token cross entropy (nats) of the model on a token stream
double cross_entropy(const ToyLM & model, const std::vector<int> & tokens,
                     int context_len = 64, int64_t max_windows = 64);

} // namespace spd
