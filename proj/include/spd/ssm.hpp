#pragma once

#include "spd/lm.hpp"
#include "spd/tensor.hpp"

#include <string>
#include <vector>

namespace spd {

enum class SsmKind {
    longhorn,
    mamba2,
};

const char * ssm_kind_name(SsmKind k);
SsmKind ssm_kind_from_name(const std::string & name);

struct SsmBlockConfig {
    SsmKind kind = SsmKind::longhorn;
    int d_model = 64;
    int n_heads = 4;
    int d_head = 16;
    bool qk_norm = true;            // default on for Longhorn, off for Mamba2
    // Mamba2 option: per-channel decay (one alpha per value channel instead
    // of one scalar per head), the reference stand-in for the older selective
    // recurrence; the hardware scan itself is out of scope.
    bool per_channel_decay = false;
    double beta_init_lo = 0.001;    // gate value range targeted at init
    double beta_init_hi = 0.1;

    // gate width: per-channel for Longhorn (and per-channel-decay Mamba2),
    // one scalar per head otherwise
    int gate_dim() const {
        return (kind == SsmKind::longhorn || per_channel_decay) ? d_model : n_heads;
    }
    void validate() const;
};

SsmBlockConfig default_block_config(SsmKind kind, const ModelConfig & model_cfg);

// Recurrent block. in_* project the d_model input to per-head streams; the
// z branch gates the read-out through SiLU before out_proj. Parameters are
// shared with a ParamStore via register_block_params so the distill trainer
// and checkpointing see them under "<prefix><name>".
struct SsmBlock {
    SsmBlockConfig cfg;
    TensorPtr in_q, in_k, in_v;     // [d_model, d_model]
    TensorPtr in_gate;              // [gate_dim, d_model]
    TensorPtr dt_bias;              // [gate_dim]
    TensorPtr in_z;                 // [d_model, d_model]
    TensorPtr z_bias;               // [d_model]
    TensorPtr out_proj;             // [d_model, d_model]
    TensorPtr q_norm, k_norm;       // [d_head], present when qk_norm
};

// fresh random block (all nonzero paths at std 0.02, dt_bias per init rule)
SsmBlock init_block(const SsmBlockConfig & cfg, Rng & rng);

// Replacement initialization from an attention layer of `base`:
// out_proj and the q/k/v branches copy the attention weights; the z branch
// (weights and bias) is zeroed so the block output is identically zero,
// unless zero_init is false (ablation), in which case the z branch gets the
// default random init.
SsmBlock init_from_attention(const ToyLM & base, int layer, const SsmBlockConfig & cfg,
                             uint64_t seed, bool zero_init = true);

// draw dt_bias so that Sigmoid(dt_bias) lands in [lo, hi] per coordinate
void init_dt_bias(SsmBlock & block, double lo, double hi, uint64_t seed);

void register_block_params(ParamStore & store, const std::string & prefix, const SsmBlock & b);
SsmBlock block_from_store(const ParamStore & store, const std::string & prefix,
                          const SsmBlockConfig & cfg);

// ---- reference recurrence math (plain buffers, no tape) ----
// State matrices are row-major [d_head x d_head]; rows index the value
// dimension, columns the key dimension.

// eps = beta / (1 + beta * ||k||^2), elementwise over the value channels
std::vector<double> longhorn_epsilon(const std::vector<double> & beta,
                                     const std::vector<double> & k);

// exact minimizer of ||S - S_prev||_F^2 + ||S k - v||^2_diag(beta):
// S = S_prev + (eps ⊙ (v - S_prev k)) ⊗ k
void longhorn_step(std::vector<double> & S, const std::vector<double> & k,
                   const std::vector<double> & v, const std::vector<double> & beta);

double longhorn_objective(const std::vector<double> & S, const std::vector<double> & S_prev,
                          const std::vector<double> & k, const std::vector<double> & v,
                          const std::vector<double> & beta);

// S = alpha * S_prev + v k^T, the minimizer of ||S - alpha S_prev||_F^2 - 2 v^T S k
void mamba2_step(std::vector<double> & S, const std::vector<double> & k,
                 const std::vector<double> & v, double alpha);

// per-channel decay variant: row i scales by alpha[i]
void mamba2_step_per_channel(std::vector<double> & S, const std::vector<double> & k,
                             const std::vector<double> & v, const std::vector<double> & alpha);

double mamba2_objective(const std::vector<double> & S, const std::vector<double> & S_prev,
                        const std::vector<double> & k, const std::vector<double> & v,
                        double alpha);

std::vector<double> mamba2_objective_grad(const std::vector<double> & S,
                                          const std::vector<double> & S_prev,
                                          const std::vector<double> & k,
                                          const std::vector<double> & v, double alpha);

// gate evaluation for a single d_model input (plain math)
std::vector<double> beta_gate(const SsmBlock & block, const std::vector<double> & x);

// ---- sequence forward ----
struct SSMState {
    std::vector<std::vector<double>> S;   // one [d_head x d_head] matrix per head
    int64_t steps = 0;

    static SSMState zeros(const SsmBlockConfig & cfg);
};

// Causal left-to-right scan over x: [T, d_model] -> [T, d_model].
// If state is non-null it supplies S_0 and receives S_T (chunked decoding).
// Differentiable when the tape is on; state hand-off carries values only.
TensorPtr ssm_block_forward(const SsmBlock & block, const TensorPtr & x, SSMState * state = nullptr);

} // namespace spd
