#include "spd/ssm.hpp"

#include <algorithm>
#include <cmath>

namespace spd {

const char * ssm_kind_name(SsmKind k) {
    return k == SsmKind::longhorn ? "longhorn" : "mamba2";
}

SsmKind ssm_kind_from_name(const std::string & name) {
    if (name == "longhorn") return SsmKind::longhorn;
    if (name == "mamba2") return SsmKind::mamba2;
    throw config_error("unknown ssm kind: " + name);
}

void SsmBlockConfig::validate() const {
    SPD_CHECK(d_model == n_heads * d_head, config_error, "ssm: d_model != n_heads * d_head");
    SPD_CHECK(beta_init_lo > 0.0 && beta_init_lo <= beta_init_hi && beta_init_hi < 1.0,
              config_error, "ssm: gate init range must satisfy 0 < lo <= hi < 1");
}

SsmBlockConfig default_block_config(SsmKind kind, const ModelConfig & model_cfg) {
    SsmBlockConfig cfg;
    cfg.kind = kind;
    cfg.d_model = model_cfg.d_model;
    cfg.n_heads = model_cfg.n_heads;
    cfg.d_head = model_cfg.d_head;
    cfg.qk_norm = kind == SsmKind::longhorn;
    return cfg;
}

void init_dt_bias(SsmBlock & block, double lo, double hi, uint64_t seed) {
    SPD_CHECK(lo > 0.0 && lo <= hi && hi < 1.0, config_error, "init_dt_bias: bad range");
    Rng rng(seed);
    for (auto & b : block.dt_bias->data) {
        const double u = rng.uniform(lo, hi);
        b = std::log(u / (1.0 - u));   // logit, so Sigmoid(b) == u
    }
}

static SsmBlock alloc_block(const SsmBlockConfig & cfg) {
    cfg.validate();
    SsmBlock b;
    b.cfg = cfg;
    const int d = cfg.d_model;
    b.in_q = make_tensor({d, d});
    b.in_k = make_tensor({d, d});
    b.in_v = make_tensor({d, d});
    b.in_gate = make_tensor({cfg.gate_dim(), d});
    b.dt_bias = make_tensor({cfg.gate_dim()});
    b.in_z = make_tensor({d, d});
    b.z_bias = make_tensor({d});
    b.out_proj = make_tensor({d, d});
    if (cfg.qk_norm) {
        b.q_norm = make_tensor({cfg.d_head}, 1.0);
        b.k_norm = make_tensor({cfg.d_head}, 1.0);
    }
    return b;
}

static void fill_randn(TensorPtr & t, Rng & rng, double stddev) {
    for (auto & v : t->data) {
        v = rng.normal() * stddev;
    }
}

SsmBlock init_block(const SsmBlockConfig & cfg, Rng & rng) {
    SsmBlock b = alloc_block(cfg);
    const double std_w = 0.02;
    fill_randn(b.in_q, rng, std_w);
    fill_randn(b.in_k, rng, std_w);
    fill_randn(b.in_v, rng, std_w);
    fill_randn(b.in_gate, rng, std_w);
    fill_randn(b.in_z, rng, std_w);
    fill_randn(b.out_proj, rng, std_w);
    init_dt_bias(b, cfg.beta_init_lo, cfg.beta_init_hi, rng.next_u64());
    return b;
}

SsmBlock init_from_attention(const ToyLM & base, int layer, const SsmBlockConfig & cfg,
                             uint64_t seed, bool zero_init) {
    SPD_CHECK(layer >= 0 && layer < base.cfg.n_layers, config_error,
              "init_from_attention: layer out of range");
    SPD_CHECK(cfg.d_model == base.cfg.d_model && cfg.n_heads == base.cfg.n_heads,
              config_error, "init_from_attention: dimension mismatch with base model");
    SsmBlock b = alloc_block(cfg);
    const std::string pre = "layer" + std::to_string(layer) + ".";
    b.out_proj->data = base.params.at(pre + "wo")->data;
    b.in_q->data = base.params.at(pre + "wq")->data;
    b.in_k->data = base.params.at(pre + "wk")->data;
    b.in_v->data = base.params.at(pre + "wv")->data;
    Rng rng(seed);
    fill_randn(b.in_gate, rng, 0.02);
    init_dt_bias(b, cfg.beta_init_lo, cfg.beta_init_hi, rng.next_u64());
    if (!zero_init) {
        // ablation: the gate branch inherits attention weights like the
        // other in_proj parts, so the block speaks up immediately
        b.in_z->data = base.params.at(pre + "wq")->data;
    }
    // z branch stays zero in the default path: SiLU(0) = 0 gates the
    // read-out to exactly zero, reproducing the skipped-layer state
    return b;
}

void register_block_params(ParamStore & store, const std::string & prefix, const SsmBlock & b) {
    store.add(prefix + "in_q", b.in_q);
    store.add(prefix + "in_k", b.in_k);
    store.add(prefix + "in_v", b.in_v);
    store.add(prefix + "in_gate", b.in_gate);
    store.add(prefix + "dt_bias", b.dt_bias);
    store.add(prefix + "in_z", b.in_z);
    store.add(prefix + "z_bias", b.z_bias);
    store.add(prefix + "out_proj", b.out_proj);
    if (b.cfg.qk_norm) {
        store.add(prefix + "q_norm", b.q_norm);
        store.add(prefix + "k_norm", b.k_norm);
    }
}

SsmBlock block_from_store(const ParamStore & store, const std::string & prefix,
                          const SsmBlockConfig & cfg) {
    SsmBlock b;
    b.cfg = cfg;
    b.in_q = store.at(prefix + "in_q");
    b.in_k = store.at(prefix + "in_k");
    b.in_v = store.at(prefix + "in_v");
    b.in_gate = store.at(prefix + "in_gate");
    b.dt_bias = store.at(prefix + "dt_bias");
    b.in_z = store.at(prefix + "in_z");
    b.z_bias = store.at(prefix + "z_bias");
    b.out_proj = store.at(prefix + "out_proj");
    if (cfg.qk_norm) {
        b.q_norm = store.at(prefix + "q_norm");
        b.k_norm = store.at(prefix + "k_norm");
    }
    return b;
}

// ---- reference math ----

std::vector<double> longhorn_epsilon(const std::vector<double> & beta,
                                     const std::vector<double> & k) {
    double k2 = 0.0;
    for (double v : k) k2 += v * v;
    std::vector<double> eps(beta.size());
    for (size_t i = 0; i < beta.size(); ++i) {
        eps[i] = beta[i] / (1.0 + beta[i] * k2);
    }
    return eps;
}

void longhorn_step(std::vector<double> & S, const std::vector<double> & k,
                   const std::vector<double> & v, const std::vector<double> & beta) {
    const size_t dk = k.size(), dv = v.size();
    SPD_CHECK(S.size() == dv * dk, shape_error, "longhorn_step: state shape mismatch");
    SPD_CHECK(beta.size() == dv, shape_error, "longhorn_step: gate shape mismatch");
    for (double x : k) SPD_CHECK(std::isfinite(x), numeric_error, "longhorn_step: non-finite k");
    for (double x : v) SPD_CHECK(std::isfinite(x), numeric_error, "longhorn_step: non-finite v");
    const auto eps = longhorn_epsilon(beta, k);
    for (size_t i = 0; i < dv; ++i) {
        double sk = 0.0;
        for (size_t j = 0; j < dk; ++j) sk += S[i * dk + j] * k[j];
        const double coef = eps[i] * (v[i] - sk);
        for (size_t j = 0; j < dk; ++j) S[i * dk + j] += coef * k[j];
    }
}

double longhorn_objective(const std::vector<double> & S, const std::vector<double> & S_prev,
                          const std::vector<double> & k, const std::vector<double> & v,
                          const std::vector<double> & beta) {
    const size_t dk = k.size(), dv = v.size();
    double obj = 0.0;
    for (size_t i = 0; i < S.size(); ++i) {
        const double d = S[i] - S_prev[i];
        obj += d * d;
    }
    for (size_t i = 0; i < dv; ++i) {
        double sk = 0.0;
        for (size_t j = 0; j < dk; ++j) sk += S[i * dk + j] * k[j];
        const double r = sk - v[i];
        obj += beta[i] * r * r;
    }
    return obj;
}

void mamba2_step(std::vector<double> & S, const std::vector<double> & k,
                 const std::vector<double> & v, double alpha) {
    const size_t dk = k.size(), dv = v.size();
    SPD_CHECK(S.size() == dv * dk, shape_error, "mamba2_step: state shape mismatch");
    SPD_CHECK(alpha >= 0.0 && alpha <= 1.0, input_error, "mamba2_step: alpha outside [0,1]");
    for (double x : k) SPD_CHECK(std::isfinite(x), numeric_error, "mamba2_step: non-finite k");
    for (double x : v) SPD_CHECK(std::isfinite(x), numeric_error, "mamba2_step: non-finite v");
    for (size_t i = 0; i < dv; ++i) {
        for (size_t j = 0; j < dk; ++j) {
            S[i * dk + j] = alpha * S[i * dk + j] + v[i] * k[j];
        }
    }
}

void mamba2_step_per_channel(std::vector<double> & S, const std::vector<double> & k,
                             const std::vector<double> & v, const std::vector<double> & alpha) {
    const size_t dk = k.size(), dv = v.size();
    SPD_CHECK(S.size() == dv * dk, shape_error, "mamba2_step_per_channel: state shape mismatch");
    SPD_CHECK(alpha.size() == dv, shape_error, "mamba2_step_per_channel: alpha shape mismatch");
    for (double a : alpha) {
        SPD_CHECK(a >= 0.0 && a <= 1.0, input_error,
                  "mamba2_step_per_channel: alpha outside [0,1]");
    }
    for (size_t i = 0; i < dv; ++i) {
        for (size_t j = 0; j < dk; ++j) {
            S[i * dk + j] = alpha[i] * S[i * dk + j] + v[i] * k[j];
        }
    }
}

double mamba2_objective(const std::vector<double> & S, const std::vector<double> & S_prev,
                        const std::vector<double> & k, const std::vector<double> & v,
                        double alpha) {
    const size_t dk = k.size(), dv = v.size();
    double obj = 0.0;
    for (size_t i = 0; i < S.size(); ++i) {
        const double d = S[i] - alpha * S_prev[i];
        obj += d * d;
    }
    for (size_t i = 0; i < dv; ++i) {
        double sk = 0.0;
        for (size_t j = 0; j < dk; ++j) sk += S[i * dk + j] * k[j];
        obj -= 2.0 * v[i] * sk;
    }
    return obj;
}

std::vector<double> mamba2_objective_grad(const std::vector<double> & S,
                                          const std::vector<double> & S_prev,
                                          const std::vector<double> & k,
                                          const std::vector<double> & v, double alpha) {
    const size_t dk = k.size(), dv = v.size();
    std::vector<double> g(S.size());
    for (size_t i = 0; i < dv; ++i) {
        for (size_t j = 0; j < dk; ++j) {
            g[i * dk + j] = 2.0 * (S[i * dk + j] - alpha * S_prev[i * dk + j]) - 2.0 * v[i] * k[j];
        }
    }
    return g;
}

std::vector<double> beta_gate(const SsmBlock & block, const std::vector<double> & x) {
    SPD_CHECK((int) x.size() == block.cfg.d_model, shape_error, "beta_gate: input size mismatch");
    for (double v : x) SPD_CHECK(std::isfinite(v), numeric_error, "beta_gate: non-finite input");
    const int gd = block.cfg.gate_dim();
    const int d = block.cfg.d_model;
    std::vector<double> out((size_t) gd);
    for (int i = 0; i < gd; ++i) {
        double a = block.dt_bias->data[(size_t) i];
        for (int j = 0; j < d; ++j) {
            a += block.in_gate->data[(size_t) i * d + j] * x[(size_t) j];
        }
        out[(size_t) i] = a >= 0.0 ? 1.0 / (1.0 + std::exp(-a))
                                   : std::exp(a) / (1.0 + std::exp(a));
    }
    return out;
}

// ---- sequence forward ----

SSMState SSMState::zeros(const SsmBlockConfig & cfg) {
    SSMState st;
    st.S.assign((size_t) cfg.n_heads,
                std::vector<double>((size_t) cfg.d_head * cfg.d_head, 0.0));
    return st;
}

TensorPtr ssm_block_forward(const SsmBlock & block, const TensorPtr & x, SSMState * state) {
    const auto & cfg = block.cfg;
    const int T = x->rows();
    const int d = cfg.d_model, dh = cfg.d_head;
    SPD_CHECK(T >= 1, input_error, "ssm_block_forward: empty sequence");
    SPD_CHECK(x->cols() == d, shape_error, "ssm_block_forward: input width mismatch");

    auto q = matmul_nt(x, block.in_q);
    auto k = matmul_nt(x, block.in_k);
    auto v = matmul_nt(x, block.in_v);
    auto gate_pre = add_rowvec(matmul_nt(x, block.in_gate), block.dt_bias);
    auto beta = sigmoid(gate_pre);                                  // [T, gate_dim]
    auto z = add_rowvec(matmul_nt(x, block.in_z), block.z_bias);    // [T, d]

    std::vector<TensorPtr> head_outputs;
    head_outputs.reserve((size_t) cfg.n_heads);
    for (int h = 0; h < cfg.n_heads; ++h) {
        auto qh = slice_cols(q, h * dh, dh);
        auto kh = slice_cols(k, h * dh, dh);
        auto vh = slice_cols(v, h * dh, dh);
        if (cfg.qk_norm) {
            qh = rmsnorm_rows(qh, block.q_norm);
            kh = rmsnorm_rows(kh, block.k_norm);
        }
        TensorPtr S = state ? make_tensor({dh, dh}, state->S[(size_t) h])
                            : make_tensor({dh, dh}, 0.0);
        std::vector<TensorPtr> ys;
        ys.reserve((size_t) T);
        for (int t = 0; t < T; ++t) {
            auto kt = slice_rows(kh, t, 1);                   // [1, dh]
            auto vt = reshape(slice_rows(vh, t, 1), {dh, 1});
            if (cfg.kind == SsmKind::longhorn) {
                auto bt = reshape(slice_cols(slice_rows(beta, t, 1), h * dh, dh), {dh, 1});
                auto k2 = sum_sq(kt);
                auto eps = mul(bt, reciprocal(add_const(mul_scalar_t(bt, k2), 1.0)));
                auto err = sub(vt, matmul_nt(S, kt));         // v - S k, [dh, 1]
                S = add(S, matmul(mul(eps, err), kt));
            } else if (cfg.per_channel_decay) {
                auto bt = reshape(slice_cols(slice_rows(beta, t, 1), h * dh, dh), {dh, 1});
                auto alpha = add_const(scale(bt, -1.0), 1.0);        // [dh, 1]
                auto ones_row = make_tensor({1, dh}, 1.0);
                S = add(mul(S, matmul(alpha, ones_row)), matmul(vt, kt));
            } else {
                auto bt = slice_cols(slice_rows(beta, t, 1), h, 1);   // [1, 1]
                auto alpha = add_const(scale(bt, -1.0), 1.0);
                S = add(mul_scalar_t(S, reshape(alpha, {1})), matmul(vt, kt));
            }
            auto qt = slice_rows(qh, t, 1);
            ys.push_back(reshape(matmul_nt(S, qt), {1, dh})); // y_t = S_t q_t
            for (double sv : S->data) {
                if (!std::isfinite(sv)) {
                    throw numeric_error("ssm_block_forward: non-finite state at step " +
                                        std::to_string(t));
                }
            }
        }
        if (state) {
            state->S[(size_t) h] = S->data;
        }
        head_outputs.push_back(concat_rows(ys));              // [T, dh]
    }
    if (state) {
        state->steps += T;
    }
    auto y = concat_cols(head_outputs);                       // [T, d]
    auto gated = mul(y, silu(z));
    return matmul_nt(gated, block.out_proj);
}

} // namespace spd
