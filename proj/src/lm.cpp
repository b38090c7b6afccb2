#include "spd/lm.hpp"

#include "spd/optim.hpp"

#include <algorithm>
#include <cmath>

namespace spd {

void ModelConfig::validate() const {
    SPD_CHECK(n_layers >= 2, config_error, "n_layers must be >= 2");
    SPD_CHECK(vocab_size >= 4, config_error, "vocab_size must be >= 4");
    SPD_CHECK(d_model == n_heads * d_head, config_error, "d_model != n_heads * d_head");
    SPD_CHECK(max_seq_len >= 2, config_error, "max_seq_len must be >= 2");
}

SkipConfig SkipConfig::from_indices(int n_layers, const std::vector<int> & idx) {
    SkipConfig s(n_layers);
    for (int i : idx) {
        SPD_CHECK(i >= 0 && i < n_layers, config_error, "skip index out of range");
        s.x[(size_t) i] = 1;
    }
    return s;
}

SkipConfig SkipConfig::from_bitstring(const std::string & bits) {
    SkipConfig s((int) bits.size());
    for (size_t i = 0; i < bits.size(); ++i) {
        SPD_CHECK(bits[i] == '0' || bits[i] == '1', config_error, "bad bitstring");
        s.x[i] = bits[i] == '1' ? 1 : 0;
    }
    return s;
}

int SkipConfig::count() const {
    int c = 0;
    for (uint8_t v : x) c += v;
    return c;
}

std::vector<int> SkipConfig::indices() const {
    std::vector<int> out;
    for (size_t i = 0; i < x.size(); ++i) {
        if (x[i]) out.push_back((int) i);
    }
    return out;
}

std::string SkipConfig::bitstring() const {
    std::string s(x.size(), '0');
    for (size_t i = 0; i < x.size(); ++i) {
        if (x[i]) s[i] = '1';
    }
    return s;
}

ToyLM init_model(const ModelConfig & cfg) {
    cfg.validate();
    ToyLM m;
    m.cfg = cfg;
    Rng rng(cfg.seed);
    const double std_w = 0.02;
    // residual-output projections scaled down with depth, as usual
    const double std_res = 0.02 / std::sqrt(2.0 * cfg.n_layers);

    auto & p = m.params;
    p.add("unembed", randn_tensor({cfg.vocab_size, cfg.d_model}, rng, std_w));
    p.add("wte", randn_tensor({cfg.vocab_size, cfg.d_model}, rng, std_w));
    p.add("wpe", randn_tensor({cfg.max_seq_len, cfg.d_model}, rng, std_w));
    p.add("final_norm", make_tensor({cfg.d_model}, 1.0));
    for (int l = 0; l < cfg.n_layers; ++l) {
        const std::string pre = "layer" + std::to_string(l) + ".";
        p.add(pre + "attn_norm", make_tensor({cfg.d_model}, 1.0));
        p.add(pre + "wq", randn_tensor({cfg.d_model, cfg.d_model}, rng, std_w));
        p.add(pre + "wk", randn_tensor({cfg.d_model, cfg.d_model}, rng, std_w));
        p.add(pre + "wv", randn_tensor({cfg.d_model, cfg.d_model}, rng, std_w));
        p.add(pre + "wo", randn_tensor({cfg.d_model, cfg.d_model}, rng, std_res));
        p.add(pre + "mlp_norm", make_tensor({cfg.d_model}, 1.0));
        p.add(pre + "w1", randn_tensor({4 * cfg.d_model, cfg.d_model}, rng, std_w));
        p.add(pre + "w2", randn_tensor({cfg.d_model, 4 * cfg.d_model}, rng, std_res));
    }
    return m;
}

static TensorPtr attn_sublayer(const ToyLM & m, int l, const TensorPtr & xn) {
    const auto & cfg = m.cfg;
    const std::string pre = "layer" + std::to_string(l) + ".";
    auto q = matmul_nt(xn, m.params.at(pre + "wq"));
    auto k = matmul_nt(xn, m.params.at(pre + "wk"));
    auto v = matmul_nt(xn, m.params.at(pre + "wv"));
    const double sc = 1.0 / std::sqrt((double) cfg.d_head);
    std::vector<TensorPtr> heads;
    heads.reserve((size_t) cfg.n_heads);
    for (int h = 0; h < cfg.n_heads; ++h) {
        auto qh = slice_cols(q, h * cfg.d_head, cfg.d_head);
        auto kh = slice_cols(k, h * cfg.d_head, cfg.d_head);
        auto vh = slice_cols(v, h * cfg.d_head, cfg.d_head);
        auto att = causal_softmax(scale(matmul_nt(qh, kh), sc));
        heads.push_back(matmul(att, vh));
    }
    return matmul_nt(concat_cols(heads), m.params.at(pre + "wo"));
}

static TensorPtr mlp_sublayer(const ToyLM & m, int l, const TensorPtr & xn) {
    const std::string pre = "layer" + std::to_string(l) + ".";
    auto h = silu(matmul_nt(xn, m.params.at(pre + "w1")));
    return matmul_nt(h, m.params.at(pre + "w2"));
}

TensorPtr lm_forward(const ToyLM & model, const std::vector<int> & tokens,
                     const SkipConfig & skip, const AttnOverride * override_hook) {
    const auto & cfg = model.cfg;
    SPD_CHECK(!tokens.empty(), input_error, "forward: empty token sequence");
    SPD_CHECK((int) tokens.size() <= cfg.max_seq_len, input_error,
              "forward: sequence longer than max_seq_len");
    SPD_CHECK(skip.size() == cfg.n_layers, config_error, "skip length != n_layers");
    for (int t : tokens) {
        SPD_CHECK(t >= 0 && t < cfg.vocab_size, input_error, "token out of range");
    }

    std::vector<int> pos((size_t) tokens.size());
    for (size_t i = 0; i < pos.size(); ++i) pos[i] = (int) i;

    auto x = add(row_gather(model.params.at("wte"), tokens),
                 row_gather(model.params.at("wpe"), pos));

    for (int l = 0; l < cfg.n_layers; ++l) {
        const std::string pre = "layer" + std::to_string(l) + ".";
        const bool replaced = override_hook && override_hook->replaced[(size_t) l];
        if (replaced) {
            auto xn = rmsnorm_rows(x, model.params.at(pre + "attn_norm"));
            x = add(x, override_hook->fn(l, xn));
        } else if (!skip.x[(size_t) l]) {
            auto xn = rmsnorm_rows(x, model.params.at(pre + "attn_norm"));
            x = add(x, attn_sublayer(model, l, xn));
        }
        auto xn2 = rmsnorm_rows(x, model.params.at(pre + "mlp_norm"));
        x = add(x, mlp_sublayer(model, l, xn2));
    }
    auto xf = rmsnorm_rows(x, model.params.at("final_norm"));
    return matmul_nt(xf, model.params.at("unembed"));
}

std::vector<double> next_token_dist(const ToyLM & model, const std::vector<int> & tokens,
                                    const SkipConfig & skip, const AttnOverride * override_hook) {
    NoGradGuard ng;
    auto logits = lm_forward(model, tokens, skip, override_hook);
    const int n = logits->rows(), v = logits->cols();
    auto probs = softmax_rows(slice_rows(logits, n - 1, 1));
    return std::vector<double>(probs->data.begin(), probs->data.begin() + v);
}

// ---- cost model ----

double attn_flops_at(const ModelConfig & cfg, int64_t t) {
    const double d = (double) cfg.d_model;
    // q,k,v,out projections + score/mix terms over t attended positions
    return 8.0 * d * d + 4.0 * (double) t * d;
}

double mlp_flops(const ModelConfig & cfg) {
    const double d = (double) cfg.d_model;
    return 16.0 * d * d;
}

double unembed_flops(const ModelConfig & cfg) {
    return 2.0 * (double) cfg.d_model * (double) cfg.vocab_size;
}

double per_position_flops(const ModelConfig & cfg, const SkipConfig & skip, int64_t t) {
    const int kept = cfg.n_layers - skip.count();
    return (double) kept * attn_flops_at(cfg, t) + (double) cfg.n_layers * mlp_flops(cfg) +
           unembed_flops(cfg);
}

double flop_cost(const ToyLM & model, const SkipConfig & skip, int64_t seq_len) {
    SPD_CHECK(seq_len >= 1, input_error, "flop_cost: seq_len must be >= 1");
    double total = 0.0;
    for (int64_t t = 1; t <= seq_len; ++t) {
        total += per_position_flops(model.cfg, skip, t);
    }
    return total / kCostUnitFlops;
}

double incremental_cost(const ModelConfig & cfg, const SkipConfig & skip,
                        int64_t ctx_len, int64_t n_new) {
    double total = 0.0;
    for (int64_t i = 1; i <= n_new; ++i) {
        total += per_position_flops(cfg, skip, ctx_len + i);
    }
    return total / kCostUnitFlops;
}

// ---- base training ----

static TensorPtr window_ce_loss(const ToyLM & model, const std::vector<int> & window) {
    // predict window[1..] from window[..n-1]
    std::vector<int> input(window.begin(), window.end() - 1);
    std::vector<int> target(window.begin() + 1, window.end());
    auto logits = lm_forward(model, input, SkipConfig(model.cfg.n_layers));
    auto lp = log_softmax_rows(logits);
    auto picked = pick_per_row(lp, target);
    return scale(mean_all(picked), -1.0);
}

TrainBaseResult train_base(ToyLM & model, const std::vector<int> & train_tokens,
                           const std::vector<int> & heldout_tokens,
                           const TrainBaseConfig & cfg) {
    SPD_CHECK(!train_tokens.empty(), input_error, "train_base: empty corpus");
    SPD_CHECK((int64_t) train_tokens.size() > cfg.context_len + 1, input_error,
              "train_base: corpus shorter than one window");
    TrainBaseResult res;
    if (cfg.steps == 0) {
        res.heldout_ce = heldout_tokens.empty()
                             ? 0.0
                             : cross_entropy(model, heldout_tokens, cfg.context_len);
        return res;
    }

    AdamW opt(0.9, 0.95, 0.01);
    Rng rng(cfg.seed);
    const int64_t max_start = (int64_t) train_tokens.size() - cfg.context_len - 1;

    for (int64_t step = 0; step < cfg.steps; ++step) {
        model.params.zero_grad();
        double loss_acc = 0.0;
        for (int b = 0; b < cfg.batch_size; ++b) {
            const int64_t s = rng.uniform_int64(max_start);
            std::vector<int> window(train_tokens.begin() + s,
                                    train_tokens.begin() + s + cfg.context_len + 1);
            try {
                auto loss = scale(window_ce_loss(model, window), 1.0 / cfg.batch_size);
                backward(loss);
                loss_acc += loss->scalar();
            } catch (const numeric_error & e) {
                throw numeric_error("train_base diverged at step " + std::to_string(step) +
                                    ", batch " + std::to_string(b) + " (window start " +
                                    std::to_string(s) + "): " + e.what());
            }
        }
        if (!std::isfinite(loss_acc)) {
            throw numeric_error("train_base: loss diverged at step " + std::to_string(step));
        }
        opt.clip_grad_norm(model.params, cfg.grad_clip);
        const double lr = cosine_lr(step, cfg.steps, cfg.peak_lr, cfg.min_lr);
        opt.step(model.params, lr);
        res.log.push_back({step, lr, loss_acc});
    }
    if (!heldout_tokens.empty()) {
        res.heldout_ce = cross_entropy(model, heldout_tokens, cfg.context_len);
    }
    return res;
}

double cross_entropy(const ToyLM & model, const std::vector<int> & tokens,
                     int context_len, int64_t max_windows) {
    SPD_CHECK((int64_t) tokens.size() >= context_len + 1, input_error,
              "cross_entropy: stream shorter than one window");
    NoGradGuard ng;
    double nll = 0.0;
    int64_t count = 0;
    int64_t windows = 0;
    for (size_t s = 0; s + context_len + 1 <= tokens.size() && windows < max_windows;
         s += context_len, ++windows) {
        std::vector<int> input(tokens.begin() + s, tokens.begin() + s + context_len);
        std::vector<int> target(tokens.begin() + s + 1, tokens.begin() + s + context_len + 1);
        auto lp = log_softmax_rows(lm_forward(model, input, SkipConfig(model.cfg.n_layers)));
        for (size_t i = 0; i < target.size(); ++i) {
            nll -= lp->data[i * model.cfg.vocab_size + target[i]];
            ++count;
        }
    }
    return nll / (double) count;
}

} // namespace spd
