#include "spd/distill.hpp"

#include "spd/checkpoint.hpp"
#include "spd/optim.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace spd {

using json = nlohmann::json;

AttnOverride HybridModel::make_override() const {
    AttnOverride ov;
    ov.replaced = skip.x;
    // capture by value: blocks index lookup per layer
    std::vector<int> layer_to_block((size_t) base.cfg.n_layers, -1);
    for (size_t i = 0; i < replaced_layers.size(); ++i) {
        layer_to_block[(size_t) replaced_layers[i]] = (int) i;
    }
    const auto * self = this;
    ov.fn = [self, layer_to_block](int layer, const TensorPtr & xn) {
        const int bi = layer_to_block[(size_t) layer];
        SPD_CHECK(bi >= 0, config_error, "hybrid: no block for layer");
        return ssm_block_forward(self->blocks[(size_t) bi], xn);
    };
    return ov;
}

TensorPtr HybridModel::forward(const std::vector<int> & tokens) const {
    auto ov = make_override();
    return lm_forward(base, tokens, SkipConfig(base.cfg.n_layers), &ov);
}

std::vector<double> HybridModel::next_dist(const std::vector<int> & tokens) const {
    auto ov = make_override();
    return next_token_dist(base, tokens, SkipConfig(base.cfg.n_layers), &ov);
}

void HybridModel::set_trainable_for_mode(bool self_mode) {
    if (self_mode) {
        base.params.set_all_trainable(false);
        for (int l : replaced_layers) {
            base.params.set_trainable_prefix("layer" + std::to_string(l) + ".ssm.", true);
        }
    } else {
        base.params.set_all_trainable(true);
    }
}

HybridModel build_hybrid(const ToyLM & base, const SkipConfig & skip, SsmKind kind,
                         uint64_t seed, bool zero_init) {
    SPD_CHECK(skip.size() == base.cfg.n_layers, config_error,
              "build_hybrid: skip length != n_layers");
    HybridModel h;
    h.base.cfg = base.cfg;
    h.base.params = base.params.clone();
    h.skip = skip;
    h.kind = kind;
    h.block_cfg = default_block_config(kind, base.cfg);
    h.replaced_layers = skip.indices();
    Rng rng(seed);
    for (int l : h.replaced_layers) {
        SsmBlock b = init_from_attention(base, l, h.block_cfg, rng.next_u64(), zero_init);
        register_block_params(h.base.params, "layer" + std::to_string(l) + ".ssm.", b);
        h.blocks.push_back(std::move(b));
    }
    h.set_trainable_for_mode(true);
    return h;
}

double init_equivalence_gap(const HybridModel & hybrid, const ToyLM & base,
                            const std::vector<std::vector<int>> & prompts) {
    NoGradGuard ng;
    double gap = 0.0;
    for (const auto & p : prompts) {
        auto hl = hybrid.forward(p);
        auto dl = lm_forward(base, p, hybrid.skip);
        SPD_CHECK(hl->data.size() == dl->data.size(), shape_error,
                  "init_equivalence_gap: logit shape mismatch");
        for (size_t i = 0; i < hl->data.size(); ++i) {
            gap = std::max(gap, std::fabs(hl->data[i] - dl->data[i]));
        }
    }
    return gap;
}

void save_hybrid(const std::string & path, const HybridModel & hybrid) {
    json meta;
    meta["kind"] = "hybrid";
    meta["model"] = {{"n_layers", hybrid.base.cfg.n_layers},
                     {"d_model", hybrid.base.cfg.d_model},
                     {"n_heads", hybrid.base.cfg.n_heads},
                     {"d_head", hybrid.base.cfg.d_head},
                     {"vocab_size", hybrid.base.cfg.vocab_size},
                     {"max_seq_len", hybrid.base.cfg.max_seq_len},
                     {"seed", hybrid.base.cfg.seed}};
    meta["skip"] = hybrid.skip.bitstring();
    meta["ssm_kind"] = ssm_kind_name(hybrid.kind);
    meta["qk_norm"] = hybrid.block_cfg.qk_norm;
    meta["beta_init_lo"] = hybrid.block_cfg.beta_init_lo;
    meta["beta_init_hi"] = hybrid.block_cfg.beta_init_hi;
    write_checkpoint(path, meta, hybrid.base.params);
}

HybridModel load_hybrid(const std::string & path) {
    auto lc = read_checkpoint(path);
    json meta = json::parse(lc.meta_json);
    SPD_CHECK(meta.value("kind", "") == "hybrid", io_error, "checkpoint: not a hybrid: " + path);
    HybridModel h;
    const auto & m = meta.at("model");
    h.base.cfg.n_layers = m.at("n_layers");
    h.base.cfg.d_model = m.at("d_model");
    h.base.cfg.n_heads = m.at("n_heads");
    h.base.cfg.d_head = m.at("d_head");
    h.base.cfg.vocab_size = m.at("vocab_size");
    h.base.cfg.max_seq_len = m.at("max_seq_len");
    h.base.cfg.seed = m.at("seed");
    h.base.cfg.validate();
    h.base.params = std::move(lc.store);
    h.skip = SkipConfig::from_bitstring(meta.at("skip"));
    h.kind = ssm_kind_from_name(meta.at("ssm_kind"));
    h.block_cfg = default_block_config(h.kind, h.base.cfg);
    h.block_cfg.qk_norm = meta.at("qk_norm");
    h.block_cfg.beta_init_lo = meta.at("beta_init_lo");
    h.block_cfg.beta_init_hi = meta.at("beta_init_hi");
    h.replaced_layers = h.skip.indices();
    for (int l : h.replaced_layers) {
        h.blocks.push_back(block_from_store(h.base.params,
                                            "layer" + std::to_string(l) + ".ssm.", h.block_cfg));
    }
    h.set_trainable_for_mode(true);
    return h;
}

// ---- training ----

TensorPtr kl_loss(const TensorPtr & teacher_logits, const TensorPtr & student_logits) {
    SPD_CHECK(teacher_logits->shape == student_logits->shape, shape_error,
              "kl_loss: logit shape mismatch");
    SPD_CHECK(!teacher_logits->requires_grad, input_error,
              "kl_loss: teacher logits must be constant (no-grad forward)");
    TensorPtr p_t, lp_t;
    {
        NoGradGuard ng;
        p_t = softmax_rows(teacher_logits);
        lp_t = log_softmax_rows(teacher_logits);
    }
    auto lp_s = log_softmax_rows(student_logits);
    auto per_elem = mul(p_t, sub(lp_t, lp_s));
    return scale(sum_all(per_elem), 1.0 / (double) teacher_logits->rows());
}

static std::vector<int> window_at(const std::vector<int> & tokens, int64_t start, int len) {
    return std::vector<int>(tokens.begin() + start, tokens.begin() + start + len);
}

double eval_kl(const HybridModel & hybrid, const ToyLM & teacher,
               const std::vector<int> & heldout_tokens, int context_len, int windows) {
    SPD_CHECK((int64_t) heldout_tokens.size() >= context_len, input_error,
              "eval_kl: held-out split shorter than one window");
    NoGradGuard ng;
    double acc = 0.0;
    int used = 0;
    for (int w = 0; w < windows; ++w) {
        const int64_t start = (int64_t) w * context_len;
        if (start + context_len > (int64_t) heldout_tokens.size()) {
            break;
        }
        auto win = window_at(heldout_tokens, start, context_len);
        auto tl = lm_forward(teacher, win, SkipConfig(teacher.cfg.n_layers));
        auto sl = hybrid.forward(win);
        acc += kl_loss(tl, sl)->scalar();
        ++used;
    }
    SPD_CHECK(used > 0, input_error, "eval_kl: no complete windows");
    return acc / (double) used;
}

TrainLog distill_train(HybridModel & hybrid, const ToyLM & teacher,
                       const std::vector<int> & train_tokens,
                       const std::vector<int> & heldout_tokens, const DistillConfig & cfg) {
    SPD_CHECK(cfg.steps >= 0, config_error, "distill: steps must be >= 0");
    SPD_CHECK(cfg.peak_lr >= cfg.min_lr && cfg.min_lr >= 0.0, config_error,
              "distill: peak lr must be >= min lr >= 0");
    SPD_CHECK(teacher.cfg.vocab_size == hybrid.base.cfg.vocab_size, config_error,
              "distill: teacher and student vocabularies differ");
    SPD_CHECK((int64_t) train_tokens.size() > cfg.context_len + 1, input_error,
              "distill: corpus shorter than one window");

    hybrid.set_trainable_for_mode(cfg.mode == DistillConfig::Mode::self_distill);

    double peak = cfg.peak_lr, floor_lr = cfg.min_lr;
    if (hybrid.kind == SsmKind::mamba2 && cfg.mamba2_peak_lr > 0.0) {
        peak = cfg.mamba2_peak_lr;
        floor_lr = cfg.mamba2_min_lr > 0.0 ? cfg.mamba2_min_lr : cfg.min_lr;
    }

    TrainLog log;
    if (cfg.steps == 0) {
        return log;
    }
    AdamW opt(cfg.beta1, cfg.beta2, cfg.weight_decay);
    const int64_t max_start = (int64_t) train_tokens.size() - cfg.context_len;
    const SkipConfig none(teacher.cfg.n_layers);

    for (int64_t step = cfg.start_step; step < cfg.steps; ++step) {
        Rng step_rng = Rng(cfg.seed).fork((uint64_t) step);
        hybrid.base.params.zero_grad();
        double loss_acc = 0.0;
        for (int b = 0; b < cfg.batch_size; ++b) {
            const int64_t s = step_rng.uniform_int64(max_start);
            auto win = window_at(train_tokens, s, cfg.context_len);
            try {
                TensorPtr tl;
                {
                    NoGradGuard ng;
                    tl = lm_forward(teacher, win, none);
                }
                auto sl = hybrid.forward(win);
                auto loss = scale(kl_loss(tl, sl), 1.0 / cfg.batch_size);
                if (!std::isfinite(loss->scalar())) {
                    throw numeric_error("loss is not finite");
                }
                backward(loss);
                loss_acc += loss->scalar();
            } catch (const numeric_error & e) {
                throw numeric_error("distill aborted at step " + std::to_string(step) +
                                    ", batch " + std::to_string(b) + ": " + e.what());
            }
        }
        const double gnorm = opt.clip_grad_norm(hybrid.base.params, cfg.grad_clip);
        const double lr = cosine_lr(step, cfg.steps, peak, floor_lr);
        opt.step(hybrid.base.params, lr);
        log.rows.push_back({step, lr, loss_acc, gnorm});

        if (cfg.eval_every > 0 && (step % cfg.eval_every == 0 || step == cfg.steps - 1) &&
            !heldout_tokens.empty()) {
            log.evals.push_back(
                {step, eval_kl(hybrid, teacher, heldout_tokens, cfg.context_len, cfg.eval_windows)});
        }
        if (cfg.checkpoint_every > 0 && !cfg.checkpoint_path.empty() &&
            (step + 1) % cfg.checkpoint_every == 0) {
            save_hybrid(cfg.checkpoint_path + ".step" + std::to_string(step + 1), hybrid);
        }
    }
    return log;
}

void write_trainlog_csv(const std::string & path, const TrainLog & log) {
    FILE * f = std::fopen(path.c_str(), "wb");
    SPD_CHECK(f, io_error, "trainlog: cannot open for write: " + path);
    std::fprintf(f, "step,lr,loss,grad_norm\n");
    for (const auto & r : log.rows) {
        std::fprintf(f, "%lld,%.17g,%.17g,%.17g\n", (long long) r.step, r.lr, r.loss, r.grad_norm);
    }
    std::fclose(f);
}

} // namespace spd
