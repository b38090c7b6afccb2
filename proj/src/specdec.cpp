#include "spd/specdec.hpp"

#include "spd/rng.hpp"

#include <chrono>

#include <algorithm>
#include <cmath>

namespace spd {

static void check_dist_pair(const std::vector<double> & p, const std::vector<double> & q,
                            const char * op) {
    SPD_CHECK(p.size() == q.size() && !p.empty(), shape_error,
              std::string(op) + ": distribution size mismatch");
}

static int argmax_dist(const std::vector<double> & p) {
    int best = 0;
    for (size_t i = 1; i < p.size(); ++i) {
        if (p[i] > p[best]) best = (int) i;
    }
    return best;
}

double accept_prob(const std::vector<double> & p, const std::vector<double> & q, int token) {
    check_dist_pair(p, q, "accept_prob");
    SPD_CHECK(token >= 0 && token < (int) p.size(), input_error, "accept_prob: token out of range");
    SPD_CHECK(q[(size_t) token] > 0.0, input_error,
              "accept_prob: proposed token has zero draft probability (sampler contract violated)");
    return std::min(1.0, p[(size_t) token] / q[(size_t) token]);
}

std::vector<double> residual_distribution(const std::vector<double> & p,
                                          const std::vector<double> & q) {
    check_dist_pair(p, q, "residual_distribution");
    std::vector<double> r(p.size());
    double z = 0.0;
    for (size_t i = 0; i < p.size(); ++i) {
        r[i] = std::max(0.0, p[i] - q[i]);
        z += r[i];
    }
    SPD_CHECK(z > 0.0, numeric_error, "residual_distribution: p == q, residual undefined");
    for (auto & v : r) v /= z;
    return r;
}

double tv_distance(const std::vector<double> & p, const std::vector<double> & q) {
    check_dist_pair(p, q, "tv_distance");
    double s = 0.0;
    for (size_t i = 0; i < p.size(); ++i) {
        s += std::fabs(p[i] - q[i]);
    }
    return 0.5 * s;
}

double acceptance_rate(const std::vector<double> & p, const std::vector<double> & q) {
    check_dist_pair(p, q, "acceptance_rate");
    double s = 0.0;
    for (size_t i = 0; i < p.size(); ++i) {
        s += std::min(p[i], q[i]);
    }
    return s;
}

// target next-token distributions at the K_r + 1 verification positions,
// from a single forward over ctx + drafted
static std::vector<std::vector<double>> verification_dists(const ToyLM & target,
                                                           const std::vector<int> & ctx,
                                                           const std::vector<int> & drafted) {
    NoGradGuard ng;
    std::vector<int> full = ctx;
    full.insert(full.end(), drafted.begin(), drafted.end());
    SkipConfig none(target.cfg.n_layers);
    auto logits = lm_forward(target, full, none);
    const int v = logits->cols();
    const int n = logits->rows();
    auto probs = softmax_rows(slice_rows(logits, (int) ctx.size() - 1,
                                         n - (int) ctx.size() + 1));
    std::vector<std::vector<double>> out((size_t) drafted.size() + 1);
    for (size_t i = 0; i < out.size(); ++i) {
        out[i].assign(probs->data.begin() + (int64_t) i * v,
                      probs->data.begin() + (int64_t) (i + 1) * v);
    }
    return out;
}

GenResult spec_generate(const ToyLM & target, const SkipConfig & skip,
                        const std::vector<int> & prompt, const SpecDecConfig & cfg) {
    cfg.validate();
    SPD_CHECK(!prompt.empty(), input_error, "spec_generate: empty prompt");
    SPD_CHECK((int) prompt.size() + cfg.max_new_tokens <= target.cfg.max_seq_len, input_error,
              "spec_generate: prompt + max_new_tokens exceeds max_seq_len");
    SPD_CHECK(skip.size() == target.cfg.n_layers, config_error,
              "spec_generate: skip length mismatch");

    const bool sample = cfg.mode == SpecDecConfig::Mode::sample;
    Rng rng(cfg.seed);
    SkipConfig none(target.cfg.n_layers);

    GenResult res;
    res.stats.accept_hist.assign((size_t) cfg.K + 1, 0);
    std::vector<int> ctx = prompt;

    while ((int) res.tokens.size() < cfg.max_new_tokens) {
        const int remaining = cfg.max_new_tokens - (int) res.tokens.size();
        const int kr = std::min(cfg.K, remaining);
        const int64_t len0 = (int64_t) ctx.size();   // context length at round start
        const auto wall0 = std::chrono::steady_clock::now();

        std::vector<int> drafted;
        std::vector<std::vector<double>> qdists;
        drafted.reserve((size_t) kr);
        for (int i = 0; i < kr; ++i) {
            std::vector<int> dctx = ctx;
            dctx.insert(dctx.end(), drafted.begin(), drafted.end());
            auto q = next_token_dist(target, dctx, skip);
            drafted.push_back(sample ? rng.categorical(q) : argmax_dist(q));
            qdists.push_back(std::move(q));
        }

        auto pdists = verification_dists(target, ctx, drafted);

        int accepted_here = 0;
        bool rejected = false;
        auto emit = [&](int tok) {
            ctx.push_back(tok);
            res.tokens.push_back(tok);
        };
        for (int i = 0; i < kr; ++i) {
            if (sample) {
                const double a = accept_prob(pdists[(size_t) i], qdists[(size_t) i], drafted[(size_t) i]);
                if (rng.uniform() < a) {
                    emit(drafted[(size_t) i]);
                    ++accepted_here;
                } else {
                    auto pr = residual_distribution(pdists[(size_t) i], qdists[(size_t) i]);
                    emit(rng.categorical(pr));
                    rejected = true;
                    break;
                }
            } else {
                const int am = argmax_dist(pdists[(size_t) i]);
                emit(am);
                if (drafted[(size_t) i] == am) {
                    ++accepted_here;
                } else {
                    rejected = true;
                    break;
                }
            }
        }
        if (!rejected && (int) res.tokens.size() < cfg.max_new_tokens) {
            const auto & pk = pdists[(size_t) kr];
            emit(sample ? rng.categorical(pk) : argmax_dist(pk));
        }

        res.stats.rounds += 1;
        res.stats.proposed += kr;
        res.stats.accepted += accepted_here;
        res.stats.accept_hist[(size_t) accepted_here] += 1;
        if (cfg.wall_clock) {
            res.stats.cost_units +=
                std::chrono::duration<double>(std::chrono::steady_clock::now() - wall0).count();
        } else {
            // K_r draft extensions plus parallel verification of K_r + 1 positions
            res.stats.cost_units += incremental_cost(target.cfg, skip, len0 - 1, kr) +
                                    incremental_cost(target.cfg, none, len0 - 1, kr + 1);
        }
    }

    res.stats.generated = (int64_t) res.tokens.size();
    return res;
}

std::vector<int> plain_generate(const ToyLM & target, const std::vector<int> & prompt,
                                int max_new_tokens, SpecDecConfig::Mode mode, uint64_t seed) {
    SPD_CHECK(!prompt.empty(), input_error, "plain_generate: empty prompt");
    SPD_CHECK((int) prompt.size() + max_new_tokens <= target.cfg.max_seq_len, input_error,
              "plain_generate: prompt + max_new_tokens exceeds max_seq_len");
    Rng rng(seed);
    SkipConfig none(target.cfg.n_layers);
    std::vector<int> ctx = prompt;
    std::vector<int> out;
    for (int i = 0; i < max_new_tokens; ++i) {
        auto p = next_token_dist(target, ctx, none);
        const int tok = mode == SpecDecConfig::Mode::sample ? rng.categorical(p) : argmax_dist(p);
        ctx.push_back(tok);
        out.push_back(tok);
    }
    return out;
}

double expected_tokens(double beta, int K) {
    SPD_CHECK(beta >= 0.0 && beta <= 1.0, input_error, "expected_tokens: beta outside [0,1]");
    SPD_CHECK(K >= 1, input_error, "expected_tokens: K must be >= 1");
    if (beta > 1.0 - 1e-12) {
        return (double) K + 1.0;
    }
    return (1.0 - std::pow(beta, (double) K + 1.0)) / (1.0 - beta);
}

double expected_throughput(double beta, int K, double cost_q, double cost_p) {
    SPD_CHECK(cost_q > 0.0 && cost_p > 0.0, input_error, "expected_throughput: costs must be > 0");
    return expected_tokens(beta, K) / ((double) K * cost_q + cost_p);
}

ThroughputStats simulate_rounds(double beta, int K, int64_t rounds, uint64_t seed,
                                double cost_q, double cost_p) {
    SPD_CHECK(beta >= 0.0 && beta <= 1.0, input_error, "simulate_rounds: beta outside [0,1]");
    const std::vector<double> q = {1.0, 0.0};
    const std::vector<double> p = {beta, 1.0 - beta};
    Rng rng(seed);
    ThroughputStats st;
    st.accept_hist.assign((size_t) K + 1, 0);
    for (int64_t r = 0; r < rounds; ++r) {
        int accepted = 0;
        for (int i = 0; i < K; ++i) {
            const int tok = 0;   // draft always proposes token 0 under q = [1, 0]
            const double a = accept_prob(p, q, tok);
            if (rng.uniform() < a) {
                ++accepted;
            } else {
                auto pr = residual_distribution(p, q);
                (void) rng.categorical(pr);
                break;
            }
        }
        if (accepted == K) {
            (void) rng.categorical(p);   // bonus token
        }
        st.rounds += 1;
        st.proposed += K;
        st.accepted += accepted;
        st.generated += accepted + 1;
        st.accept_hist[(size_t) accepted] += 1;
        st.cost_units += (double) K * cost_q + cost_p;
    }
    return st;
}

ThroughputMeasurement measure_throughput(const ToyLM & target, const SkipConfig & skip,
                                         const std::vector<std::vector<int>> & prompts,
                                         const SpecDecConfig & cfg) {
    SPD_CHECK(!prompts.empty(), input_error, "measure_throughput: no prompts");
    ThroughputMeasurement m;
    m.aggregate.accept_hist.assign((size_t) cfg.K + 1, 0);
    for (size_t i = 0; i < prompts.size(); ++i) {
        GenResult r;
        try {
            r = spec_generate(target, skip, prompts[i], cfg);
        } catch (const error & e) {
            throw error("measure_throughput: prompt " + std::to_string(i) + ": " + e.what());
        }
        m.per_prompt_tau.push_back(r.stats.tau());
        m.aggregate.rounds += r.stats.rounds;
        m.aggregate.proposed += r.stats.proposed;
        m.aggregate.accepted += r.stats.accepted;
        m.aggregate.generated += r.stats.generated;
        m.aggregate.cost_units += r.stats.cost_units;
        for (size_t k = 0; k < r.stats.accept_hist.size(); ++k) {
            m.aggregate.accept_hist[k] += r.stats.accept_hist[k];
        }
    }
    double sum = 0.0;
    for (double t : m.per_prompt_tau) sum += t;
    m.mean_tau = sum / (double) m.per_prompt_tau.size();
    double sq = 0.0;
    for (double t : m.per_prompt_tau) sq += (t - m.mean_tau) * (t - m.mean_tau);
    const size_t n = m.per_prompt_tau.size();
    m.stderr_tau = n > 1 ? std::sqrt(sq / (double) (n - 1) / (double) n) : 0.0;
    return m;
}

} // namespace spd
