#include "spd/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

namespace spd {

MarkovSource::MarkovSource(const CorpusConfig & cfg) : cfg_(cfg) {
    SPD_CHECK(cfg.vocab_size >= 8, config_error, "corpus: vocab too small");
    SPD_CHECK(cfg.active_tokens >= 4 && cfg.active_tokens + 2 <= cfg.vocab_size, config_error,
              "corpus: active token range invalid");
    SPD_CHECK(cfg.support >= 2 && cfg.support <= cfg.active_tokens, config_error,
              "corpus: invalid support size");
    SPD_CHECK(cfg.key_alphabet + 2 <= cfg.vocab_size, config_error,
              "corpus: key alphabet collides with markers");

    // The chain runs on a small active alphabet so its (a, b) context table
    // stays memorizable by a desk-scale model; markers (top two ids) and any
    // other ids never occur outside templates.
    n_markov_ = cfg.active_tokens;
    const size_t n_ctx = (size_t) n_markov_ * n_markov_;
    succ_.resize(n_ctx * cfg.support);
    prob_.resize(n_ctx * cfg.support);
    cum_.resize(n_ctx * cfg.support);

    Rng rng(cfg.seed);
    std::vector<double> w((size_t) cfg.support);
    for (size_t c = 0; c < n_ctx; ++c) {
        // successor set: pseudo-random but duplicate-free per context
        for (int s = 0; s < cfg.support; ++s) {
            int cand;
            bool fresh;
            do {
                cand = (int) rng.uniform_int64(n_markov_);
                fresh = true;
                for (int t = 0; t < s; ++t) {
                    if (succ_[c * cfg.support + t] == cand) {
                        fresh = false;
                        break;
                    }
                }
            } while (!fresh);
            succ_[c * cfg.support + s] = cand;
        }
        double tot = 0.0;
        for (int s = 0; s < cfg.support; ++s) {
            // exponential spread; smaller concentration -> peakier contexts
            w[s] = std::pow(cfg.concentration, (double) s) * (0.5 + rng.uniform());
            tot += w[s];
        }
        double acc = 0.0;
        for (int s = 0; s < cfg.support; ++s) {
            prob_[c * cfg.support + s] = w[s] / tot;
            acc += w[s] / tot;
            cum_[c * cfg.support + s] = acc;
        }
    }
}

int MarkovSource::step(int a, int b, Rng & rng) const {
    a = std::min(a, n_markov_ - 1);
    b = std::min(b, n_markov_ - 1);
    const size_t base = ctx_index(a, b) * cfg_.support;
    const double u = rng.uniform();
    for (int s = 0; s < cfg_.support; ++s) {
        if (u < cum_[base + s]) {
            return succ_[base + s];
        }
    }
    return succ_[base + cfg_.support - 1];
}

std::vector<int> MarkovSource::sample_stream(int64_t n, Rng & rng) const {
    std::vector<int> out;
    out.reserve((size_t) n);
    int a = (int) rng.uniform_int64(n_markov_);
    int b = (int) rng.uniform_int64(n_markov_);
    for (int64_t i = 0; i < n; ++i) {
        const int c = step(a, b, rng);
        out.push_back(c);
        a = b;
        b = c;
    }
    return out;
}

std::vector<int> MarkovSource::sample_corpus(int64_t n, Rng & rng) const {
    std::vector<int> out;
    out.reserve((size_t) n + 256);
    int a = (int) rng.uniform_int64(n_markov_);
    int b = (int) rng.uniform_int64(n_markov_);
    auto emit_markov = [&](int64_t count) {
        for (int64_t i = 0; i < count && (int64_t) out.size() < n; ++i) {
            const int c = step(a, b, rng);
            out.push_back(c);
            a = b;
            b = c;
        }
    };
    std::vector<int> key((size_t) cfg_.key_len);
    while ((int64_t) out.size() < n) {
        if (rng.uniform() < cfg_.template_rate) {
            key[0] = (int) rng.uniform_int64(cfg_.key_alphabet);
            for (size_t i = 1; i < key.size(); ++i) {
                key[i] = cfg_.sequential_keys ? (key[0] + (int) i) % cfg_.key_alphabet
                                              : (int) rng.uniform_int64(cfg_.key_alphabet);
            }
            const int gap = cfg_.gap_min + (int) rng.uniform_int64(cfg_.gap_max - cfg_.gap_min + 1);
            auto emit_key = [&]() {
                out.push_back(marker_open());
                for (int k : key) out.push_back(k);
                out.push_back(marker_close());
            };
            emit_key();
            emit_markov(gap);
            emit_key();
            const int64_t rest = cfg_.chunk_len - (2 * (cfg_.key_len + 2) + gap);
            emit_markov(std::max<int64_t>(rest, 4));
        } else {
            emit_markov(cfg_.chunk_len);
        }
    }
    out.resize((size_t) n);
    return out;
}

std::vector<double> MarkovSource::stationary_distribution(int iters) const {
    const size_t n_ctx = (size_t) n_markov_ * n_markov_;
    std::vector<double> pi(n_ctx, 1.0 / (double) n_ctx);
    std::vector<double> next(n_ctx, 0.0);
    for (int it = 0; it < iters; ++it) {
        std::fill(next.begin(), next.end(), 0.0);
        for (size_t c = 0; c < n_ctx; ++c) {
            if (pi[c] == 0.0) {
                continue;
            }
            const int b = (int) (c % n_markov_);
            const size_t base = c * cfg_.support;
            for (int s = 0; s < cfg_.support; ++s) {
                const int nxt = succ_[base + s];
                next[ctx_index(b, nxt)] += pi[c] * prob_[base + s];
            }
        }
        std::swap(pi, next);
    }
    std::vector<double> tok((size_t) cfg_.vocab_size, 0.0);
    for (size_t c = 0; c < n_ctx; ++c) {
        tok[c % n_markov_] += pi[c];
    }
    return tok;
}

double MarkovSource::entropy_rate() const {
    const size_t n_ctx = (size_t) n_markov_ * n_markov_;
    std::vector<double> pi(n_ctx, 1.0 / (double) n_ctx);
    std::vector<double> next(n_ctx, 0.0);
    for (int it = 0; it < 200; ++it) {
        std::fill(next.begin(), next.end(), 0.0);
        for (size_t c = 0; c < n_ctx; ++c) {
            const int b = (int) (c % n_markov_);
            const size_t base = c * cfg_.support;
            for (int s = 0; s < cfg_.support; ++s) {
                next[ctx_index(b, succ_[base + s])] += pi[c] * prob_[base + s];
            }
        }
        std::swap(pi, next);
    }
    double h = 0.0;
    for (size_t c = 0; c < n_ctx; ++c) {
        const size_t base = c * cfg_.support;
        for (int s = 0; s < cfg_.support; ++s) {
            const double p = prob_[base + s];
            if (p > 0.0) {
                h -= pi[c] * p * std::log(p);
            }
        }
    }
    return h;
}

Corpus split_corpus(const std::vector<int> & tokens, double heldout_frac) {
    SPD_CHECK(!tokens.empty(), input_error, "split_corpus: empty corpus");
    const size_t cut = (size_t) ((double) tokens.size() * (1.0 - heldout_frac));
    Corpus c;
    c.train.assign(tokens.begin(), tokens.begin() + cut);
    c.heldout.assign(tokens.begin() + cut, tokens.end());
    return c;
}

void write_tokens_u16(const std::string & path, const std::vector<int> & tokens) {
    FILE * f = std::fopen(path.c_str(), "wb");
    SPD_CHECK(f, io_error, "cannot open for write: " + path);
    for (int t : tokens) {
        SPD_CHECK(t >= 0 && t < 65536, input_error, "token out of u16 range");
        const uint16_t v = (uint16_t) t;
        const unsigned char b[2] = {(unsigned char) (v & 0xff), (unsigned char) (v >> 8)};
        std::fwrite(b, 1, 2, f);
    }
    std::fclose(f);
}

std::vector<int> read_tokens_u16(const std::string & path) {
    FILE * f = std::fopen(path.c_str(), "rb");
    SPD_CHECK(f, io_error, "cannot open for read: " + path);
    std::vector<int> out;
    unsigned char b[2];
    while (std::fread(b, 1, 2, f) == 2) {
        out.push_back((int) b[0] | ((int) b[1] << 8));
    }
    std::fclose(f);
    return out;
}

} // namespace spd
