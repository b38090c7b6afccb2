#pragma once

#include "spd/lm.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace spd {

struct SpecDecConfig {
    int K = 4;                    // draft tokens per round
    int max_new_tokens = 32;
    enum class Mode { greedy, sample } mode = Mode::greedy;
    uint64_t seed = 0;
    // Cost units: analytic FLOPs by default (deterministic objective).
    // wall_clock switches to measured seconds per round, which is noisy and
    // exercises the duplicate-averaging path of the optimizer.
    bool wall_clock = false;

    void validate() const {
        SPD_CHECK(K >= 1, config_error, "specdec: K must be >= 1");
        SPD_CHECK(max_new_tokens >= 1, config_error, "specdec: max_new_tokens must be >= 1");
    }
};

struct ThroughputStats {
    int64_t rounds = 0;
    int64_t proposed = 0;
    int64_t accepted = 0;
    int64_t generated = 0;        // accepted + corrections + bonus tokens
    double cost_units = 0.0;      // MFLOP
    std::vector<int64_t> accept_hist;   // per-round accepted count, size K+1

    double beta_hat() const { return proposed ? (double) accepted / (double) proposed : 0.0; }
    double tau() const { return cost_units > 0.0 ? (double) generated / cost_units : 0.0; }
};

struct GenResult {
    std::vector<int> tokens;      // the newly generated tokens
    ThroughputStats stats;
};

// ---- speculative sampling primitives ----
// p, q are categorical distributions over the same vocabulary.

// min(1, p(token)/q(token)); q(token) must be > 0 for a proposed token
double accept_prob(const std::vector<double> & p, const std::vector<double> & q, int token);

// residual max(0, p-q) renormalized; throws if p == q (total mass zero)
std::vector<double> residual_distribution(const std::vector<double> & p,
                                          const std::vector<double> & q);

double tv_distance(const std::vector<double> & p, const std::vector<double> & q);

// sum_x min(p, q) == 1 - D_TV(p, q)
double acceptance_rate(const std::vector<double> & p, const std::vector<double> & q);

// ---- generation ----
// Self-speculative decoding: the draft is the target with `skip` applied.
// Sample mode preserves the target's output distribution exactly; greedy
// mode accepts a draft token iff it equals the target argmax. RNG draw
// order per round: K_r draft draws, then one acceptance uniform per
// verified position, then one residual draw on rejection or one bonus draw
// after a fully accepted round (when budget remains).
GenResult spec_generate(const ToyLM & target, const SkipConfig & skip,
                        const std::vector<int> & prompt, const SpecDecConfig & cfg);

// plain autoregressive decode from the target (greedy or ancestral)
std::vector<int> plain_generate(const ToyLM & target, const std::vector<int> & prompt,
                                int max_new_tokens, SpecDecConfig::Mode mode, uint64_t seed);

// ---- analytic round model ----
// expected generated tokens per round: (1 - beta^(K+1)) / (1 - beta)
double expected_tokens(double beta, int K);
// sum_k beta^k / (K cost_q + cost_p)
double expected_throughput(double beta, int K, double cost_q, double cost_p);

// Synthetic constant-beta round simulation over a 2-token vocabulary pair
// (q = [1, 0], p = [beta, 1-beta]) driven by the real accept/residual
// machinery. Rounds are never truncated, so the accepted-count histogram
// follows the capped geometric law.
ThroughputStats simulate_rounds(double beta, int K, int64_t rounds, uint64_t seed,
                                double cost_q = 1.0, double cost_p = 1.0);

// ---- empirical throughput over prompts ----
struct ThroughputMeasurement {
    double mean_tau = 0.0;
    double stderr_tau = 0.0;
    std::vector<double> per_prompt_tau;
    ThroughputStats aggregate;
};

ThroughputMeasurement measure_throughput(const ToyLM & target, const SkipConfig & skip,
                                         const std::vector<std::vector<int>> & prompts,
                                         const SpecDecConfig & cfg);

} // namespace spd
