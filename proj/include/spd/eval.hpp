#pragma once

#include "spd/corpus.hpp"
#include "spd/distill.hpp"
#include "spd/lm.hpp"

#include <functional>
#include <string>
#include <vector>

namespace spd {

// Uniform handle over base and hybrid models for read-only probes.
struct ModelView {
    int vocab = 0;
    int max_seq_len = 0;
    // flattened [n, vocab] logits for a token sequence
    std::function<std::vector<double>(const std::vector<int> &)> logits;
};

ModelView view_of(const ToyLM & model);
ModelView view_of(const ToyLM & model, const SkipConfig & skip);   // draft view
ModelView view_of(const HybridModel & hybrid);

// fraction of positions where the two argmax token predictions agree
double agreement(const ModelView & teacher, const ModelView & student,
                 const std::vector<std::vector<int>> & prompts);

// exp(mean next-token NLL) over contiguous windows
double perplexity(const ModelView & model, const std::vector<int> & tokens,
                  int context_len = 64, int64_t max_windows = 64);

// mean forward KL(teacher || student) over prompt positions
double mean_kl(const ModelView & teacher, const ModelView & student,
               const std::vector<std::vector<int>> & prompts);

// ---- passkey retrieval ----
struct PasskeyResult {
    double depth;        // fraction of filler between key and query
    double exact_match;  // all key tokens reproduced greedily, over trials
    int trials;
};

std::vector<PasskeyResult> passkey_eval(const ModelView & model, const MarkovSource & source,
                                        const std::vector<double> & depths, int context_len,
                                        int trials, uint64_t seed);

// ---- KL vs TVD relationship ----
// Pairs of close distributions: q tilts p by a factor (1 +- c) on two
// halves of equal probability mass, which keeps |p - q| proportional to p.
// For such pairs D_TV = c/2 exactly and D_KL = -0.5 log(1 - c^2).
std::pair<std::vector<double>, std::vector<double>> make_close_pair(int half_dim, double tv,
                                                                    Rng & rng);

// max over pairs of |D_KL - 2 D_TV^2| / D_KL (0 when both vanish);
// requires D_TV <= 0.05 per pair
double kl_tvd_check(
    const std::vector<std::pair<std::vector<double>, std::vector<double>>> & pairs);

double kl_divergence(const std::vector<double> & p, const std::vector<double> & q);

struct EvalReport {
    std::string model_id;
    double agreement_rate = 0.0;
    double mean_kl = 0.0;
    double perplexity = 0.0;
    std::vector<PasskeyResult> passkey;
};

void write_eval_report_csv(const std::string & path, const std::vector<EvalReport> & reports);

} // namespace spd
