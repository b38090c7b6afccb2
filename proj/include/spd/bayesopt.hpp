#pragma once

#include "spd/lm.hpp"
#include "spd/rng.hpp"

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace spd {

struct Observation {
    std::vector<double> z;   // continuous proposal that produced x
    SkipConfig x;
    double value = 0.0;      // raw objective, averaged over re-evaluations
    int evals = 0;
    bool failed = false;
};

// threshold at 0.5, inclusive: x_l = 1 iff z_l >= 0.5
SkipConfig discretize_threshold(const std::vector<double> & z);

// exactly k ones at the indices of the k largest z values; ties break
// toward the lower index, so sum x_l == k always holds
SkipConfig discretize_topk(const std::vector<double> & z, int k);

// Gaussian-process surrogate with a squared-exponential ARD kernel on
// [0,1]^L. Targets are standardized internally; hyperparameters are fit by
// coordinate ascent on the log marginal likelihood over a deterministic
// grid. Cholesky jitter escalates on factorization failure.
class GpSurrogate {
public:
    double noise_var = 1e-6;   // observation noise floor

    void fit(const std::vector<std::vector<double>> & X, const std::vector<double> & y,
             bool fit_hyperparams);

    int size() const { return n_; }
    // posterior mean / variance in raw objective units
    std::pair<double, double> posterior(const std::vector<double> & z) const;
    double log_marginal_likelihood() const;

    const std::vector<double> & lengthscales() const { return ls_; }
    double signal_var() const { return sf2_; }

private:
    int n_ = 0, dim_ = 0;
    std::vector<std::vector<double>> X_;
    std::vector<double> y_std_;          // standardized targets
    double y_mean_ = 0.0, y_scale_ = 1.0;
    std::vector<double> ls_;             // per-dim lengthscales
    double sf2_ = 1.0;                   // signal variance
    std::vector<double> chol_;           // lower triangular, n x n
    std::vector<double> alpha_;          // K^-1 y_std
    double lml_ = 0.0;

    double kernel(const std::vector<double> & a, const std::vector<double> & b) const;
    bool refactor();
};

struct BoConfig {
    int dim = 8;
    int iterations = 200;            // total objective evaluations, warm starts included
    std::optional<int> k;            // cardinality constraint (top-k discretization)
    bool minimize = false;
    int acq_starts = 8;              // local-search starts for the acquisition
    int acq_candidates = 224;        // random candidates scored before local search
    uint64_t seed = 0;
    std::vector<SkipConfig> warm_hints;        // e.g. the opt solution for a reverse run
    std::vector<Observation> preloaded;        // imported history (no budget consumed)
    int hyper_refit_every = 25;
};

// ranked acquisition maximizers (best first), multi-start local search on
// expected improvement from random + best-observed starts
std::vector<std::vector<double>> propose_ranked(const GpSurrogate & gp,
                                                const std::vector<std::vector<double>> & X_best,
                                                const BoConfig & cfg, Rng & rng);
// convenience single proposal
std::vector<double> propose(const GpSurrogate & gp,
                            const std::vector<std::vector<double>> & X_best,
                            const BoConfig & cfg, Rng & rng);

struct HistoryRow {
    int iter = 0;
    std::string x_bits;
    double value = 0.0;         // NaN when the evaluation failed
    double best_so_far = 0.0;
};

struct BoResult {
    SkipConfig best;
    double best_value = 0.0;
    std::vector<HistoryRow> history;
    std::vector<Observation> observations;
};

using Objective = std::function<double(const SkipConfig &)>;

// Algorithm: warm starts (2L scrambled quasi-random points plus hints),
// then GP-guided proposals; continuous proposals are discretized (top-k
// when k is set, threshold otherwise); duplicate discrete configs merge by
// averaging. Returns the best observed configuration.
BoResult bo_optimize(const Objective & objective, const BoConfig & cfg);

// equal-budget uniform-random baseline through the same discretizer
BoResult random_search(const Objective & objective, const BoConfig & cfg);

void write_history_csv(const std::string & path, const std::vector<HistoryRow> & history);
std::vector<Observation> import_history_csv(const std::string & path);

} // namespace spd
