#include "spd/bayesopt.hpp"

#include "spd/statutil.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>

namespace spd {

SkipConfig discretize_threshold(const std::vector<double> & z) {
    SkipConfig s((int) z.size());
    for (size_t i = 0; i < z.size(); ++i) {
        SPD_CHECK(z[i] >= 0.0 && z[i] <= 1.0, input_error, "discretize: z outside [0,1]");
        s.x[i] = z[i] >= 0.5 ? 1 : 0;
    }
    return s;
}

SkipConfig discretize_topk(const std::vector<double> & z, int k) {
    const int n = (int) z.size();
    SPD_CHECK(k >= 0 && k <= n, config_error, "discretize_topk: k out of range");
    for (double v : z) {
        SPD_CHECK(v >= 0.0 && v <= 1.0, input_error, "discretize: z outside [0,1]");
    }
    std::vector<int> idx(z.size());
    for (int i = 0; i < n; ++i) idx[(size_t) i] = i;
    // stable ordering: larger z first, ties toward the lower index
    std::stable_sort(idx.begin(), idx.end(),
                     [&z](int a, int b) { return z[(size_t) a] > z[(size_t) b]; });
    SkipConfig s(n);
    for (int i = 0; i < k; ++i) {
        s.x[(size_t) idx[(size_t) i]] = 1;
    }
    return s;
}

// ---- GP surrogate ----

double GpSurrogate::kernel(const std::vector<double> & a, const std::vector<double> & b) const {
    double s = 0.0;
    for (int i = 0; i < dim_; ++i) {
        const double d = (a[(size_t) i] - b[(size_t) i]) / ls_[(size_t) i];
        s += d * d;
    }
    return sf2_ * std::exp(-0.5 * s);
}

bool GpSurrogate::refactor() {
    const int n = n_;
    std::vector<double> K((size_t) n * n);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j <= i; ++j) {
            K[(size_t) i * n + j] = kernel(X_[(size_t) i], X_[(size_t) j]);
        }
    }
    double jitter = 0.0;
    for (int attempt = 0; attempt < 8; ++attempt) {
        chol_.assign((size_t) n * n, 0.0);
        bool ok = true;
        for (int i = 0; i < n && ok; ++i) {
            for (int j = 0; j <= i; ++j) {
                double s = K[(size_t) i * n + j];
                if (i == j) {
                    s += noise_var + jitter;
                }
                for (int m = 0; m < j; ++m) {
                    s -= chol_[(size_t) i * n + m] * chol_[(size_t) j * n + m];
                }
                if (i == j) {
                    if (s <= 0.0) {
                        ok = false;
                        break;
                    }
                    chol_[(size_t) i * n + j] = std::sqrt(s);
                } else {
                    chol_[(size_t) i * n + j] = s / chol_[(size_t) j * n + j];
                }
            }
        }
        if (ok) {
            // alpha = K^-1 y via two triangular solves
            alpha_ = y_std_;
            for (int i = 0; i < n; ++i) {
                double s = alpha_[(size_t) i];
                for (int m = 0; m < i; ++m) s -= chol_[(size_t) i * n + m] * alpha_[(size_t) m];
                alpha_[(size_t) i] = s / chol_[(size_t) i * n + i];
            }
            for (int i = n - 1; i >= 0; --i) {
                double s = alpha_[(size_t) i];
                for (int m = i + 1; m < n; ++m) s -= chol_[(size_t) m * n + i] * alpha_[(size_t) m];
                alpha_[(size_t) i] = s / chol_[(size_t) i * n + i];
            }
            double logdet = 0.0;
            for (int i = 0; i < n; ++i) logdet += std::log(chol_[(size_t) i * n + i]);
            double fit = 0.0;
            for (int i = 0; i < n; ++i) fit += y_std_[(size_t) i] * alpha_[(size_t) i];
            lml_ = -0.5 * fit - logdet - 0.5 * n * std::log(2.0 * M_PI);
            return true;
        }
        jitter = jitter == 0.0 ? 1e-10 : jitter * 10.0;
        if (jitter > 1e-2) {
            break;
        }
    }
    return false;
}

void GpSurrogate::fit(const std::vector<std::vector<double>> & X, const std::vector<double> & y,
                      bool fit_hyperparams) {
    SPD_CHECK(!X.empty() && X.size() == y.size(), input_error, "gp_fit: need >= 1 observation");
    n_ = (int) X.size();
    dim_ = (int) X[0].size();
    X_ = X;

    double mean = 0.0;
    for (double v : y) mean += v;
    mean /= (double) n_;
    double var = 0.0;
    for (double v : y) var += (v - mean) * (v - mean);
    var = n_ > 1 ? var / (double) (n_ - 1) : 1.0;
    y_mean_ = mean;
    y_scale_ = var > 1e-24 ? std::sqrt(var) : 1.0;
    y_std_.resize((size_t) n_);
    for (int i = 0; i < n_; ++i) {
        y_std_[(size_t) i] = (y[(size_t) i] - y_mean_) / y_scale_;
    }

    if ((int) ls_.size() != dim_) {
        ls_.assign((size_t) dim_, 1.0);
        sf2_ = 1.0;
    }
    if (!fit_hyperparams || n_ < 3) {
        SPD_CHECK(refactor(), numeric_error, "gp_fit: factorization failed");
        return;
    }

    // coordinate ascent on the log marginal likelihood: shared lengthscale
    // and signal grids first, then one per-dim refinement sweep
    static const double ls_grid[] = {0.25, 0.4, 0.6, 0.9, 1.3, 1.8, 2.5, 3.5, 5.0};
    static const double sf_grid[] = {0.25, 0.5, 1.0, 2.0, 4.0};
    double best_lml = -1e300;
    double best_ls = 1.0, best_sf = 1.0;
    for (double l : ls_grid) {
        for (double s : sf_grid) {
            ls_.assign((size_t) dim_, l);
            sf2_ = s;
            if (refactor() && lml_ > best_lml) {
                best_lml = lml_;
                best_ls = l;
                best_sf = s;
            }
        }
    }
    ls_.assign((size_t) dim_, best_ls);
    sf2_ = best_sf;

    static const double mults[] = {0.5, 2.0};
    for (int d = 0; d < dim_; ++d) {
        double keep = ls_[(size_t) d];
        for (double m : mults) {
            ls_[(size_t) d] = keep * m;
            if (refactor() && lml_ > best_lml) {
                best_lml = lml_;
                keep = ls_[(size_t) d];
            }
        }
        ls_[(size_t) d] = keep;
    }
    SPD_CHECK(refactor(), numeric_error, "gp_fit: factorization failed");
}

std::pair<double, double> GpSurrogate::posterior(const std::vector<double> & z) const {
    SPD_CHECK(n_ > 0, input_error, "gp posterior: empty surrogate");
    std::vector<double> ks((size_t) n_);
    for (int i = 0; i < n_; ++i) {
        ks[(size_t) i] = kernel(z, X_[(size_t) i]);
    }
    double mu = 0.0;
    for (int i = 0; i < n_; ++i) mu += ks[(size_t) i] * alpha_[(size_t) i];
    // v = L^-1 k*
    std::vector<double> v = ks;
    for (int i = 0; i < n_; ++i) {
        double s = v[(size_t) i];
        for (int m = 0; m < i; ++m) s -= chol_[(size_t) i * n_ + m] * v[(size_t) m];
        v[(size_t) i] = s / chol_[(size_t) i * n_ + i];
    }
    double vv = 0.0;
    for (int i = 0; i < n_; ++i) vv += v[(size_t) i] * v[(size_t) i];
    double var = sf2_ + noise_var - vv;
    var = std::max(var, 1e-12);
    return {y_mean_ + y_scale_ * mu, y_scale_ * y_scale_ * var};
}

double GpSurrogate::log_marginal_likelihood() const { return lml_; }

// ---- acquisition ----

static double expected_improvement(const GpSurrogate & gp, const std::vector<double> & z,
                                   double best, double xi) {
    auto [mu, var] = gp.posterior(z);
    const double sd = std::sqrt(var);
    const double u = (mu - best - xi) / sd;
    return sd * (u * normal_cdf(u) + normal_pdf(u));
}

std::vector<std::vector<double>> propose_ranked(const GpSurrogate & gp,
                                                const std::vector<std::vector<double>> & X_best,
                                                const BoConfig & cfg, Rng & rng) {
    const int dim = cfg.dim;
    double best_mu = -1e300;
    for (const auto & x : X_best) {
        best_mu = std::max(best_mu, gp.posterior(x).first);
    }
    const double xi = 1e-3;

    std::vector<std::pair<double, std::vector<double>>> cands;
    auto score = [&](std::vector<double> z) {
        const double ei = expected_improvement(gp, z, best_mu, xi);
        cands.push_back({ei, std::move(z)});
    };
    for (int c = 0; c < cfg.acq_candidates; ++c) {
        std::vector<double> z((size_t) dim);
        for (auto & v : z) v = rng.uniform();
        score(std::move(z));
    }
    // jittered copies of the incumbents
    for (const auto & xb : X_best) {
        for (int r = 0; r < 8; ++r) {
            std::vector<double> z = xb;
            for (auto & v : z) {
                v = std::clamp(v + 0.25 * rng.normal(), 0.0, 1.0);
            }
            score(std::move(z));
        }
    }
    std::stable_sort(cands.begin(), cands.end(),
                     [](const auto & a, const auto & b) { return a.first > b.first; });

    const int starts = std::min<int>(cfg.acq_starts, (int) cands.size());
    std::vector<std::pair<double, std::vector<double>>> finals;
    for (int s = 0; s < starts; ++s) {
        std::vector<double> z = cands[(size_t) s].second;
        double ei = cands[(size_t) s].first;
        // coordinate pattern search with halving steps
        for (double step = 0.25; step > 0.01; step *= 0.5) {
            for (int d = 0; d < dim; ++d) {
                for (double sgn : {+1.0, -1.0}) {
                    std::vector<double> zt = z;
                    zt[(size_t) d] = std::clamp(zt[(size_t) d] + sgn * step, 0.0, 1.0);
                    const double e = expected_improvement(gp, zt, best_mu, xi);
                    if (e > ei) {
                        ei = e;
                        z = std::move(zt);
                    }
                }
            }
        }
        finals.push_back({ei, std::move(z)});
    }
    std::stable_sort(finals.begin(), finals.end(),
                     [](const auto & a, const auto & b) { return a.first > b.first; });
    std::vector<std::vector<double>> out;
    out.reserve(finals.size());
    for (auto & [ei, z] : finals) {
        out.push_back(std::move(z));
    }
    return out;
}

std::vector<double> propose(const GpSurrogate & gp,
                            const std::vector<std::vector<double>> & X_best,
                            const BoConfig & cfg, Rng & rng) {
    auto ranked = propose_ranked(gp, X_best, cfg, rng);
    SPD_CHECK(!ranked.empty(), numeric_error, "propose: no candidates");
    return ranked[0];
}

// ---- optimize loop ----

// scrambled Halton point: van der Corput in prime bases with a seeded
// digit permutation per dimension
static double halton_scrambled(int64_t index, int base, const std::vector<int> & perm) {
    double f = 1.0, r = 0.0;
    int64_t i = index + 1;
    while (i > 0) {
        f /= base;
        r += f * perm[(size_t) (i % base)];
        i /= base;
    }
    return r;
}

static const int kPrimes[] = {2,  3,  5,  7,  11, 13, 17, 19, 23, 29, 31, 37, 41, 43,
                              47, 53, 59, 61, 67, 71, 73, 79, 83, 89, 97, 101, 103, 107};

struct ObsBook {
    std::map<std::string, size_t> index;
    std::vector<Observation> obs;

    // returns the merged observation after recording value at x
    Observation & record(const std::vector<double> & z, const SkipConfig & x, double value) {
        const std::string key = x.bitstring();
        auto it = index.find(key);
        if (it == index.end()) {
            Observation o;
            o.z = z;
            o.x = x;
            o.value = value;
            o.evals = 1;
            obs.push_back(std::move(o));
            index[key] = obs.size() - 1;
            return obs.back();
        }
        Observation & o = obs[it->second];
        o.value = (o.value * o.evals + value) / (double) (o.evals + 1);
        o.evals += 1;
        o.z = z;
        return o;
    }

    bool seen(const SkipConfig & x) const { return index.count(x.bitstring()) > 0; }
};

static BoResult run_search(const Objective & objective, const BoConfig & cfg, bool random_only) {
    SPD_CHECK(cfg.iterations >= 1, config_error, "bo: iterations must be >= 1");
    if (cfg.k) {
        SPD_CHECK(*cfg.k >= 0 && *cfg.k <= cfg.dim, config_error, "bo: k out of range");
    }
    const double sign = cfg.minimize ? -1.0 : 1.0;
    auto discretize = [&cfg](const std::vector<double> & z) {
        return cfg.k ? discretize_topk(z, *cfg.k) : discretize_threshold(z);
    };

    Rng rng(cfg.seed);
    ObsBook book;
    for (const auto & pre : cfg.preloaded) {
        if (!pre.failed) {
            book.record(pre.z, pre.x, pre.value);
        }
    }

    BoResult res;
    double best_g = -1e300;
    int failures = 0;

    auto evaluate = [&](const std::vector<double> & z, int iter) {
        const SkipConfig x = discretize(z);
        HistoryRow row;
        row.iter = iter;
        row.x_bits = x.bitstring();
        double value = 0.0;
        bool ok = true;
        try {
            value = objective(x);
        } catch (const std::exception &) {
            ok = false;
        }
        if (!ok) {
            ++failures;
            Observation o;
            o.z = z;
            o.x = x;
            o.failed = true;
            row.value = std::nan("");
            row.best_so_far = best_g > -1e299 ? sign * best_g : std::nan("");
            res.history.push_back(row);
            return;
        }
        const Observation & merged = book.record(z, x, value);
        const double g = sign * merged.value;
        if (g > best_g) {
            best_g = g;
            res.best = merged.x;
        }
        row.value = value;
        row.best_so_far = sign * best_g;
        res.history.push_back(row);
    };

    // digit permutations for the scrambled Halton warm start
    std::vector<std::vector<int>> perms((size_t) cfg.dim);
    for (int d = 0; d < cfg.dim; ++d) {
        const int base = kPrimes[d % 28];
        auto & p = perms[(size_t) d];
        p.resize((size_t) base);
        for (int i = 0; i < base; ++i) p[(size_t) i] = i;
        // seeded Fisher-Yates over the nonzero digits
        for (int i = base - 1; i >= 2; --i) {
            const int j = 1 + (int) rng.uniform_int64(i);
            std::swap(p[(size_t) i], p[(size_t) j]);
        }
    }

    int iter = 0;
    const int warm_total =
        random_only ? 0 : std::min(cfg.iterations, 2 * cfg.dim + (int) cfg.warm_hints.size());
    for (const auto & hint : cfg.warm_hints) {
        if (iter >= cfg.iterations) break;
        std::vector<double> z((size_t) cfg.dim);
        for (int d = 0; d < cfg.dim; ++d) z[(size_t) d] = (double) hint.x[(size_t) d];
        evaluate(z, iter++);
    }
    for (int w = 0; iter < warm_total; ++w) {
        std::vector<double> z((size_t) cfg.dim);
        for (int d = 0; d < cfg.dim; ++d) {
            z[(size_t) d] = halton_scrambled(w, kPrimes[d % 28], perms[(size_t) d]);
        }
        evaluate(z, iter++);
    }

    GpSurrogate gp;
    int last_hyper_fit = -1;
    while (iter < cfg.iterations) {
        if (random_only || book.obs.empty()) {
            std::vector<double> z((size_t) cfg.dim);
            for (auto & v : z) v = rng.uniform();
            evaluate(z, iter++);
            continue;
        }
        // surrogate inputs are the canonical discretized points; duplicates
        // were merged above so each x appears once
        std::vector<std::vector<double>> X;
        std::vector<double> y;
        X.reserve(book.obs.size());
        for (const auto & o : book.obs) {
            std::vector<double> xz((size_t) cfg.dim);
            for (int d = 0; d < cfg.dim; ++d) xz[(size_t) d] = (double) o.x.x[(size_t) d];
            X.push_back(std::move(xz));
            y.push_back(sign * o.value);
        }
        const bool refit = last_hyper_fit < 0 ||
                           (int) book.obs.size() - last_hyper_fit >= cfg.hyper_refit_every;
        gp.fit(X, y, refit);
        if (refit) {
            last_hyper_fit = (int) book.obs.size();
        }

        // incumbents: top-3 observed points
        std::vector<size_t> order(book.obs.size());
        for (size_t i = 0; i < order.size(); ++i) order[i] = i;
        std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
            return sign * book.obs[a].value > sign * book.obs[b].value;
        });
        std::vector<std::vector<double>> incumbents;
        for (size_t i = 0; i < order.size() && i < 3; ++i) {
            incumbents.push_back(X[order[i]]);
        }

        auto ranked = propose_ranked(gp, incumbents, cfg, rng);
        std::vector<double> pick = ranked[0];
        for (const auto & cand : ranked) {
            if (!book.seen(discretize(cand))) {
                pick = cand;
                break;
            }
        }
        evaluate(pick, iter++);
    }

    SPD_CHECK(!book.obs.empty(), error, "optimization failed: every objective evaluation failed");
    res.best_value = sign * best_g;
    res.observations = book.obs;
    return res;
}

BoResult bo_optimize(const Objective & objective, const BoConfig & cfg) {
    return run_search(objective, cfg, false);
}

BoResult random_search(const Objective & objective, const BoConfig & cfg) {
    BoConfig c = cfg;
    c.warm_hints.clear();
    c.preloaded.clear();
    return run_search(objective, c, true);
}

void write_history_csv(const std::string & path, const std::vector<HistoryRow> & history) {
    FILE * f = std::fopen(path.c_str(), "wb");
    SPD_CHECK(f, io_error, "history: cannot open for write: " + path);
    std::fprintf(f, "iter,x,value,best_so_far\n");
    for (const auto & row : history) {
        std::fprintf(f, "%d,%s,%.17g,%.17g\n", row.iter, row.x_bits.c_str(), row.value,
                     row.best_so_far);
    }
    std::fclose(f);
}

std::vector<Observation> import_history_csv(const std::string & path) {
    FILE * f = std::fopen(path.c_str(), "rb");
    SPD_CHECK(f, io_error, "history: cannot open for read: " + path);
    std::vector<Observation> out;
    char line[512];
    bool first = true;
    while (std::fgets(line, sizeof(line), f)) {
        if (first) {
            first = false;
            continue;   // header
        }
        int iter = 0;
        char bits[256];
        double value = 0.0, best = 0.0;
        if (std::sscanf(line, "%d,%255[01],%lg,%lg", &iter, bits, &value, &best) == 4) {
            Observation o;
            o.x = SkipConfig::from_bitstring(bits);
            o.z.assign(o.x.x.begin(), o.x.x.end());
            o.value = value;
            o.evals = 1;
            out.push_back(std::move(o));
        }
    }
    std::fclose(f);
    return out;
}

} // namespace spd
