#include "doctest.h"
#include "enumerate.hpp"
#include "oracles.hpp"

#include "spd/specdec.hpp"
#include "spd/statutil.hpp"

#include <cmath>

using namespace spd;

TEST_CASE("accept_prob") {
    std::vector<double> p = {0.6, 0.4};
    std::vector<double> q = {0.3, 0.7};
    CHECK(accept_prob(p, p, 0) == 1.0);
    CHECK(accept_prob(p, p, 1) == 1.0);
    CHECK(accept_prob(p, q, 0) == 1.0);
    CHECK(accept_prob(p, q, 1) == doctest::Approx(4.0 / 7.0).epsilon(1e-15));
    CHECK_THROWS_AS((void) accept_prob({1.0, 0.0}, {0.0, 1.0}, 0), input_error);
}

TEST_CASE("residual_distribution") {
    auto r = residual_distribution({0.6, 0.4}, {0.3, 0.7});
    CHECK(r[0] == doctest::Approx(1.0));
    CHECK(r[1] == 0.0);

    auto r2 = residual_distribution({0.5, 0.25, 0.25}, {0.25, 0.5, 0.25});
    CHECK(r2[0] == doctest::Approx(1.0));
    CHECK(r2[1] == 0.0);
    CHECK(r2[2] == 0.0);

    // disjoint supports: total rejection falls back to p on its support
    auto r3 = residual_distribution({1.0, 0.0}, {0.0, 1.0});
    CHECK(r3[0] == doctest::Approx(1.0));

    CHECK_THROWS_AS((void) residual_distribution({0.5, 0.5}, {0.5, 0.5}), numeric_error);

    // support is contained in {x : p(x) > q(x)} and sums to one
    Rng rng(3);
    for (int t = 0; t < 100; ++t) {
        auto p = oracle::random_dist(12, rng);
        auto q = oracle::random_dist(12, rng);
        auto res = residual_distribution(p, q);
        double s = 0.0;
        for (size_t i = 0; i < res.size(); ++i) {
            if (res[i] > 0.0) {
                CHECK(p[i] > q[i]);
            }
            s += res[i];
        }
        CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("acceptance rate equals one minus total variation") {
    CHECK(acceptance_rate({0.5, 0.5}, {0.5, 0.5}) == 1.0);
    CHECK(acceptance_rate({1.0, 0.0}, {0.0, 1.0}) == 0.0);
    CHECK(acceptance_rate({0.6, 0.4}, {0.3, 0.7}) == doctest::Approx(0.7).epsilon(1e-15));

    Rng rng(5);
    double worst = 0.0;
    for (int t = 0; t < 200; ++t) {
        const int v = 2 + (int) rng.uniform_int64(62);
        auto p = oracle::random_dist((size_t) v, rng);
        auto q = oracle::random_dist((size_t) v, rng);
        worst = std::max(worst,
                         std::fabs(acceptance_rate(p, q) + tv_distance(p, q) - 1.0));
    }
    CHECK(worst < 1e-12);
}

TEST_CASE("expected tokens and throughput formulas") {
    CHECK(expected_tokens(1.0, 3) == doctest::Approx(4.0));
    CHECK(expected_tokens(0.0, 7) == doctest::Approx(1.0));
    CHECK(expected_tokens(0.5, 3) == doctest::Approx(1.875).epsilon(1e-15));

    // Monte Carlo over the capped geometric law
    auto st = simulate_rounds(0.5, 3, 200000, 17);
    const double emp = (double) st.generated / (double) st.rounds;
    CHECK(std::fabs(emp - 1.875) / 1.875 < 0.005);

    CHECK(expected_throughput(0.0, 1, 1.0, 1.0) == doctest::Approx(0.5));
    CHECK(expected_throughput(1.0, 4, 1e-12, 1.0) == doctest::Approx(5.0).epsilon(1e-9));
    CHECK(expected_throughput(0.8, 4, 0.3, 1.0) ==
          doctest::Approx(3.3616 / 2.2).epsilon(1e-12));
    CHECK_THROWS_AS((void) expected_throughput(0.5, 4, 0.0, 1.0), input_error);

    double prev = 0.0;
    for (double b = 0.0; b <= 1.0; b += 0.05) {
        const double tau = expected_throughput(b, 4, 0.4, 1.0);
        CHECK(tau >= prev);
        prev = tau;
    }
}

TEST_CASE("capped geometric histogram passes chi-square") {
    const int K = 4;
    for (double beta : {0.3, 0.6, 0.9}) {
        auto st = simulate_rounds(beta, K, 20000, 23);
        std::vector<double> expected((size_t) K + 1);
        for (int k = 0; k < K; ++k) {
            expected[(size_t) k] = std::pow(beta, k) * (1.0 - beta);
        }
        expected[(size_t) K] = std::pow(beta, K);
        const double stat = chi2_stat(st.accept_hist, expected);
        CHECK(chi2_sf(stat, K) > 0.01);
    }
}

static ToyLM tiny_target() {
    ModelConfig cfg;
    cfg.n_layers = 4;
    cfg.d_model = 16;
    cfg.n_heads = 2;
    cfg.d_head = 8;
    cfg.vocab_size = 4;
    cfg.max_seq_len = 32;
    cfg.seed = 77;
    auto m = init_model(cfg);
    // spread the logits so draft and target disagree visibly
    for (auto & [name, t] : m.params.entries()) {
        for (auto & v : t->data) v *= 14.0;
    }
    return m;
}

TEST_CASE("identical draft accepts everything") {
    auto m = tiny_target();
    SkipConfig none(4);
    SpecDecConfig cfg;
    cfg.K = 3;
    cfg.max_new_tokens = 8;   // two full rounds of K+1
    cfg.mode = SpecDecConfig::Mode::sample;
    cfg.seed = 5;
    auto r = spec_generate(m, none, {1, 2}, cfg);
    CHECK(r.stats.accepted == r.stats.proposed);
    CHECK(r.stats.beta_hat() == 1.0);
    CHECK(r.stats.rounds == 2);
    CHECK(r.tokens.size() == 8);
    // every round fills the K bucket of the histogram
    CHECK(r.stats.accept_hist[3] == 2);
}

TEST_CASE("greedy speculative decoding equals plain greedy decoding") {
    auto m = tiny_target();
    for (auto bits : {"1010", "0110", "1111"}) {
        auto skip = SkipConfig::from_bitstring(bits);
        SpecDecConfig cfg;
        cfg.K = 2;
        cfg.max_new_tokens = 10;
        cfg.mode = SpecDecConfig::Mode::greedy;
        auto spec = spec_generate(m, skip, {0, 3}, cfg);
        auto plain = plain_generate(m, {0, 3}, 10, SpecDecConfig::Mode::greedy, 0);
        CHECK(spec.tokens == plain);
    }
}

TEST_CASE("single-step branch marginal equals the target distribution") {
    // sum_x q(x) min(1, p/q) delta_x + (sum_x q(x)(1 - min(1, p/q))) p' == p
    Rng rng(31);
    for (int t = 0; t < 200; ++t) {
        auto p = oracle::random_dist(8, rng);
        auto q = oracle::random_dist(8, rng);
        std::vector<double> marginal(8, 0.0);
        double reject_mass = 0.0;
        for (int x = 0; x < 8; ++x) {
            const double a = accept_prob(p, q, x);
            marginal[(size_t) x] += q[(size_t) x] * a;
            reject_mass += q[(size_t) x] * (1.0 - a);
        }
        if (reject_mass > 1e-15) {
            auto pr = residual_distribution(p, q);
            for (int x = 0; x < 8; ++x) {
                marginal[(size_t) x] += reject_mass * pr[(size_t) x];
            }
        }
        for (int x = 0; x < 8; ++x) {
            CHECK(std::fabs(marginal[(size_t) x] - p[(size_t) x]) < 1e-12);
        }
    }
}

TEST_CASE("enumerated 2-token output distribution matches ancestral sampling") {
    auto m = tiny_target();
    auto skip = SkipConfig::from_bitstring("1100");
    oracle::SpecDecEnumerator en(m, skip, 2);
    const std::vector<int> prompt = {2};
    auto dist = en.run(prompt, 2);

    double total = 0.0, tv = 0.0;
    for (int a = 0; a < 4; ++a) {
        for (int b = 0; b < 4; ++b) {
            const std::vector<int> seq = {a, b};
            const double ps = dist.count(seq) ? dist.at(seq) : 0.0;
            tv += std::fabs(ps - en.ancestral(prompt, seq));
            total += ps;
        }
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(0.5 * tv < 1e-10);
}

TEST_CASE("sampled spec_generate tracks the enumerated distribution") {
    auto m = tiny_target();
    auto skip = SkipConfig::from_bitstring("0110");
    const std::vector<int> prompt = {1};
    oracle::SpecDecEnumerator en(m, skip, 2);
    auto dist = en.run(prompt, 2);

    SpecDecConfig cfg;
    cfg.K = 2;
    cfg.max_new_tokens = 2;
    cfg.mode = SpecDecConfig::Mode::sample;
    std::map<std::vector<int>, int64_t> counts;
    const int64_t n = 20000;
    for (int64_t i = 0; i < n; ++i) {
        cfg.seed = (uint64_t) i * 2654435761u + 1;
        counts[spec_generate(m, skip, prompt, cfg).tokens] += 1;
    }
    double tv = 0.0;
    for (const auto & [seq, pr] : dist) {
        const double emp = counts.count(seq) ? (double) counts.at(seq) / (double) n : 0.0;
        tv += std::fabs(emp - pr);
    }
    // empirical TV of a 16-outcome multinomial at n = 20000
    CHECK(0.5 * tv < 0.02);
}

TEST_CASE("cost accounting follows the per-round charge exactly") {
    auto m = tiny_target();
    SkipConfig none(4);
    SpecDecConfig cfg;
    cfg.K = 3;
    cfg.max_new_tokens = 12;
    cfg.mode = SpecDecConfig::Mode::greedy;
    auto r = spec_generate(m, none, {1, 2}, cfg);

    // all-accept: rounds advance by K+1 tokens; each round charges K draft
    // positions plus K+1 verification positions
    CHECK(r.stats.rounds == 3);
    double want = 0.0;
    int64_t len = 2;
    for (int round = 0; round < 3; ++round) {
        want += incremental_cost(m.cfg, none, len - 1, cfg.K) +
                incremental_cost(m.cfg, none, len - 1, cfg.K + 1);
        len += cfg.K + 1;
    }
    CHECK(r.stats.cost_units == doctest::Approx(want).epsilon(1e-12));

    // empirical tau agrees with the analytic round model at beta_hat = 1
    const double per_round_cost = want / 3.0;
    const double tau_model = expected_tokens(r.stats.beta_hat(), cfg.K) / per_round_cost;
    CHECK(std::fabs(r.stats.tau() - tau_model) / tau_model < 0.10);
}

TEST_CASE("measure_throughput determinism and duplicate prompts") {
    auto m = tiny_target();
    auto skip = SkipConfig::from_bitstring("1010");
    SpecDecConfig cfg;
    cfg.K = 2;
    cfg.max_new_tokens = 6;
    cfg.mode = SpecDecConfig::Mode::greedy;

    std::vector<std::vector<int>> dup = {{1, 2}, {1, 2}, {1, 2}};
    auto m1 = measure_throughput(m, skip, dup, cfg);
    CHECK(m1.stderr_tau == 0.0);

    auto m2 = measure_throughput(m, skip, dup, cfg);
    CHECK(m1.mean_tau == m2.mean_tau);

    CHECK_THROWS_AS((void) measure_throughput(m, skip, {}, cfg), input_error);
    CHECK_THROWS_WITH_AS((void) measure_throughput(m, skip, {{1}, {}}, cfg),
                         doctest::Contains("prompt 1"), error);
}
