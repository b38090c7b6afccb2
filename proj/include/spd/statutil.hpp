#pragma once

#include "spd/common.hpp"

#include <cmath>
#include <vector>

namespace spd {

inline double normal_pdf(double x) {
    return std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
}

inline double normal_cdf(double x) {
    return 0.5 * std::erfc(-x / std::sqrt(2.0));
}

// regularized lower incomplete gamma P(a, x), series + continued fraction
inline double gamma_p(double a, double x) {
    SPD_CHECK(a > 0.0 && x >= 0.0, input_error, "gamma_p: domain");
    if (x == 0.0) {
        return 0.0;
    }
    const double gln = std::lgamma(a);
    if (x < a + 1.0) {
        double ap = a;
        double sum = 1.0 / a;
        double del = sum;
        for (int i = 0; i < 500; ++i) {
            ap += 1.0;
            del *= x / ap;
            sum += del;
            if (std::fabs(del) < std::fabs(sum) * 1e-15) {
                break;
            }
        }
        return sum * std::exp(-x + a * std::log(x) - gln);
    }
    // Lentz continued fraction for Q(a, x)
    const double tiny = 1e-300;
    double b = x + 1.0 - a;
    double c = 1.0 / tiny;
    double d = 1.0 / b;
    double h = d;
    for (int i = 1; i <= 500; ++i) {
        const double an = -(double) i * ((double) i - a);
        b += 2.0;
        d = an * d + b;
        if (std::fabs(d) < tiny) d = tiny;
        c = b + an / c;
        if (std::fabs(c) < tiny) c = tiny;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::fabs(del - 1.0) < 1e-15) {
            break;
        }
    }
    const double q = std::exp(-x + a * std::log(x) - gln) * h;
    return 1.0 - q;
}

// chi-square survival function (p-value of a goodness-of-fit statistic)
inline double chi2_sf(double stat, int dof) {
    return 1.0 - gamma_p(0.5 * (double) dof, 0.5 * stat);
}

// Pearson chi-square statistic of observed counts against expected probs
inline double chi2_stat(const std::vector<int64_t> & observed,
                        const std::vector<double> & expected_probs) {
    SPD_CHECK(observed.size() == expected_probs.size(), shape_error, "chi2_stat: size mismatch");
    int64_t n = 0;
    for (auto o : observed) n += o;
    double stat = 0.0;
    for (size_t i = 0; i < observed.size(); ++i) {
        const double e = expected_probs[i] * (double) n;
        if (e > 0.0) {
            const double d = (double) observed[i] - e;
            stat += d * d / e;
        } else {
            SPD_CHECK(observed[i] == 0, numeric_error, "chi2_stat: mass in zero-probability bin");
        }
    }
    return stat;
}

} // namespace spd
