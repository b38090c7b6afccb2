#pragma once

#include "spd/tensor.hpp"

#include <map>
#include <string>
#include <vector>

namespace spd {

// AdamW with decoupled weight decay. State is keyed by parameter name so a
// store can be re-wrapped (e.g. after checkpoint resume) without losing
// correctness of the bias-corrected moments.
class AdamW {
public:
    double beta1 = 0.9;
    double beta2 = 0.95;
    double eps = 1e-8;
    double weight_decay = 0.01;

    AdamW() = default;
    AdamW(double b1, double b2, double wd) : beta1(b1), beta2(b2), weight_decay(wd) {}

    // clips the global grad norm of the trainable set to max_norm (skip if <= 0);
    // returns the pre-clip norm
    double clip_grad_norm(ParamStore & store, double max_norm);

    // one update over the trainable entries; increments the internal step count
    void step(ParamStore & store, double lr);

    int64_t steps_done() const { return t_; }

private:
    struct Moments {
        std::vector<double> m;
        std::vector<double> v;
    };
    std::map<std::string, Moments> state_;
    int64_t t_ = 0;
};

inline double AdamW::clip_grad_norm(ParamStore & store, double max_norm) {
    double sq = 0.0;
    for (auto & [name, t] : store.trainable_entries()) {
        t->ensure_grad();
        for (double g : t->grad) {
            sq += g * g;
        }
    }
    const double norm = std::sqrt(sq);
    if (max_norm > 0.0 && norm > max_norm) {
        const double s = max_norm / norm;
        for (auto & [name, t] : store.trainable_entries()) {
            for (double & g : t->grad) {
                g *= s;
            }
        }
    }
    return norm;
}

inline void AdamW::step(ParamStore & store, double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1, (double) t_);
    const double bc2 = 1.0 - std::pow(beta2, (double) t_);
    for (auto & [name, t] : store.trainable_entries()) {
        t->ensure_grad();
        auto & mo = state_[name];
        if (mo.m.size() != t->data.size()) {
            mo.m.assign(t->data.size(), 0.0);
            mo.v.assign(t->data.size(), 0.0);
        }
        for (size_t i = 0; i < t->data.size(); ++i) {
            const double g = t->grad[i];
            mo.m[i] = beta1 * mo.m[i] + (1.0 - beta1) * g;
            mo.v[i] = beta2 * mo.v[i] + (1.0 - beta2) * g * g;
            const double mhat = mo.m[i] / bc1;
            const double vhat = mo.v[i] / bc2;
            t->data[i] -= lr * (mhat / (std::sqrt(vhat) + eps) + weight_decay * t->data[i]);
        }
    }
}

// cosine decay from peak at step 0 to min_lr at step == steps
inline double cosine_lr(int64_t step, int64_t steps, double peak, double min_lr) {
    SPD_CHECK(steps >= 1, config_error, "cosine_lr: steps must be >= 1");
    SPD_CHECK(step >= 0 && step <= steps, config_error, "cosine_lr: step out of range");
    const double progress = (double) step / (double) steps;
    return min_lr + (peak - min_lr) * 0.5 * (1.0 + std::cos(M_PI * progress));
}

} // namespace spd
