#include "spd/tensor.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <unordered_set>

namespace spd {

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using EMap = Eigen::Map<EMat>;
using ECMap = Eigen::Map<const EMat>;

static thread_local bool g_grad_enabled = true;

NoGradGuard::NoGradGuard() : prev(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev; }

bool grad_enabled() { return g_grad_enabled; }

Tensor::Tensor(std::vector<int> s, double fill) : shape(std::move(s)) {
    data.assign((size_t) numel(), fill);
}

int64_t Tensor::numel() const {
    int64_t n = 1;
    for (int d : shape) {
        n *= d;
    }
    return n;
}

int Tensor::rows() const {
    if (shape.size() == 1) return 1;
    SPD_CHECK(shape.size() == 2, shape_error, "expected 2-D tensor");
    return shape[0];
}

int Tensor::cols() const {
    if (shape.size() == 1) return shape[0];
    SPD_CHECK(shape.size() == 2, shape_error, "expected 2-D tensor");
    return shape[1];
}

double Tensor::scalar() const {
    SPD_CHECK(is_scalar(), shape_error, "scalar() on non-scalar tensor");
    return data[0];
}

void Tensor::ensure_grad() {
    if (grad.size() != data.size()) {
        grad.assign(data.size(), 0.0);
    }
}

void Tensor::zero_grad() {
    if (!grad.empty()) {
        std::fill(grad.begin(), grad.end(), 0.0);
    }
}

// ---- construction ----

TensorPtr make_tensor(std::vector<int> shape, double fill) {
    return std::make_shared<Tensor>(std::move(shape), fill);
}

TensorPtr make_tensor(std::vector<int> shape, std::vector<double> values) {
    auto t = std::make_shared<Tensor>(std::move(shape), 0.0);
    SPD_CHECK((int64_t) values.size() == t->numel(), shape_error,
              "value count does not match shape");
    t->data = std::move(values);
    return t;
}

TensorPtr make_scalar(double v) {
    return make_tensor({1}, std::vector<double>{v});
}

TensorPtr randn_tensor(std::vector<int> shape, Rng & rng, double stddev) {
    auto t = std::make_shared<Tensor>(std::move(shape), 0.0);
    for (auto & v : t->data) {
        v = rng.normal() * stddev;
    }
    return t;
}

// ---- tape helpers ----

static bool track(const std::vector<TensorPtr> & parents) {
    if (!g_grad_enabled) {
        return false;
    }
    for (const auto & p : parents) {
        if (p->requires_grad) {
            return true;
        }
    }
    return false;
}

static TensorPtr make_result(std::vector<int> shape, std::vector<TensorPtr> parents,
                             std::function<void(Tensor &)> backprop) {
    auto out = std::make_shared<Tensor>(std::move(shape), 0.0);
    if (track(parents)) {
        out->requires_grad = true;
        out->parents = std::move(parents);
        out->backprop = std::move(backprop);
    }
    return out;
}

static void check_same_shape(const TensorPtr & a, const TensorPtr & b, const char * op) {
    SPD_CHECK(a->shape == b->shape, shape_error, std::string(op) + ": shape mismatch");
}

// ---- elementwise ----

TensorPtr add(const TensorPtr & a, const TensorPtr & b) {
    check_same_shape(a, b, "add");
    auto out = make_result(a->shape, {a, b}, [a, b](Tensor & o) {
        if (a->requires_grad) {
            a->ensure_grad();
            for (size_t i = 0; i < o.grad.size(); ++i) a->grad[i] += o.grad[i];
        }
        if (b->requires_grad) {
            b->ensure_grad();
            for (size_t i = 0; i < o.grad.size(); ++i) b->grad[i] += o.grad[i];
        }
    });
    for (size_t i = 0; i < out->data.size(); ++i) {
        out->data[i] = a->data[i] + b->data[i];
    }
    return out;
}

TensorPtr sub(const TensorPtr & a, const TensorPtr & b) {
    check_same_shape(a, b, "sub");
    auto out = make_result(a->shape, {a, b}, [a, b](Tensor & o) {
        if (a->requires_grad) {
            a->ensure_grad();
            for (size_t i = 0; i < o.grad.size(); ++i) a->grad[i] += o.grad[i];
        }
        if (b->requires_grad) {
            b->ensure_grad();
            for (size_t i = 0; i < o.grad.size(); ++i) b->grad[i] -= o.grad[i];
        }
    });
    for (size_t i = 0; i < out->data.size(); ++i) {
        out->data[i] = a->data[i] - b->data[i];
    }
    return out;
}

TensorPtr mul(const TensorPtr & a, const TensorPtr & b) {
    check_same_shape(a, b, "mul");
    auto out = make_result(a->shape, {a, b}, [a, b](Tensor & o) {
        if (a->requires_grad) {
            a->ensure_grad();
            for (size_t i = 0; i < o.grad.size(); ++i) a->grad[i] += o.grad[i] * b->data[i];
        }
        if (b->requires_grad) {
            b->ensure_grad();
            for (size_t i = 0; i < o.grad.size(); ++i) b->grad[i] += o.grad[i] * a->data[i];
        }
    });
    for (size_t i = 0; i < out->data.size(); ++i) {
        out->data[i] = a->data[i] * b->data[i];
    }
    return out;
}

TensorPtr scale(const TensorPtr & a, double c) {
    auto out = make_result(a->shape, {a}, [a, c](Tensor & o) {
        a->ensure_grad();
        for (size_t i = 0; i < o.grad.size(); ++i) a->grad[i] += o.grad[i] * c;
    });
    for (size_t i = 0; i < out->data.size(); ++i) {
        out->data[i] = a->data[i] * c;
    }
    return out;
}

TensorPtr add_rowvec(const TensorPtr & a, const TensorPtr & v) {
    const int n = a->rows(), d = a->cols();
    SPD_CHECK(v->numel() == d, shape_error, "add_rowvec: vector length mismatch");
    auto out = make_result(a->shape, {a, v}, [a, v, n, d](Tensor & o) {
        if (a->requires_grad) {
            a->ensure_grad();
            for (size_t i = 0; i < o.grad.size(); ++i) a->grad[i] += o.grad[i];
        }
        if (v->requires_grad) {
            v->ensure_grad();
            for (int i = 0; i < n; ++i) {
                for (int j = 0; j < d; ++j) v->grad[j] += o.grad[(size_t) i * d + j];
            }
        }
    });
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < d; ++j) {
            out->data[(size_t) i * d + j] = a->data[(size_t) i * d + j] + v->data[j];
        }
    }
    return out;
}

TensorPtr add_const(const TensorPtr & a, double c) {
    auto out = make_result(a->shape, {a}, [a](Tensor & o) {
        a->ensure_grad();
        for (size_t i = 0; i < o.grad.size(); ++i) a->grad[i] += o.grad[i];
    });
    for (size_t i = 0; i < out->data.size(); ++i) {
        out->data[i] = a->data[i] + c;
    }
    return out;
}

TensorPtr mul_scalar_t(const TensorPtr & a, const TensorPtr & s) {
    SPD_CHECK(s->is_scalar(), shape_error, "mul_scalar_t: scalar operand expected");
    auto out = make_result(a->shape, {a, s}, [a, s](Tensor & o) {
        if (a->requires_grad) {
            a->ensure_grad();
            for (size_t i = 0; i < o.grad.size(); ++i) a->grad[i] += o.grad[i] * s->data[0];
        }
        if (s->requires_grad) {
            s->ensure_grad();
            double acc = 0.0;
            for (size_t i = 0; i < o.grad.size(); ++i) acc += o.grad[i] * a->data[i];
            s->grad[0] += acc;
        }
    });
    for (size_t i = 0; i < out->data.size(); ++i) {
        out->data[i] = a->data[i] * s->data[0];
    }
    return out;
}

TensorPtr reciprocal(const TensorPtr & a) {
    auto out = make_result(a->shape, {a}, [a](Tensor & o) {
        a->ensure_grad();
        for (size_t i = 0; i < o.grad.size(); ++i) {
            a->grad[i] -= o.grad[i] * o.data[i] * o.data[i];
        }
    });
    for (size_t i = 0; i < out->data.size(); ++i) {
        SPD_CHECK(a->data[i] != 0.0, numeric_error, "reciprocal of zero");
        out->data[i] = 1.0 / a->data[i];
    }
    return out;
}

TensorPtr sigmoid(const TensorPtr & a) {
    auto out = make_result(a->shape, {a}, [a](Tensor & o) {
        a->ensure_grad();
        for (size_t i = 0; i < o.grad.size(); ++i) {
            double s = o.data[i];
            a->grad[i] += o.grad[i] * s * (1.0 - s);
        }
    });
    for (size_t i = 0; i < out->data.size(); ++i) {
        double x = a->data[i];
        out->data[i] = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                                : std::exp(x) / (1.0 + std::exp(x));
    }
    return out;
}

TensorPtr silu(const TensorPtr & a) {
    auto out = make_result(a->shape, {a}, [a](Tensor & o) {
        a->ensure_grad();
        for (size_t i = 0; i < o.grad.size(); ++i) {
            double x = a->data[i];
            double s = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                                : std::exp(x) / (1.0 + std::exp(x));
            a->grad[i] += o.grad[i] * (s + x * s * (1.0 - s));
        }
    });
    for (size_t i = 0; i < out->data.size(); ++i) {
        double x = a->data[i];
        double s = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                            : std::exp(x) / (1.0 + std::exp(x));
        out->data[i] = x * s;
    }
    return out;
}

TensorPtr log_tensor(const TensorPtr & a) {
    auto out = make_result(a->shape, {a}, [a](Tensor & o) {
        a->ensure_grad();
        for (size_t i = 0; i < o.grad.size(); ++i) {
            a->grad[i] += o.grad[i] / a->data[i];
        }
    });
    for (size_t i = 0; i < out->data.size(); ++i) {
        SPD_CHECK(a->data[i] > 0.0, numeric_error, "log of non-positive value");
        out->data[i] = std::log(a->data[i]);
    }
    return out;
}

// ---- linear algebra ----

TensorPtr matmul(const TensorPtr & a, const TensorPtr & b) {
    const int m = a->rows(), k = a->cols();
    const int k2 = b->rows(), n = b->cols();
    SPD_CHECK(k == k2, shape_error, "matmul: inner dimensions disagree");
    auto out = make_result({m, n}, {a, b}, [a, b, m, k, n](Tensor & o) {
        EMap go(o.grad.data(), m, n);
        if (a->requires_grad) {
            a->ensure_grad();
            EMap ga(a->grad.data(), m, k);
            ECMap vb(b->data.data(), k, n);
            ga.noalias() += go * vb.transpose();
        }
        if (b->requires_grad) {
            b->ensure_grad();
            EMap gb(b->grad.data(), k, n);
            ECMap va(a->data.data(), m, k);
            gb.noalias() += va.transpose() * go;
        }
    });
    ECMap va(a->data.data(), m, k);
    ECMap vb(b->data.data(), k, n);
    EMap vo(out->data.data(), m, n);
    vo.noalias() = va * vb;
    return out;
}

TensorPtr matmul_nt(const TensorPtr & a, const TensorPtr & b) {
    const int m = a->rows(), k = a->cols();
    const int n = b->rows(), k2 = b->cols();
    SPD_CHECK(k == k2, shape_error, "matmul_nt: inner dimensions disagree");
    auto out = make_result({m, n}, {a, b}, [a, b, m, k, n](Tensor & o) {
        EMap go(o.grad.data(), m, n);
        if (a->requires_grad) {
            a->ensure_grad();
            EMap ga(a->grad.data(), m, k);
            ECMap vb(b->data.data(), n, k);
            ga.noalias() += go * vb;
        }
        if (b->requires_grad) {
            b->ensure_grad();
            EMap gb(b->grad.data(), n, k);
            ECMap va(a->data.data(), m, k);
            gb.noalias() += go.transpose() * va;
        }
    });
    ECMap va(a->data.data(), m, k);
    ECMap vb(b->data.data(), n, k);
    EMap vo(out->data.data(), m, n);
    vo.noalias() = va * vb.transpose();
    return out;
}

// ---- shape ops ----

TensorPtr reshape(const TensorPtr & a, std::vector<int> shape) {
    int64_t n = 1;
    for (int d : shape) n *= d;
    SPD_CHECK(n == a->numel(), shape_error, "reshape: element count mismatch");
    auto out = make_result(std::move(shape), {a}, [a](Tensor & o) {
        a->ensure_grad();
        for (size_t i = 0; i < o.grad.size(); ++i) a->grad[i] += o.grad[i];
    });
    out->data = a->data;
    return out;
}

TensorPtr slice_cols(const TensorPtr & a, int c0, int len) {
    const int n = a->rows(), d = a->cols();
    SPD_CHECK(c0 >= 0 && len >= 0 && c0 + len <= d, shape_error, "slice_cols: out of range");
    auto out = make_result({n, len}, {a}, [a, c0, len, n, d](Tensor & o) {
        a->ensure_grad();
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < len; ++j) {
                a->grad[(size_t) i * d + c0 + j] += o.grad[(size_t) i * len + j];
            }
        }
    });
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < len; ++j) {
            out->data[(size_t) i * len + j] = a->data[(size_t) i * d + c0 + j];
        }
    }
    return out;
}

TensorPtr slice_rows(const TensorPtr & a, int r0, int len) {
    const int n = a->rows(), d = a->cols();
    SPD_CHECK(r0 >= 0 && len >= 0 && r0 + len <= n, shape_error, "slice_rows: out of range");
    auto out = make_result({len, d}, {a}, [a, r0, len, d](Tensor & o) {
        a->ensure_grad();
        for (int i = 0; i < len; ++i) {
            for (int j = 0; j < d; ++j) {
                a->grad[(size_t) (r0 + i) * d + j] += o.grad[(size_t) i * d + j];
            }
        }
    });
    std::memcpy(out->data.data(), a->data.data() + (size_t) r0 * d,
                (size_t) len * d * sizeof(double));
    return out;
}

TensorPtr concat_cols(const std::vector<TensorPtr> & parts) {
    SPD_CHECK(!parts.empty(), shape_error, "concat_cols: empty input");
    const int n = parts[0]->rows();
    int total = 0;
    for (const auto & p : parts) {
        SPD_CHECK(p->rows() == n, shape_error, "concat_cols: row mismatch");
        total += p->cols();
    }
    auto out = make_result({n, total}, parts, [parts, n, total](Tensor & o) {
        int off = 0;
        for (const auto & p : parts) {
            const int d = p->cols();
            if (p->requires_grad) {
                p->ensure_grad();
                for (int i = 0; i < n; ++i) {
                    for (int j = 0; j < d; ++j) {
                        p->grad[(size_t) i * d + j] += o.grad[(size_t) i * total + off + j];
                    }
                }
            }
            off += d;
        }
    });
    int off = 0;
    for (const auto & p : parts) {
        const int d = p->cols();
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < d; ++j) {
                out->data[(size_t) i * total + off + j] = p->data[(size_t) i * d + j];
            }
        }
        off += d;
    }
    return out;
}

TensorPtr concat_rows(const std::vector<TensorPtr> & parts) {
    SPD_CHECK(!parts.empty(), shape_error, "concat_rows: empty input");
    const int d = parts[0]->cols();
    int total = 0;
    for (const auto & p : parts) {
        SPD_CHECK(p->cols() == d, shape_error, "concat_rows: col mismatch");
        total += p->rows();
    }
    auto out = make_result({total, d}, parts, [parts, d](Tensor & o) {
        int r0 = 0;
        for (const auto & p : parts) {
            const int n = p->rows();
            if (p->requires_grad) {
                p->ensure_grad();
                for (int i = 0; i < n; ++i) {
                    for (int j = 0; j < d; ++j) {
                        p->grad[(size_t) i * d + j] += o.grad[(size_t) (r0 + i) * d + j];
                    }
                }
            }
            r0 += n;
        }
    });
    int r0 = 0;
    for (const auto & p : parts) {
        std::memcpy(out->data.data() + (size_t) r0 * d, p->data.data(),
                    (size_t) p->rows() * d * sizeof(double));
        r0 += p->rows();
    }
    return out;
}

TensorPtr row_gather(const TensorPtr & table, const std::vector<int> & ids) {
    const int v = table->rows(), d = table->cols();
    for (int id : ids) {
        SPD_CHECK(id >= 0 && id < v, input_error, "row_gather: index out of range");
    }
    const int n = (int) ids.size();
    auto out = make_result({n, d}, {table}, [table, ids, d](Tensor & o) {
        table->ensure_grad();
        for (size_t i = 0; i < ids.size(); ++i) {
            for (int j = 0; j < d; ++j) {
                table->grad[(size_t) ids[i] * d + j] += o.grad[i * d + j];
            }
        }
    });
    for (int i = 0; i < n; ++i) {
        std::memcpy(out->data.data() + (size_t) i * d,
                    table->data.data() + (size_t) ids[i] * d, (size_t) d * sizeof(double));
    }
    return out;
}

TensorPtr pick_per_row(const TensorPtr & a, const std::vector<int> & ids) {
    const int n = a->rows(), d = a->cols();
    SPD_CHECK((int) ids.size() == n, shape_error, "pick_per_row: id count mismatch");
    for (int id : ids) {
        SPD_CHECK(id >= 0 && id < d, input_error, "pick_per_row: index out of range");
    }
    auto out = make_result({n, 1}, {a}, [a, ids, d](Tensor & o) {
        a->ensure_grad();
        for (size_t i = 0; i < ids.size(); ++i) {
            a->grad[i * d + ids[i]] += o.grad[i];
        }
    });
    for (int i = 0; i < n; ++i) {
        out->data[i] = a->data[(size_t) i * d + ids[i]];
    }
    return out;
}

// ---- reductions ----

TensorPtr sum_all(const TensorPtr & a) {
    auto out = make_result({1}, {a}, [a](Tensor & o) {
        a->ensure_grad();
        for (size_t i = 0; i < a->grad.size(); ++i) a->grad[i] += o.grad[0];
    });
    double s = 0.0;
    for (double v : a->data) s += v;
    out->data[0] = s;
    return out;
}

TensorPtr mean_all(const TensorPtr & a) {
    const double inv = 1.0 / (double) a->numel();
    auto out = make_result({1}, {a}, [a, inv](Tensor & o) {
        a->ensure_grad();
        for (size_t i = 0; i < a->grad.size(); ++i) a->grad[i] += o.grad[0] * inv;
    });
    double s = 0.0;
    for (double v : a->data) s += v;
    out->data[0] = s * inv;
    return out;
}

TensorPtr sum_sq(const TensorPtr & a) {
    auto out = make_result({1}, {a}, [a](Tensor & o) {
        a->ensure_grad();
        for (size_t i = 0; i < a->grad.size(); ++i) a->grad[i] += 2.0 * o.grad[0] * a->data[i];
    });
    double s = 0.0;
    for (double v : a->data) s += v * v;
    out->data[0] = s;
    return out;
}

TensorPtr rmsnorm_rows(const TensorPtr & a, const TensorPtr & g, double eps) {
    const int n = a->rows(), d = a->cols();
    SPD_CHECK(g->numel() == d, shape_error, "rmsnorm_rows: scale length mismatch");
    // cache per-row 1/rms for the backward pass
    auto inv_rms = std::make_shared<std::vector<double>>((size_t) n);
    auto out = make_result(a->shape, {a, g}, [a, g, inv_rms, n, d](Tensor & o) {
        for (int i = 0; i < n; ++i) {
            const double ir = (*inv_rms)[i];
            const double * x = a->data.data() + (size_t) i * d;
            const double * go = o.grad.data() + (size_t) i * d;
            if (g->requires_grad) {
                g->ensure_grad();
                for (int j = 0; j < d; ++j) {
                    g->grad[j] += go[j] * x[j] * ir;
                }
            }
            if (a->requires_grad) {
                a->ensure_grad();
                // y_j = g_j * x_j * ir, ir = (mean(x^2)+eps)^-1/2
                double dot = 0.0;
                for (int j = 0; j < d; ++j) {
                    dot += go[j] * g->data[j] * x[j];
                }
                const double c = dot * ir * ir * ir / (double) d;
                double * ga = a->grad.data() + (size_t) i * d;
                for (int j = 0; j < d; ++j) {
                    ga[j] += go[j] * g->data[j] * ir - c * x[j];
                }
            }
        }
    });
    for (int i = 0; i < n; ++i) {
        const double * x = a->data.data() + (size_t) i * d;
        double ms = 0.0;
        for (int j = 0; j < d; ++j) ms += x[j] * x[j];
        ms = ms / (double) d + eps;
        const double ir = 1.0 / std::sqrt(ms);
        (*inv_rms)[i] = ir;
        double * y = out->data.data() + (size_t) i * d;
        for (int j = 0; j < d; ++j) {
            y[j] = g->data[j] * x[j] * ir;
        }
    }
    return out;
}

// ---- softmax family ----

static void check_finite_rows(const TensorPtr & a, const char * op) {
    for (double v : a->data) {
        SPD_CHECK(std::isfinite(v), numeric_error, std::string(op) + ": non-finite input");
    }
}

TensorPtr softmax_rows(const TensorPtr & a) {
    check_finite_rows(a, "softmax");
    const int n = a->rows(), d = a->cols();
    auto out = make_result(a->shape, {a}, [a, n, d](Tensor & o) {
        a->ensure_grad();
        for (int i = 0; i < n; ++i) {
            const double * y = o.data.data() + (size_t) i * d;
            const double * go = o.grad.data() + (size_t) i * d;
            double dot = 0.0;
            for (int j = 0; j < d; ++j) dot += y[j] * go[j];
            double * ga = a->grad.data() + (size_t) i * d;
            for (int j = 0; j < d; ++j) ga[j] += y[j] * (go[j] - dot);
        }
    });
    for (int i = 0; i < n; ++i) {
        const double * x = a->data.data() + (size_t) i * d;
        double * y = out->data.data() + (size_t) i * d;
        double mx = x[0];
        for (int j = 1; j < d; ++j) mx = std::max(mx, x[j]);
        double s = 0.0;
        for (int j = 0; j < d; ++j) {
            y[j] = std::exp(x[j] - mx);
            s += y[j];
        }
        const double inv = 1.0 / s;
        for (int j = 0; j < d; ++j) y[j] *= inv;
    }
    return out;
}

TensorPtr log_softmax_rows(const TensorPtr & a) {
    check_finite_rows(a, "log_softmax");
    const int n = a->rows(), d = a->cols();
    auto out = make_result(a->shape, {a, }, [a, n, d](Tensor & o) {
        a->ensure_grad();
        for (int i = 0; i < n; ++i) {
            const double * y = o.data.data() + (size_t) i * d;   // log-probs
            const double * go = o.grad.data() + (size_t) i * d;
            double gsum = 0.0;
            for (int j = 0; j < d; ++j) gsum += go[j];
            double * ga = a->grad.data() + (size_t) i * d;
            for (int j = 0; j < d; ++j) ga[j] += go[j] - std::exp(y[j]) * gsum;
        }
    });
    for (int i = 0; i < n; ++i) {
        const double * x = a->data.data() + (size_t) i * d;
        double * y = out->data.data() + (size_t) i * d;
        double mx = x[0];
        for (int j = 1; j < d; ++j) mx = std::max(mx, x[j]);
        double s = 0.0;
        for (int j = 0; j < d; ++j) s += std::exp(x[j] - mx);
        const double lse = mx + std::log(s);
        for (int j = 0; j < d; ++j) y[j] = x[j] - lse;
    }
    return out;
}

TensorPtr causal_softmax(const TensorPtr & a) {
    check_finite_rows(a, "causal_softmax");
    const int n = a->rows(), d = a->cols();
    SPD_CHECK(n == d, shape_error, "causal_softmax: expects square score matrix");
    auto out = make_result(a->shape, {a}, [a, n, d](Tensor & o) {
        a->ensure_grad();
        for (int i = 0; i < n; ++i) {
            const double * y = o.data.data() + (size_t) i * d;
            const double * go = o.grad.data() + (size_t) i * d;
            double dot = 0.0;
            for (int j = 0; j <= i; ++j) dot += y[j] * go[j];
            double * ga = a->grad.data() + (size_t) i * d;
            for (int j = 0; j <= i; ++j) ga[j] += y[j] * (go[j] - dot);
        }
    });
    for (int i = 0; i < n; ++i) {
        const double * x = a->data.data() + (size_t) i * d;
        double * y = out->data.data() + (size_t) i * d;
        double mx = x[0];
        for (int j = 1; j <= i; ++j) mx = std::max(mx, x[j]);
        double s = 0.0;
        for (int j = 0; j <= i; ++j) {
            y[j] = std::exp(x[j] - mx);
            s += y[j];
        }
        const double inv = 1.0 / s;
        for (int j = 0; j <= i; ++j) y[j] *= inv;
        for (int j = i + 1; j < d; ++j) y[j] = 0.0;
    }
    return out;
}

// ---- backward driver ----

void backward(const TensorPtr & loss) {
    SPD_CHECK(loss->is_scalar(), input_error, "backward: loss must be scalar");
    if (!loss->requires_grad) {
        return;   // nothing reachable is trainable
    }

    // iterative post-order DFS; visit order is construction-deterministic
    std::vector<Tensor *> topo;
    std::unordered_set<Tensor *> seen;
    std::vector<std::pair<Tensor *, size_t>> stack;
    stack.push_back({loss.get(), 0});
    seen.insert(loss.get());
    while (!stack.empty()) {
        auto & [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            Tensor * p = node->parents[idx++].get();
            if (p->requires_grad && !seen.count(p)) {
                seen.insert(p);
                stack.push_back({p, 0});
            }
        } else {
            topo.push_back(node);
            stack.pop_back();
        }
    }

    loss->ensure_grad();
    loss->grad[0] = 1.0;
    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
        Tensor * t = *it;
        if (t->backprop && !t->grad.empty()) {
            t->backprop(*t);
        }
    }
}

// ---- ParamStore ----

TensorPtr ParamStore::add(const std::string & name, std::vector<int> shape, double fill) {
    return add(name, make_tensor(std::move(shape), fill));
}

TensorPtr ParamStore::add(const std::string & name, TensorPtr t) {
    SPD_CHECK(!params.count(name), config_error, "duplicate parameter name: " + name);
    t->requires_grad = true;
    params[name] = t;
    trainable[name] = true;
    return t;
}

TensorPtr ParamStore::at(const std::string & name) const {
    auto it = params.find(name);
    SPD_CHECK(it != params.end(), config_error, "unknown parameter: " + name);
    return it->second;
}

bool ParamStore::has(const std::string & name) const {
    return params.count(name) > 0;
}

void ParamStore::set_trainable(const std::string & name, bool flag) {
    SPD_CHECK(params.count(name), config_error, "unknown parameter: " + name);
    trainable[name] = flag;
    params.at(name)->requires_grad = flag;
}

void ParamStore::set_all_trainable(bool flag) {
    for (auto & [name, t] : params) {
        trainable[name] = flag;
        t->requires_grad = flag;
    }
}

void ParamStore::set_trainable_prefix(const std::string & prefix, bool flag) {
    for (auto & [name, t] : params) {
        if (name.rfind(prefix, 0) == 0) {
            trainable[name] = flag;
            t->requires_grad = flag;
        }
    }
}

std::vector<std::pair<std::string, TensorPtr>> ParamStore::entries() const {
    std::vector<std::pair<std::string, TensorPtr>> out;
    out.reserve(params.size());
    for (const auto & [name, t] : params) {
        out.push_back({name, t});
    }
    return out;
}

std::vector<std::pair<std::string, TensorPtr>> ParamStore::trainable_entries() const {
    std::vector<std::pair<std::string, TensorPtr>> out;
    for (const auto & [name, t] : params) {
        if (trainable.at(name)) {
            out.push_back({name, t});
        }
    }
    return out;
}

void ParamStore::zero_grad() {
    for (auto & [name, t] : params) {
        t->zero_grad();
    }
}

int64_t ParamStore::total_params() const {
    int64_t n = 0;
    for (const auto & [name, t] : params) {
        n += t->numel();
    }
    return n;
}

uint64_t ParamStore::content_hash(bool trainable_only, bool frozen_only) const {
    uint64_t h = 1469598103934665603ull;
    auto mix = [&h](const void * p, size_t len) {
        const unsigned char * b = (const unsigned char *) p;
        for (size_t i = 0; i < len; ++i) {
            h ^= b[i];
            h *= 1099511628211ull;
        }
    };
    for (const auto & [name, t] : params) {
        const bool tr = trainable.at(name);
        if ((trainable_only && !tr) || (frozen_only && tr)) {
            continue;
        }
        mix(name.data(), name.size());
        mix(t->data.data(), t->data.size() * sizeof(double));
    }
    return h;
}

ParamStore ParamStore::clone() const {
    ParamStore out;
    for (const auto & [name, t] : params) {
        auto c = make_tensor(t->shape, t->data);
        c->requires_grad = trainable.at(name);
        out.params[name] = c;
        out.trainable[name] = trainable.at(name);
    }
    return out;
}

} // namespace spd
