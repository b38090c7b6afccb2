#pragma once

#include "spd/common.hpp"
#include "spd/rng.hpp"

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

namespace spd {

class Tensor;
using TensorPtr = std::shared_ptr<Tensor>;

// Dense fp64 tensor with tape-based reverse-mode autodiff. Shapes are at
// most 2-D in practice (rows x cols); 1-D tensors are treated as [1, n]
// where a matrix is expected. Values are immutable once produced by an op;
// only grad accumulates. Sums run in index order so repeated runs are
// bit-identical.
class Tensor {
public:
    std::vector<int> shape;
    std::vector<double> data;
    std::vector<double> grad;   // allocated lazily, same length as data
    bool requires_grad = false;

    // tape
    std::vector<TensorPtr> parents;
    std::function<void(Tensor &)> backprop;   // pushes this->grad into parents

    Tensor() = default;
    Tensor(std::vector<int> s, double fill);

    int64_t numel() const;
    int rows() const;
    int cols() const;
    bool is_scalar() const { return numel() == 1; }
    double scalar() const;

    void ensure_grad();
    void zero_grad();
};

// While alive, ops do not record the tape (values are computed by the same
// code, so grad-mode and no-grad-mode forwards agree bitwise).
struct NoGradGuard {
    bool prev;
    NoGradGuard();
    ~NoGradGuard();
};

bool grad_enabled();

// ---- construction ----
TensorPtr make_tensor(std::vector<int> shape, double fill = 0.0);
TensorPtr make_tensor(std::vector<int> shape, std::vector<double> values);
TensorPtr make_scalar(double v);
TensorPtr randn_tensor(std::vector<int> shape, Rng & rng, double stddev);

// ---- elementwise / arithmetic ----
TensorPtr add(const TensorPtr & a, const TensorPtr & b);
TensorPtr sub(const TensorPtr & a, const TensorPtr & b);
TensorPtr mul(const TensorPtr & a, const TensorPtr & b);
TensorPtr scale(const TensorPtr & a, double c);
TensorPtr add_rowvec(const TensorPtr & a, const TensorPtr & v);   // a: [n,d], v: [d]

TensorPtr add_const(const TensorPtr & a, double c);
TensorPtr mul_scalar_t(const TensorPtr & a, const TensorPtr & s);   // s: scalar tensor
TensorPtr reciprocal(const TensorPtr & a);

TensorPtr sigmoid(const TensorPtr & a);
TensorPtr silu(const TensorPtr & a);
TensorPtr log_tensor(const TensorPtr & a);

// ---- linear algebra ----
TensorPtr matmul(const TensorPtr & a, const TensorPtr & b);        // [m,k]x[k,n]
TensorPtr matmul_nt(const TensorPtr & a, const TensorPtr & b);     // [m,k]x[n,k]^T -> [m,n]

// ---- shape ops ----
TensorPtr reshape(const TensorPtr & a, std::vector<int> shape);
TensorPtr slice_cols(const TensorPtr & a, int c0, int len);
TensorPtr slice_rows(const TensorPtr & a, int r0, int len);
TensorPtr concat_cols(const std::vector<TensorPtr> & parts);
TensorPtr concat_rows(const std::vector<TensorPtr> & parts);
TensorPtr row_gather(const TensorPtr & table, const std::vector<int> & ids);
// out[i] = a[i, ids[i]], shape [n, 1]
TensorPtr pick_per_row(const TensorPtr & a, const std::vector<int> & ids);

// ---- reductions / normalization ----
TensorPtr sum_all(const TensorPtr & a);
TensorPtr mean_all(const TensorPtr & a);
TensorPtr sum_sq(const TensorPtr & a);
// rows normalized to unit mean square, then scaled by g: [n,d] x [d]
TensorPtr rmsnorm_rows(const TensorPtr & a, const TensorPtr & g, double eps = 1e-6);

// Row softmax / log-softmax with max-shift; throws numeric_error on
// non-finite input. causal variant masks columns j > i before the shift.
TensorPtr softmax_rows(const TensorPtr & a);
TensorPtr log_softmax_rows(const TensorPtr & a);
TensorPtr causal_softmax(const TensorPtr & a);

// ---- autodiff driver ----
// loss must be scalar; accumulates d loss / d leaf into each leaf's grad.
void backward(const TensorPtr & loss);

// ---- parameter store ----
class ParamStore {
public:
    std::map<std::string, TensorPtr> params;     // ordered: deterministic walks
    std::map<std::string, bool> trainable;

    TensorPtr add(const std::string & name, std::vector<int> shape, double fill = 0.0);
    TensorPtr add(const std::string & name, TensorPtr t);
    TensorPtr at(const std::string & name) const;
    bool has(const std::string & name) const;

    void set_trainable(const std::string & name, bool flag);
    void set_all_trainable(bool flag);
    // every name with the given prefix
    void set_trainable_prefix(const std::string & prefix, bool flag);

    std::vector<std::pair<std::string, TensorPtr>> entries() const;
    std::vector<std::pair<std::string, TensorPtr>> trainable_entries() const;

    void zero_grad();
    int64_t total_params() const;

    // FNV-1a over raw bytes of the selected parameters, in name order
    uint64_t content_hash(bool trainable_only, bool frozen_only) const;

    ParamStore clone() const;   // deep copy of values, grads not copied
};

} // namespace spd
