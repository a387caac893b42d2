#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "talnet/rng.hpp"
#include "talnet/tensor.hpp"

namespace talnet {

// Standard runs in float; wide runs in double and is what gradient checks use.
enum class Precision { standard, wide };

template <typename Real>
class Tape;

// Named learnable arrays with one gradient buffer per array.
template <typename Real>
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Matrix<Real> value;
    Matrix<Real> grad;
  };

  // Throws ConfigError on a duplicate name.
  std::size_t add(std::string name, Matrix<Real> value);

  bool contains(std::string_view name) const { return index_.find(std::string(name)) != index_.end(); }
  std::size_t index_of(std::string_view name) const;

  Matrix<Real>& value(std::string_view name) { return entries_[index_of(name)].value; }
  const Matrix<Real>& value(std::string_view name) const { return entries_[index_of(name)].value; }
  Matrix<Real>& grad(std::string_view name) { return entries_[index_of(name)].grad; }
  const Matrix<Real>& grad(std::string_view name) const { return entries_[index_of(name)].grad; }

  Entry& entry(std::size_t i) { return entries_[i]; }
  const Entry& entry(std::size_t i) const { return entries_[i]; }
  std::size_t size() const { return entries_.size(); }
  std::span<const Entry> entries() const { return entries_; }

  void zero_grad();
  std::size_t parameter_count() const;

 private:
  std::vector<Entry> entries_;
  std::map<std::string, std::size_t> index_;
};

// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
template <typename Real>
class Var {
 public:
  Var() = default;
  Var(Tape<Real>* tape, int id) : tape_(tape), id_(id) {}

  bool valid() const { return tape_ != nullptr && id_ >= 0; }
  Tape<Real>& tape() const;
  int id() const { return id_; }
  const Matrix<Real>& value() const;
  int rows() const { return value().rows(); }
  int cols() const { return value().cols(); }

 private:
  Tape<Real>* tape_ = nullptr;
  int id_ = -1;
};

// Records a forward computation and replays it in reverse. Nodes are kept in
// creation order, which is a valid topological order, so backward is a single
// reverse sweep with a fixed accumulation order.
template <typename Real>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, int)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Leaf without gradient.
  Var<Real> constant(Matrix<Real> value);
  // Leaf whose gradient is kept on the tape (read it with grad()).
  Var<Real> variable(Matrix<Real> value);
  // Leaf bound to a stored parameter; backward() adds into the store's grad.
  // Repeated requests for the same parameter return the same node.
  Var<Real> parameter(ParamStore<Real>& store, std::string_view name);
  // Read-only use of a stored parameter (inference); no gradient is kept.
  Var<Real> parameter(const ParamStore<Real>& store, std::string_view name);

  // Adds an op result. `backward` is called with the node id during the
  // reverse sweep; it is skipped when no input needs a gradient.
  Var<Real> record(Matrix<Real> value, std::span<const int> inputs, BackwardFn backward);

  const Matrix<Real>& value(int id) const { return nodes_.at(id).value; }
  const Matrix<Real>& value(const Var<Real>& v) const { return value(v.id()); }

  bool requires_grad(int id) const { return nodes_.at(id).requires_grad; }
  // Gradient buffer of `id`, allocated as zeros on first access.
  Matrix<Real>& grad(int id);
  const Matrix<Real>& grad(const Var<Real>& v) { return grad(v.id()); }
  // Gradient buffer of an input if it needs one, else nullptr.
  Matrix<Real>* grad_target(int id) { return requires_grad(id) ? &grad(id) : nullptr; }

  // Throws std::logic_error if `loss` is not a 1x1 node of this tape or the
  // tape has already been swept.
  void backward(const Var<Real>& loss);

  // Smallest distance of any recorded forward quantity to a point where an op
  // is not differentiable (relu at 0, tied maxima, smooth-L1 at |x| = 1).
  double nondiff_margin() const { return margin_; }
  void note_margin(double distance) {
    if (distance < margin_) margin_ = distance;
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix<Real> value;
    Matrix<Real> grad;
    bool has_grad = false;
    bool requires_grad = false;
    BackwardFn backward;
    ParamStore<Real>* store = nullptr;
    std::size_t param_index = 0;
  };

  std::vector<Node> nodes_;
  std::map<std::pair<const ParamStore<Real>*, std::size_t>, int> param_nodes_;
  double margin_ = std::numeric_limits<double>::infinity();
  bool swept_ = false;
};

// ---------------------------------------------------------------------------
// Operators. Every result is recorded on the tape of its first operand.

// Zero-padded "same" dilated cross-correlation. `kernel` is (K*D_in) x D_out
// with tap k occupying rows [k*D_in, (k+1)*D_in); tap k reads cell
// t + (k - (K-1)/2) * dilation. K must be odd.
template <typename Real>
Var<Real> conv1d(const Var<Real>& input, const Var<Real>& kernel, const Var<Real>& bias, int dilation);

// Stride-1 max over cells t - floor(k/2) ... t + ceil(k/2) - 1, cells outside
// the grid ignored. Gradient goes to the first maximal cell.
template <typename Real>
Var<Real> maxpool1d(const Var<Real>& input, int kernel);

template <typename Real>
Var<Real> relu(const Var<Real>& x);

// x * weight + bias for N x D_in input and D_in x D_out weight.
template <typename Real>
Var<Real> linear(const Var<Real>& x, const Var<Real>& weight, const Var<Real>& bias);

template <typename Real>
Var<Real> concat_features(std::span<const Var<Real>> parts);
template <typename Real>
Var<Real> concat_features(const Var<Real>& a, const Var<Real>& b);

// (a + b) / 2 elementwise.
template <typename Real>
Var<Real> mean_of(const Var<Real>& a, const Var<Real>& b);

template <typename Real>
Var<Real> add(const Var<Real>& a, const Var<Real>& b);
template <typename Real>
Var<Real> scale(const Var<Real>& x, Real factor);
template <typename Real>
Var<Real> mul(const Var<Real>& a, const Var<Real>& b);
// Sum of all entries, as a 1x1 node.
template <typename Real>
Var<Real> sum(const Var<Real>& x);

// Same data, new shape (row-major order is kept).
template <typename Real>
Var<Real> reshape(const Var<Real>& x, int rows, int cols);

template <typename Real>
Var<Real> gather_rows(const Var<Real>& x, std::span<const int> rows);

// Mean over rows of -log softmax(logits)[label].
template <typename Real>
Var<Real> softmax_cross_entropy(const Var<Real>& logits, std::span<const int> labels);

// Mean over rows of the binary cross-entropy of sigmoid(logit) against a 0/1
// label; logits is N x 1.
template <typename Real>
Var<Real> sigmoid_cross_entropy(const Var<Real>& logits, std::span<const int> labels);

// Sum over entries of 0.5 d^2 (|d| < 1) or |d| - 0.5, d = pred - target.
template <typename Real>
Var<Real> smooth_l1(const Var<Real>& pred, const Matrix<Real>& target);

// ---------------------------------------------------------------------------
// Optimizer

template <typename Real>
struct AdamState {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::int64_t step = 0;
  std::vector<Matrix<Real>> first_moment;
  std::vector<Matrix<Real>> second_moment;

  // Zero moments shaped like the parameters of `store`.
  static AdamState for_store(const ParamStore<Real>& store, double learning_rate);
};

// One bias-corrected Adam update from the gradients held in `params`.
template <typename Real>
void adam_step(ParamStore<Real>& params, AdamState<Real>& state);

// Uniform in +-sqrt(gain / fan_in).
template <typename Real>
Matrix<Real> fan_in_uniform(int rows, int cols, int fan_in, double gain, Rng& rng);

}  // namespace talnet
