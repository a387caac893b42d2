#include "talnet/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace talnet {

// ---------------------------------------------------------------------------
// ParamStore

template <typename Real>
std::size_t ParamStore<Real>::add(std::string name, Matrix<Real> value) {
  if (index_.count(name) != 0) throw ConfigError("duplicate parameter name: " + name);
  const std::size_t idx = entries_.size();
  index_.emplace(name, idx);
  Matrix<Real> grad(value.rows(), value.cols());
  entries_.push_back(Entry{std::move(name), std::move(value), std::move(grad)});
  return idx;
}

template <typename Real>
std::size_t ParamStore<Real>::index_of(std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) throw ConfigError("unknown parameter: " + std::string(name));
  return it->second;
}

template <typename Real>
void ParamStore<Real>::zero_grad() {
  for (auto& e : entries_) e.grad.fill(Real(0));
}

template <typename Real>
std::size_t ParamStore<Real>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.value.size();
  return n;
}

// ---------------------------------------------------------------------------
// Var / Tape

template <typename Real>
Tape<Real>& Var<Real>::tape() const {
  if (tape_ == nullptr) throw std::logic_error("use of an unbound Var");
  return *tape_;
}

template <typename Real>
const Matrix<Real>& Var<Real>::value() const {
  return tape().value(id_);
}

template <typename Real>
Var<Real> Tape<Real>::constant(Matrix<Real> value) {
  Node node;
  node.value = std::move(value);
  nodes_.push_back(std::move(node));
  return Var<Real>(this, static_cast<int>(nodes_.size()) - 1);
}

template <typename Real>
Var<Real> Tape<Real>::variable(Matrix<Real> value) {
  Var<Real> v = constant(std::move(value));
  nodes_.back().requires_grad = true;
  return v;
}

template <typename Real>
Var<Real> Tape<Real>::parameter(ParamStore<Real>& store, std::string_view name) {
  const std::size_t idx = store.index_of(name);
  const auto key = std::make_pair(static_cast<const ParamStore<Real>*>(&store), idx);
  if (auto it = param_nodes_.find(key); it != param_nodes_.end()) return Var<Real>(this, it->second);
  Var<Real> v = variable(store.entry(idx).value);
  nodes_.back().store = &store;
  nodes_.back().param_index = idx;
  param_nodes_.emplace(key, v.id());
  return v;
}

template <typename Real>
Var<Real> Tape<Real>::parameter(const ParamStore<Real>& store, std::string_view name) {
  const std::size_t idx = store.index_of(name);
  const auto key = std::make_pair(&store, idx);
  if (auto it = param_nodes_.find(key); it != param_nodes_.end()) return Var<Real>(this, it->second);
  Var<Real> v = constant(store.entry(idx).value);
  param_nodes_.emplace(key, v.id());
  return v;
}

template <typename Real>
Var<Real> Tape<Real>::record(Matrix<Real> value, std::span<const int> inputs, BackwardFn backward) {
  Node node;
  node.value = std::move(value);
  for (int id : inputs) {
    if (id < 0 || id >= static_cast<int>(nodes_.size())) throw std::logic_error("op input from another tape");
    node.requires_grad = node.requires_grad || nodes_[id].requires_grad;
  }
  if (node.requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var<Real>(this, static_cast<int>(nodes_.size()) - 1);
}

template <typename Real>
Matrix<Real>& Tape<Real>::grad(int id) {
  Node& node = nodes_.at(id);
  if (!node.has_grad) {
    node.grad = Matrix<Real>(node.value.rows(), node.value.cols());
    node.has_grad = true;
  }
  return node.grad;
}

template <typename Real>
void Tape<Real>::backward(const Var<Real>& loss) {
  if (!loss.valid() || &loss.tape() != this || nodes_.empty())
    throw std::logic_error("backward called before a forward pass was recorded");
  if (swept_) throw std::logic_error("backward called twice on one tape");
  const Matrix<Real>& out = value(loss.id());
  if (out.rows() != 1 || out.cols() != 1) throw std::logic_error("backward requires a scalar (1x1) loss");
  swept_ = true;
  grad(loss.id())(0, 0) = Real(1);
  for (int id = loss.id(); id >= 0; --id) {
    Node& node = nodes_[id];
    if (!node.has_grad || !node.requires_grad) continue;
    if (node.backward) node.backward(*this, id);
  }
  for (Node& node : nodes_) {
    if (node.store == nullptr || !node.has_grad) continue;
    auto dst = node.store->entry(node.param_index).grad.flat();
    auto src = node.grad.flat();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  }
}

// ---------------------------------------------------------------------------
// Operators

namespace {

template <typename Real>
void require_same_tape(const Var<Real>& a, const Var<Real>& b) {
  if (&a.tape() != &b.tape()) throw std::logic_error("operands live on different tapes");
}

template <typename Real>
void require_same_shape(const Matrix<Real>& a, const Matrix<Real>& b, const char* op) {
  if (!a.same_shape(b)) throw ShapeError(std::string(op) + ": operand shapes differ");
}

}  // namespace

template <typename Real>
Var<Real> conv1d(const Var<Real>& input, const Var<Real>& kernel, const Var<Real>& bias, int dilation) {
  require_same_tape(input, kernel);
  require_same_tape(input, bias);
  const Matrix<Real>& x = input.value();
  const Matrix<Real>& w = kernel.value();
  const Matrix<Real>& b = bias.value();
  const int length = x.rows();
  const int d_in = x.cols();
  const int d_out = w.cols();
  if (dilation < 1) throw ConfigError("conv1d: dilation must be >= 1");
  if (d_in == 0 || w.rows() % d_in != 0) throw ShapeError("conv1d: kernel rows are not a multiple of input channels");
  const int taps = w.rows() / d_in;
  if (taps % 2 == 0) throw ShapeError("conv1d: kernel size must be odd");
  if (b.rows() != 1 || b.cols() != d_out) throw ShapeError("conv1d: bias must be 1 x D_out");
  const int half = (taps - 1) / 2;

  Matrix<Real> y(length, d_out);
  for (int t = 0; t < length; ++t) {
    Real* yr = y.row(t);
    std::copy(b.row(0), b.row(0) + d_out, yr);
    for (int k = 0; k < taps; ++k) {
      const int src = t + (k - half) * dilation;
      if (src < 0 || src >= length) continue;
      const Real* xr = x.row(src);
      for (int i = 0; i < d_in; ++i) {
        const Real xv = xr[i];
        if (xv == Real(0)) continue;
        const Real* wr = w.row(k * d_in + i);
        for (int o = 0; o < d_out; ++o) yr[o] += xv * wr[o];
      }
    }
  }

  const int ids[] = {input.id(), kernel.id(), bias.id()};
  return input.tape().record(std::move(y), ids, [=](Tape<Real>& tape, int self) {
    const Matrix<Real>& gy = tape.grad(self);
    const Matrix<Real>& xv = tape.value(ids[0]);
    const Matrix<Real>& wv = tape.value(ids[1]);
    Matrix<Real>* gx = tape.grad_target(ids[0]);
    Matrix<Real>* gw = tape.grad_target(ids[1]);
    Matrix<Real>* gb = tape.grad_target(ids[2]);
    if (gb != nullptr) {
      Real* gbr = gb->row(0);
      for (int t = 0; t < length; ++t) {
        const Real* g = gy.row(t);
        for (int o = 0; o < d_out; ++o) gbr[o] += g[o];
      }
    }
    for (int t = 0; t < length; ++t) {
      const Real* g = gy.row(t);
      for (int k = 0; k < taps; ++k) {
        const int src = t + (k - half) * dilation;
        if (src < 0 || src >= length) continue;
        const Real* xr = xv.row(src);
        for (int i = 0; i < d_in; ++i) {
          const int wrow = k * d_in + i;
          if (gx != nullptr) {
            const Real* wr = wv.row(wrow);
            Real acc = Real(0);
            for (int o = 0; o < d_out; ++o) acc += g[o] * wr[o];
            (*gx)(src, i) += acc;
          }
          if (gw != nullptr && xr[i] != Real(0)) {
            Real* gwr = gw->row(wrow);
            const Real xi = xr[i];
            for (int o = 0; o < d_out; ++o) gwr[o] += xi * g[o];
          }
        }
      }
    }
  });
}

template <typename Real>
Var<Real> maxpool1d(const Var<Real>& input, int kernel) {
  if (kernel < 1) throw ConfigError("maxpool1d: kernel must be >= 1");
  const Matrix<Real>& x = input.value();
  if (kernel == 1) {
    // Identity; still recorded so the op shows up on the tape.
    const int ids[] = {input.id()};
    return input.tape().record(x, ids, [=](Tape<Real>& tape, int self) {
      if (Matrix<Real>* gx = tape.grad_target(ids[0])) {
        auto src = tape.grad(self).flat();
        auto dst = gx->flat();
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
      }
    });
  }
  const int length = x.rows();
  const int dim = x.cols();
  const int lo_off = kernel / 2;
  const int hi_off = (kernel + 1) / 2 - 1;
  Matrix<Real> y(length, dim);
  std::vector<int> argmax(static_cast<std::size_t>(length) * dim);
  Tape<Real>& tape = input.tape();
  for (int t = 0; t < length; ++t) {
    const int lo = std::max(0, t - lo_off);
    const int hi = std::min(length - 1, t + hi_off);
    for (int d = 0; d < dim; ++d) {
      int best = lo;
      Real best_v = x(lo, d);
      Real second = -std::numeric_limits<Real>::infinity();
      for (int s = lo + 1; s <= hi; ++s) {
        const Real v = x(s, d);
        if (v > best_v) {
          second = best_v;
          best_v = v;
          best = s;
        } else if (v > second) {
          second = v;
        }
      }
      y(t, d) = best_v;
      argmax[static_cast<std::size_t>(t) * dim + d] = best;
      // An all-zero window is a block of clamped ReLU outputs; it stays
      // constant under small perturbations, so the tie is not a kink.
      if (hi > lo && !(best_v == Real(0) && second == Real(0)))
        tape.note_margin(static_cast<double>(best_v - second));
    }
  }
  const int ids[] = {input.id()};
  return tape.record(std::move(y), ids, [=, argmax = std::move(argmax)](Tape<Real>& tp, int self) {
    Matrix<Real>* gx = tp.grad_target(ids[0]);
    if (gx == nullptr) return;
    const Matrix<Real>& gy = tp.grad(self);
    for (int t = 0; t < length; ++t)
      for (int d = 0; d < dim; ++d) (*gx)(argmax[static_cast<std::size_t>(t) * dim + d], d) += gy(t, d);
  });
}

template <typename Real>
Var<Real> relu(const Var<Real>& x) {
  Matrix<Real> y = x.value();
  Tape<Real>& tape = x.tape();
  double margin = std::numeric_limits<double>::infinity();
  for (Real& v : y.flat()) {
    margin = std::min(margin, static_cast<double>(std::abs(v)));
    if (v < Real(0)) v = Real(0);
  }
  tape.note_margin(margin);
  const int ids[] = {x.id()};
  return tape.record(std::move(y), ids, [=](Tape<Real>& tp, int self) {
    Matrix<Real>* gx = tp.grad_target(ids[0]);
    if (gx == nullptr) return;
    auto in = tp.value(ids[0]).flat();
    auto g = tp.grad(self).flat();
    auto dst = gx->flat();
    for (std::size_t i = 0; i < dst.size(); ++i)
      if (in[i] > Real(0)) dst[i] += g[i];
  });
}

template <typename Real>
Var<Real> linear(const Var<Real>& x, const Var<Real>& weight, const Var<Real>& bias) {
  if (x.cols() != weight.rows()) throw ShapeError("linear: input width does not match weight rows");
  return conv1d(x, weight, bias, 1);
}

template <typename Real>
Var<Real> concat_features(std::span<const Var<Real>> parts) {
  if (parts.empty()) throw ShapeError("concat_features: no operands");
  const int rows = parts[0].rows();
  int cols = 0;
  std::vector<int> ids;
  std::vector<int> widths;
  for (const auto& p : parts) {
    require_same_tape(parts[0], p);
    if (p.rows() != rows) throw ShapeError("concat_features: operands differ in length");
    ids.push_back(p.id());
    widths.push_back(p.cols());
    cols += p.cols();
  }
  Matrix<Real> y(rows, cols);
  int offset = 0;
  for (const auto& p : parts) {
    const Matrix<Real>& v = p.value();
    for (int r = 0; r < rows; ++r) std::copy(v.row(r), v.row(r) + v.cols(), y.row(r) + offset);
    offset += v.cols();
  }
  return parts[0].tape().record(std::move(y), ids, [=](Tape<Real>& tape, int self) {
    const Matrix<Real>& gy = tape.grad(self);
    int off = 0;
    for (std::size_t p = 0; p < ids.size(); ++p) {
      if (Matrix<Real>* gx = tape.grad_target(ids[p])) {
        for (int r = 0; r < rows; ++r) {
          const Real* g = gy.row(r) + off;
          Real* dst = gx->row(r);
          for (int c = 0; c < widths[p]; ++c) dst[c] += g[c];
        }
      }
      off += widths[p];
    }
  });
}

template <typename Real>
Var<Real> concat_features(const Var<Real>& a, const Var<Real>& b) {
  const Var<Real> parts[] = {a, b};
  return concat_features<Real>(std::span<const Var<Real>>(parts));
}

namespace {

// Elementwise binary op with per-operand local derivatives.
template <typename Real, typename Fwd, typename DA, typename DB>
Var<Real> elementwise(const Var<Real>& a, const Var<Real>& b, const char* name, Fwd fwd, DA da, DB db) {
  require_same_tape(a, b);
  require_same_shape(a.value(), b.value(), name);
  const Matrix<Real>& av = a.value();
  const Matrix<Real>& bv = b.value();
  Matrix<Real> y(av.rows(), av.cols());
  auto out = y.flat();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(av.flat()[i], bv.flat()[i]);
  const int ids[] = {a.id(), b.id()};
  return a.tape().record(std::move(y), ids, [=](Tape<Real>& tape, int self) {
    auto g = tape.grad(self).flat();
    auto x0 = tape.value(ids[0]).flat();
    auto x1 = tape.value(ids[1]).flat();
    if (Matrix<Real>* ga = tape.grad_target(ids[0])) {
      auto dst = ga->flat();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[i] * da(x0[i], x1[i]);
    }
    if (Matrix<Real>* gb = tape.grad_target(ids[1])) {
      auto dst = gb->flat();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[i] * db(x0[i], x1[i]);
    }
  });
}

}  // namespace

template <typename Real>
Var<Real> mean_of(const Var<Real>& a, const Var<Real>& b) {
  return elementwise(
      a, b, "mean_of", [](Real x, Real y) { return (x + y) / Real(2); }, [](Real, Real) { return Real(0.5); },
      [](Real, Real) { return Real(0.5); });
}

template <typename Real>
Var<Real> add(const Var<Real>& a, const Var<Real>& b) {
  return elementwise(
      a, b, "add", [](Real x, Real y) { return x + y; }, [](Real, Real) { return Real(1); },
      [](Real, Real) { return Real(1); });
}

template <typename Real>
Var<Real> mul(const Var<Real>& a, const Var<Real>& b) {
  return elementwise(
      a, b, "mul", [](Real x, Real y) { return x * y; }, [](Real, Real y) { return y; },
      [](Real x, Real) { return x; });
}

template <typename Real>
Var<Real> scale(const Var<Real>& x, Real factor) {
  Matrix<Real> y = x.value();
  for (Real& v : y.flat()) v *= factor;
  const int ids[] = {x.id()};
  return x.tape().record(std::move(y), ids, [=](Tape<Real>& tape, int self) {
    if (Matrix<Real>* gx = tape.grad_target(ids[0])) {
      auto g = tape.grad(self).flat();
      auto dst = gx->flat();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[i] * factor;
    }
  });
}

template <typename Real>
Var<Real> sum(const Var<Real>& x) {
  Real total = Real(0);
  for (Real v : x.value().flat()) total += v;
  const int ids[] = {x.id()};
  return x.tape().record(Matrix<Real>(1, 1, total), ids, [=](Tape<Real>& tape, int self) {
    if (Matrix<Real>* gx = tape.grad_target(ids[0])) {
      const Real g = tape.grad(self)(0, 0);
      for (Real& v : gx->flat()) v += g;
    }
  });
}

template <typename Real>
Var<Real> reshape(const Var<Real>& x, int rows, int cols) {
  const Matrix<Real>& v = x.value();
  if (rows < 0 || cols < 0 || static_cast<std::size_t>(rows) * cols != v.size())
    throw ShapeError("reshape: element count changes");
  Matrix<Real> y(rows, cols, std::vector<Real>(v.flat().begin(), v.flat().end()));
  const int ids[] = {x.id()};
  return x.tape().record(std::move(y), ids, [=](Tape<Real>& tape, int self) {
    if (Matrix<Real>* gx = tape.grad_target(ids[0])) {
      auto g = tape.grad(self).flat();
      auto dst = gx->flat();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[i];
    }
  });
}

template <typename Real>
Var<Real> gather_rows(const Var<Real>& x, std::span<const int> rows) {
  const Matrix<Real>& v = x.value();
  Matrix<Real> y(static_cast<int>(rows.size()), v.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] < 0 || rows[r] >= v.rows()) throw ShapeError("gather_rows: row index out of range");
    std::copy(v.row(rows[r]), v.row(rows[r]) + v.cols(), y.row(static_cast<int>(r)));
  }
  const int ids[] = {x.id()};
  std::vector<int> picked(rows.begin(), rows.end());
  return x.tape().record(std::move(y), ids, [=](Tape<Real>& tape, int self) {
    Matrix<Real>* gx = tape.grad_target(ids[0]);
    if (gx == nullptr) return;
    const Matrix<Real>& g = tape.grad(self);
    for (std::size_t r = 0; r < picked.size(); ++r) {
      const Real* src = g.row(static_cast<int>(r));
      Real* dst = gx->row(picked[r]);
      for (int c = 0; c < g.cols(); ++c) dst[c] += src[c];
    }
  });
}

template <typename Real>
Var<Real> softmax_cross_entropy(const Var<Real>& logits, std::span<const int> labels) {
  const Matrix<Real>& z = logits.value();
  const int n = z.rows();
  const int classes = z.cols();
  if (static_cast<int>(labels.size()) != n) throw ShapeError("softmax_cross_entropy: one label per row required");
  if (n == 0) throw ShapeError("softmax_cross_entropy: empty batch");
  Matrix<Real> probs(n, classes);
  double total = 0.0;
  for (int r = 0; r < n; ++r) {
    if (labels[r] < 0 || labels[r] >= classes) throw ConfigError("softmax_cross_entropy: label out of range");
    const Real* zr = z.row(r);
    const Real peak = *std::max_element(zr, zr + classes);
    Real denom = Real(0);
    for (int c = 0; c < classes; ++c) denom += std::exp(zr[c] - peak);
    const Real log_denom = std::log(denom);
    for (int c = 0; c < classes; ++c) probs(r, c) = std::exp(zr[c] - peak - log_denom);
    total += static_cast<double>(log_denom - (zr[labels[r]] - peak));
  }
  const int ids[] = {logits.id()};
  std::vector<int> lab(labels.begin(), labels.end());
  return logits.tape().record(
      Matrix<Real>(1, 1, static_cast<Real>(total / n)), ids,
      [=, probs = std::move(probs)](Tape<Real>& tape, int self) {
        Matrix<Real>* gz = tape.grad_target(ids[0]);
        if (gz == nullptr) return;
        const Real g = tape.grad(self)(0, 0) / static_cast<Real>(n);
        for (int r = 0; r < n; ++r) {
          for (int c = 0; c < classes; ++c) {
            const Real target = c == lab[r] ? Real(1) : Real(0);
            (*gz)(r, c) += g * (probs(r, c) - target);
          }
        }
      });
}

template <typename Real>
Var<Real> sigmoid_cross_entropy(const Var<Real>& logits, std::span<const int> labels) {
  const Matrix<Real>& z = logits.value();
  const int n = z.rows();
  if (z.cols() != 1) throw ShapeError("sigmoid_cross_entropy: logits must be N x 1");
  if (static_cast<int>(labels.size()) != n) throw ShapeError("sigmoid_cross_entropy: one label per row required");
  if (n == 0) throw ShapeError("sigmoid_cross_entropy: empty batch");
  double total = 0.0;
  for (int r = 0; r < n; ++r) {
    if (labels[r] != 0 && labels[r] != 1) throw ConfigError("sigmoid_cross_entropy: labels must be 0 or 1");
    const Real v = z(r, 0);
    const Real y = static_cast<Real>(labels[r]);
    total += static_cast<double>(std::max(v, Real(0)) - v * y + std::log1p(std::exp(-std::abs(v))));
  }
  const int ids[] = {logits.id()};
  std::vector<int> lab(labels.begin(), labels.end());
  return logits.tape().record(Matrix<Real>(1, 1, static_cast<Real>(total / n)), ids,
                              [=](Tape<Real>& tape, int self) {
                                Matrix<Real>* gz = tape.grad_target(ids[0]);
                                if (gz == nullptr) return;
                                const Matrix<Real>& zv = tape.value(ids[0]);
                                const Real g = tape.grad(self)(0, 0) / static_cast<Real>(n);
                                for (int r = 0; r < n; ++r) {
                                  const Real v = zv(r, 0);
                                  const Real p = v >= Real(0) ? Real(1) / (Real(1) + std::exp(-v))
                                                              : std::exp(v) / (Real(1) + std::exp(v));
                                  (*gz)(r, 0) += g * (p - static_cast<Real>(lab[r]));
                                }
                              });
}

template <typename Real>
Var<Real> smooth_l1(const Var<Real>& pred, const Matrix<Real>& target) {
  require_same_shape(pred.value(), target, "smooth_l1");
  const auto p = pred.value().flat();
  const auto q = target.flat();
  Tape<Real>& tape = pred.tape();
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const Real d = p[i] - q[i];
    const Real a = std::abs(d);
    tape.note_margin(std::abs(static_cast<double>(a) - 1.0));
    total += static_cast<double>(a < Real(1) ? Real(0.5) * d * d : a - Real(0.5));
  }
  const int ids[] = {pred.id()};
  return tape.record(Matrix<Real>(1, 1, static_cast<Real>(total)), ids, [=](Tape<Real>& tp, int self) {
    Matrix<Real>* gp = tp.grad_target(ids[0]);
    if (gp == nullptr) return;
    const Real g = tp.grad(self)(0, 0);
    auto pv = tp.value(ids[0]).flat();
    auto tv = target.flat();
    auto dst = gp->flat();
    for (std::size_t i = 0; i < dst.size(); ++i) {
      const Real d = pv[i] - tv[i];
      Real local;
      if (std::abs(d) < Real(1))
        local = d;
      else
        local = d > Real(0) ? Real(1) : Real(-1);
      dst[i] += g * local;
    }
  });
}

// ---------------------------------------------------------------------------
// Optimizer

template <typename Real>
AdamState<Real> AdamState<Real>::for_store(const ParamStore<Real>& store, double learning_rate) {
  AdamState state;
  state.learning_rate = learning_rate;
  for (const auto& e : store.entries()) {
    state.first_moment.emplace_back(e.value.rows(), e.value.cols());
    state.second_moment.emplace_back(e.value.rows(), e.value.cols());
  }
  return state;
}

template <typename Real>
void adam_step(ParamStore<Real>& params, AdamState<Real>& state) {
  if (state.first_moment.size() != params.size() || state.second_moment.size() != params.size())
    throw ShapeError("adam_step: optimizer state does not match parameter store");
  state.step += 1;
  const double bias1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bias2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  const Real b1 = static_cast<Real>(state.beta1);
  const Real b2 = static_cast<Real>(state.beta2);
  const Real step_size = static_cast<Real>(state.learning_rate / bias1);
  const Real inv_sqrt_bias2 = static_cast<Real>(1.0 / std::sqrt(bias2));
  const Real eps = static_cast<Real>(state.epsilon);
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto& entry = params.entry(p);
    if (!state.first_moment[p].same_shape(entry.value) || !state.second_moment[p].same_shape(entry.value))
      throw ShapeError("adam_step: moment shape differs from parameter " + entry.name);
    auto w = entry.value.flat();
    auto g = entry.grad.flat();
    auto m = state.first_moment[p].flat();
    auto v = state.second_moment[p].flat();
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = b1 * m[i] + (Real(1) - b1) * g[i];
      v[i] = b2 * v[i] + (Real(1) - b2) * g[i] * g[i];
      w[i] -= step_size * m[i] / (std::sqrt(v[i]) * inv_sqrt_bias2 + eps);
    }
  }
}

template <typename Real>
Matrix<Real> fan_in_uniform(int rows, int cols, int fan_in, double gain, Rng& rng) {
  if (fan_in < 1) throw ConfigError("fan_in must be positive");
  const double bound = std::sqrt(gain / fan_in);
  Matrix<Real> m(rows, cols);
  for (Real& v : m.flat()) v = static_cast<Real>(rng.uniform(-bound, bound));
  return m;
}

// ---------------------------------------------------------------------------
// Instantiations

#define TALNET_INSTANTIATE(R)                                                               \
  template class ParamStore<R>;                                                             \
  template class Var<R>;                                                                    \
  template class Tape<R>;                                                                   \
  template struct AdamState<R>;                                                             \
  template Var<R> conv1d(const Var<R>&, const Var<R>&, const Var<R>&, int);                 \
  template Var<R> maxpool1d(const Var<R>&, int);                                            \
  template Var<R> relu(const Var<R>&);                                                      \
  template Var<R> linear(const Var<R>&, const Var<R>&, const Var<R>&);                      \
  template Var<R> concat_features(std::span<const Var<R>>);                                 \
  template Var<R> concat_features(const Var<R>&, const Var<R>&);                            \
  template Var<R> mean_of(const Var<R>&, const Var<R>&);                                    \
  template Var<R> add(const Var<R>&, const Var<R>&);                                        \
  template Var<R> scale(const Var<R>&, R);                                                  \
  template Var<R> mul(const Var<R>&, const Var<R>&);                                        \
  template Var<R> sum(const Var<R>&);                                                       \
  template Var<R> reshape(const Var<R>&, int, int);                                         \
  template Var<R> gather_rows(const Var<R>&, std::span<const int>);                         \
  template Var<R> softmax_cross_entropy(const Var<R>&, std::span<const int>);               \
  template Var<R> sigmoid_cross_entropy(const Var<R>&, std::span<const int>);               \
  template Var<R> smooth_l1(const Var<R>&, const Matrix<R>&);                               \
  template void adam_step(ParamStore<R>&, AdamState<R>&);                                   \
  template Matrix<R> fan_in_uniform<R>(int, int, int, double, Rng&);

TALNET_INSTANTIATE(float)
TALNET_INSTANTIATE(double)

#undef TALNET_INSTANTIATE

}  // namespace talnet
