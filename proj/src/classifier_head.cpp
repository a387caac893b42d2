#include "talnet/classifier_head.hpp"

#include <algorithm>
#include <cmath>

namespace talnet {

void SoiConfig::validate() const {
  if (output_bins < 1) throw ConfigError("SoI pooling needs at least one bin");
  if (hidden_width < 1) throw ConfigError("hidden width must be positive");
  if (num_classes < 1) throw ConfigError("at least one action class is required");
}

Segment soi_extent(const Segment& proposal, bool context, int length) {
  if (!proposal.valid()) throw ConfigError("SoI pooling: invalid proposal segment");
  Segment extent = proposal;
  if (context) {
    const double half = 0.5 * proposal.length();
    extent = {proposal.start - half, proposal.end + half};
  }
  const auto clipped = clip_to_bounds(extent, length);
  if (!clipped) throw ConfigError("SoI pooling: proposal lies outside the feature grid");
  return *clipped;
}

CellRange soi_bin_cells(const Segment& extent, int bins, int bin, int length) {
  const double span = extent.length();
  const double lo = extent.start + span * bin / bins;
  const double hi = extent.start + span * (bin + 1) / bins;
  int first = static_cast<int>(std::floor(lo));
  int last = static_cast<int>(std::ceil(hi)) - 1;
  first = std::clamp(first, 0, length - 1);
  last = std::clamp(last, first, length - 1);
  return {first, last};
}

template <typename Real>
Var<Real> soi_pool(const Var<Real>& features, std::span<const Segment> proposals, int bins, bool context) {
  if (bins < 1) throw ConfigError("SoI pooling needs at least one bin");
  const Matrix<Real>& x = features.value();
  const int length = x.rows();
  const int dim = x.cols();
  const int rows = static_cast<int>(proposals.size()) * bins;
  Matrix<Real> y(rows, dim);
  std::vector<int> argmax(static_cast<std::size_t>(rows) * dim);
  Tape<Real>& tape = features.tape();
  for (std::size_t p = 0; p < proposals.size(); ++p) {
    const Segment extent = soi_extent(proposals[p], context, length);
    for (int b = 0; b < bins; ++b) {
      const CellRange cells = soi_bin_cells(extent, bins, b, length);
      const int r = static_cast<int>(p) * bins + b;
      for (int d = 0; d < dim; ++d) {
        int best = cells.first;
        Real best_v = x(best, d);
        Real second = -std::numeric_limits<Real>::infinity();
        for (int j = cells.first + 1; j <= cells.last; ++j) {
          const Real v = x(j, d);
          if (v > best_v) {
            second = best_v;
            best_v = v;
            best = j;
          } else if (v > second) {
            second = v;
          }
        }
        y(r, d) = best_v;
        argmax[static_cast<std::size_t>(r) * dim + d] = best;
        if (cells.last > cells.first && !(best_v == Real(0) && second == Real(0)))
          tape.note_margin(static_cast<double>(best_v - second));
      }
    }
  }
  const int ids[] = {features.id()};
  return tape.record(std::move(y), ids, [=, argmax = std::move(argmax)](Tape<Real>& tp, int self) {
    Matrix<Real>* gx = tp.grad_target(ids[0]);
    if (gx == nullptr) return;
    const Matrix<Real>& g = tp.grad(self);
    for (int r = 0; r < rows; ++r)
      for (int d = 0; d < dim; ++d) (*gx)(argmax[static_cast<std::size_t>(r) * dim + d], d) += g(r, d);
  });
}

Matrix<float> soi_pool(const FeatureGrid& features, const Segment& proposal, const SoiConfig& config) {
  Tape<float> tape;
  const Var<float> x = tape.constant(features.data);
  const Segment one[] = {proposal};
  return soi_pool(x, std::span<const Segment>(one), config.output_bins, config.context).value();
}

ClassifierHead::ClassifierHead(SoiConfig config, int input_dim) : config_(config), input_dim_(input_dim) {
  config_.validate();
  if (input_dim_ < 1) throw ConfigError("classifier input dimension must be positive");
}

template <typename Real>
void ClassifierHead::init_params(ParamStore<Real>& store, Rng& rng) const {
  const int hidden = config_.hidden_width;
  const int flat = config_.output_bins * hidden;
  const int classes = config_.num_classes;
  store.add("head.reduce.w", fan_in_uniform<Real>(input_dim_, hidden, input_dim_, 6.0, rng));
  store.add("head.reduce.b", Matrix<Real>(1, hidden));
  store.add("head.fc.w", fan_in_uniform<Real>(flat, hidden, flat, 6.0, rng));
  store.add("head.fc.b", Matrix<Real>(1, hidden));
  store.add("head.cls.w", fan_in_uniform<Real>(hidden, classes + 1, hidden, 1.0, rng));
  store.add("head.cls.b", Matrix<Real>(1, classes + 1));
  store.add("head.reg.w", fan_in_uniform<Real>(hidden, 2 * classes, hidden, 1.0, rng));
  store.add("head.reg.b", Matrix<Real>(1, 2 * classes));
}

template <typename Real, typename Store>
HeadOutput<Real> ClassifierHead::forward(Tape<Real>& tape, Store& store, const Var<Real>& pooled) const {
  const int bins = config_.output_bins;
  if (pooled.cols() != input_dim_ || pooled.rows() % bins != 0)
    throw ShapeError("classifier head: pooled features do not match (N * bins) x D");
  const int n = pooled.rows() / bins;
  const Var<Real> reduced =
      relu(linear(pooled, tape.parameter(store, "head.reduce.w"), tape.parameter(store, "head.reduce.b")));
  const Var<Real> flat = reshape(reduced, n, bins * config_.hidden_width);
  const Var<Real> hidden =
      relu(linear(flat, tape.parameter(store, "head.fc.w"), tape.parameter(store, "head.fc.b")));
  return {linear(hidden, tape.parameter(store, "head.cls.w"), tape.parameter(store, "head.cls.b")),
          linear(hidden, tape.parameter(store, "head.reg.w"), tape.parameter(store, "head.reg.b"))};
}

template <typename Real, typename Store>
HeadOutput<Real> ClassifierHead::forward_proposals(Tape<Real>& tape, Store& store, const Var<Real>& features,
                                                   std::span<const Segment> proposals) const {
  return forward(tape, store, soi_pool(features, proposals, config_.output_bins, config_.context));
}

int ProposalBatch::foreground() const {
  return static_cast<int>(std::count_if(labels.begin(), labels.end(), [](int l) { return l > 0; }));
}

ProposalBatch sample_proposal_batch(std::span<const ProposalTarget> targets, int batch_size,
                                    double foreground_fraction, Rng& rng) {
  if (batch_size < 1) throw ConfigError("proposal batch size must be positive");
  if (!(foreground_fraction > 0.0 && foreground_fraction <= 1.0))
    throw ConfigError("foreground fraction must be in (0, 1]");
  std::vector<int> fg;
  std::vector<int> bg;
  for (std::size_t i = 0; i < targets.size(); ++i) (targets[i].label > 0 ? fg : bg).push_back(static_cast<int>(i));
  const auto fg_cap = static_cast<std::size_t>(std::floor(foreground_fraction * batch_size));
  std::size_t n_fg = std::min(fg.size(), fg_cap);
  if (bg.empty()) n_fg = std::min(fg.size(), static_cast<std::size_t>(batch_size));
  const std::size_t n_bg = std::min(bg.size(), static_cast<std::size_t>(batch_size) - n_fg);
  std::vector<int> picked = rng.sample(fg, n_fg);
  std::vector<int> picked_bg = rng.sample(bg, n_bg);
  picked.insert(picked.end(), picked_bg.begin(), picked_bg.end());
  std::sort(picked.begin(), picked.end());

  ProposalBatch batch;
  for (int i : picked) {
    batch.proposal_index.push_back(i);
    batch.labels.push_back(targets[i].label);
    batch.targets.push_back(targets[i].offsets);
  }
  return batch;
}

template <typename Real>
StageLoss<Real> cls_loss(const HeadOutput<Real>& output, const ProposalBatch& batch, double lambda) {
  const int n = static_cast<int>(batch.labels.size());
  if (n == 0) throw ConfigError("cls_loss: empty proposal batch");
  if (output.logits.rows() != n) throw ShapeError("cls_loss: one head output row per batch entry required");
  const int classes = output.logits.cols() - 1;
  if (output.offsets.cols() != 2 * classes) throw ShapeError("cls_loss: offsets must be N x 2C");
  for (int label : batch.labels)
    if (label < 0 || label > classes) throw ConfigError("cls_loss: label out of range");

  const Var<Real> ce = softmax_cross_entropy(output.logits, std::span<const int>(batch.labels));
  std::vector<int> rows;
  std::vector<Real> targets;
  for (int i = 0; i < n; ++i) {
    if (batch.labels[i] < 1) continue;
    rows.push_back(i * classes + batch.labels[i] - 1);
    targets.push_back(static_cast<Real>(batch.targets[i].center));
    targets.push_back(static_cast<Real>(batch.targets[i].length));
  }
  Var<Real> reg;
  if (rows.empty()) {
    reg = output.logits.tape().constant(Matrix<Real>(1, 1));
  } else {
    const int fg = static_cast<int>(rows.size());
    const Var<Real> picked = gather_rows(reshape(output.offsets, n * classes, 2), std::span<const int>(rows));
    reg = scale(smooth_l1(picked, Matrix<Real>(fg, 2, std::move(targets))), Real(1) / static_cast<Real>(fg));
  }
  return {add(ce, scale(reg, static_cast<Real>(lambda))), ce, reg};
}

#define TALNET_INSTANTIATE(R)                                                                                   \
  template Var<R> soi_pool(const Var<R>&, std::span<const Segment>, int, bool);                                 \
  template void ClassifierHead::init_params(ParamStore<R>&, Rng&) const;                                        \
  template HeadOutput<R> ClassifierHead::forward(Tape<R>&, ParamStore<R>&, const Var<R>&) const;                \
  template HeadOutput<R> ClassifierHead::forward(Tape<R>&, const ParamStore<R>&, const Var<R>&) const;          \
  template HeadOutput<R> ClassifierHead::forward_proposals(Tape<R>&, ParamStore<R>&, const Var<R>&,             \
                                                           std::span<const Segment>) const;                     \
  template HeadOutput<R> ClassifierHead::forward_proposals(Tape<R>&, const ParamStore<R>&, const Var<R>&,       \
                                                           std::span<const Segment>) const;                     \
  template StageLoss<R> cls_loss(const HeadOutput<R>&, const ProposalBatch&, double);

TALNET_INSTANTIATE(float)
TALNET_INSTANTIATE(double)

#undef TALNET_INSTANTIATE

}  // namespace talnet
