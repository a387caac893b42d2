#include "talnet/spn.hpp"

#include <algorithm>
#include <cmath>

namespace talnet {

std::string to_string(SpnVariant variant) {
  switch (variant) {
    case SpnVariant::single:
      return "single";
    case SpnVariant::single_tconv:
      return "single-tconv";
    case SpnVariant::multi_tconv:
      return "multi-tconv";
    case SpnVariant::multi_dilated:
      return "multi-dilated";
  }
  return "unknown";
}

SpnVariant parse_spn_variant(std::string_view text) {
  if (text == "single") return SpnVariant::single;
  if (text == "single-tconv" || text == "single_tconv") return SpnVariant::single_tconv;
  if (text == "multi-tconv" || text == "multi_tconv") return SpnVariant::multi_tconv;
  if (text == "multi-dilated" || text == "multi_dilated") return SpnVariant::multi_dilated;
  throw ConfigError("unknown proposal network variant: " + std::string(text));
}

void SpnConfig::validate() const {
  if (anchor_scales.empty()) throw ConfigError("at least one anchor scale is required");
  for (std::size_t i = 0; i < anchor_scales.size(); ++i) {
    if (anchor_scales[i] < 1) throw ConfigError("anchor scales must be positive");
    if (i > 0 && anchor_scales[i] <= anchor_scales[i - 1]) throw ConfigError("anchor scales must be strictly increasing");
  }
  if (hidden_width < 1) throw ConfigError("hidden width must be positive");
  if (proposal_top_k < 1) throw ConfigError("proposal top-k must be >= 1");
  if (!(proposal_nms_threshold > 0.0 && proposal_nms_threshold <= 1.0))
    throw ConfigError("proposal NMS threshold must be in (0, 1]");
}

template <typename Real>
Matrix<Real> SpnOutput<Real>::scale_logits(int k) const {
  const Matrix<Real>& all = logits.value();
  Matrix<Real> out(all.rows(), 1);
  for (int t = 0; t < all.rows(); ++t) out(t, 0) = all(t, k);
  return out;
}

template <typename Real>
Matrix<Real> SpnOutput<Real>::scale_offsets(int k) const {
  const Matrix<Real>& all = offsets.value();
  Matrix<Real> out(all.rows(), 2);
  for (int t = 0; t < all.rows(); ++t) {
    out(t, 0) = all(t, 2 * k);
    out(t, 1) = all(t, 2 * k + 1);
  }
  return out;
}

SegmentProposalNetwork::SegmentProposalNetwork(SpnConfig config, int input_dim)
    : config_(std::move(config)), input_dim_(input_dim) {
  config_.validate();
  if (input_dim_ < 1) throw ConfigError("proposal network input dimension must be positive");
  switch (config_.variant) {
    case SpnVariant::single:
      towers_.push_back({LayerSpec::conv(1, 1), LayerSpec::conv(1, 1)});
      break;
    case SpnVariant::single_tconv:
      towers_.push_back({LayerSpec::conv(3, 1), LayerSpec::conv(3, 1)});
      break;
    case SpnVariant::multi_tconv:
      for (std::size_t k = 0; k < config_.anchor_scales.size(); ++k)
        towers_.push_back({LayerSpec::conv(3, 1), LayerSpec::conv(3, 1)});
      break;
    case SpnVariant::multi_dilated:
      for (int s : config_.anchor_scales) towers_.push_back(derive_rates(s, config_.context).layers);
      break;
  }
}

bool SegmentProposalNetwork::shared_tower() const {
  return config_.variant == SpnVariant::single || config_.variant == SpnVariant::single_tconv;
}

const std::vector<LayerSpec>& SegmentProposalNetwork::tower_layers(int k) const {
  if (k < 0 || k >= num_scales()) throw ConfigError("scale index out of range");
  return shared_tower() ? towers_.front() : towers_[k];
}

std::string SegmentProposalNetwork::tower_name(int k) const {
  return shared_tower() ? std::string("spn.tower") : "spn.tower" + std::to_string(k);
}

template <typename Real>
void SegmentProposalNetwork::init_params(ParamStore<Real>& store, Rng& rng) const {
  const int hidden = config_.hidden_width;
  store.add("spn.reduce.w", fan_in_uniform<Real>(input_dim_, hidden, input_dim_, 6.0, rng));
  store.add("spn.reduce.b", Matrix<Real>(1, hidden));
  const int n_towers = static_cast<int>(towers_.size());
  for (int k = 0; k < n_towers; ++k) {
    const std::string name = shared_tower() ? std::string("spn.tower") : "spn.tower" + std::to_string(k);
    int conv_index = 0;
    for (const auto& layer : towers_[k]) {
      if (layer.kind != LayerKind::conv) continue;
      const std::string base = name + ".conv" + std::to_string(conv_index++);
      const int fan_in = layer.kernel * hidden;
      store.add(base + ".w", fan_in_uniform<Real>(layer.kernel * hidden, hidden, fan_in, 6.0, rng));
      store.add(base + ".b", Matrix<Real>(1, hidden));
    }
  }
  for (int k = 0; k < num_scales(); ++k) {
    const std::string idx = std::to_string(k);
    store.add("spn.cls" + idx + ".w", fan_in_uniform<Real>(hidden, 1, hidden, 1.0, rng));
    store.add("spn.cls" + idx + ".b", Matrix<Real>(1, 1));
    store.add("spn.reg" + idx + ".w", fan_in_uniform<Real>(hidden, 2, hidden, 1.0, rng));
    store.add("spn.reg" + idx + ".b", Matrix<Real>(1, 2));
  }
}

template <typename Real, typename Store>
Var<Real> SegmentProposalNetwork::reduce(Tape<Real>& tape, Store& store, const Var<Real>& features) const {
  if (features.cols() != input_dim_) throw ShapeError("proposal network: feature dimension mismatch");
  return relu(conv1d(features, tape.parameter(store, "spn.reduce.w"), tape.parameter(store, "spn.reduce.b"), 1));
}

template <typename Real, typename Store>
Var<Real> SegmentProposalNetwork::tower(Tape<Real>& tape, Store& store, const Var<Real>& reduced, int k) const {
  const std::string name = tower_name(k);
  Var<Real> h = reduced;
  int conv_index = 0;
  for (const auto& layer : tower_layers(k)) {
    if (layer.kind == LayerKind::pool) {
      h = maxpool1d(h, layer.kernel);
    } else {
      const std::string base = name + ".conv" + std::to_string(conv_index++);
      h = relu(conv1d(h, tape.parameter(store, base + ".w"), tape.parameter(store, base + ".b"), layer.dilation));
    }
  }
  return h;
}

template <typename Real, typename Store>
SpnOutput<Real> SegmentProposalNetwork::forward(Tape<Real>& tape, Store& store, const Var<Real>& features) const {
  const Var<Real> reduced = reduce(tape, store, features);
  std::vector<Var<Real>> logits;
  std::vector<Var<Real>> offsets;
  Var<Real> shared;
  if (shared_tower()) shared = tower(tape, store, reduced, 0);
  for (int k = 0; k < num_scales(); ++k) {
    const Var<Real> h = shared_tower() ? shared : tower(tape, store, reduced, k);
    const std::string idx = std::to_string(k);
    logits.push_back(
        conv1d(h, tape.parameter(store, "spn.cls" + idx + ".w"), tape.parameter(store, "spn.cls" + idx + ".b"), 1));
    offsets.push_back(
        conv1d(h, tape.parameter(store, "spn.reg" + idx + ".w"), tape.parameter(store, "spn.reg" + idx + ".b"), 1));
  }
  return {concat_features<Real>(std::span<const Var<Real>>(logits)),
          concat_features<Real>(std::span<const Var<Real>>(offsets))};
}

template <typename Real, typename Store>
Var<Real> SegmentProposalNetwork::scale_logits(Tape<Real>& tape, Store& store, const Var<Real>& features,
                                               int k) const {
  const Var<Real> h = tower(tape, store, reduce(tape, store, features), k);
  const std::string idx = std::to_string(k);
  return conv1d(h, tape.parameter(store, "spn.cls" + idx + ".w"), tape.parameter(store, "spn.cls" + idx + ".b"), 1);
}

namespace {

double sigmoid(double z) { return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z)); }

}  // namespace

template <typename Real>
std::vector<ScoredSegment> generate_proposals(const Matrix<Real>& logits, const Matrix<Real>& offsets,
                                              const SpnConfig& config, int length) {
  const int scales = static_cast<int>(config.anchor_scales.size());
  if (logits.rows() != length || logits.cols() != scales || offsets.rows() != length || offsets.cols() != 2 * scales)
    throw ShapeError("generate_proposals: prediction grids do not match T x K");
  std::vector<Segment> segments;
  std::vector<double> scores;
  segments.reserve(static_cast<std::size_t>(length) * scales);
  scores.reserve(segments.capacity());
  for (int t = 0; t < length; ++t) {
    for (int k = 0; k < scales; ++k) {
      const Anchor anchor{t + 0.5, static_cast<double>(config.anchor_scales[k]), k};
      const Offsets off{static_cast<double>(offsets(t, 2 * k)), static_cast<double>(offsets(t, 2 * k + 1))};
      const auto clipped = clip_to_bounds(decode_offsets(off, anchor), length);
      if (!clipped) continue;
      segments.push_back(*clipped);
      scores.push_back(sigmoid(static_cast<double>(logits(t, k))));
    }
  }
  std::vector<ScoredSegment> out;
  const auto kept = nms_indices(segments, scores, config.proposal_nms_threshold);
  for (std::size_t i = 0; i < kept.size() && static_cast<int>(out.size()) < config.proposal_top_k; ++i)
    out.push_back({segments[kept[i]], scores[kept[i]]});
  return out;
}

int AnchorBatch::positives() const { return static_cast<int>(std::count(labels.begin(), labels.end(), 1)); }

AnchorBatch sample_anchor_batch(const AnchorMatch& match, std::span<const Anchor> anchors,
                                std::span<const Segment> gts, int batch_size, double positive_fraction, Rng& rng) {
  if (batch_size < 1) throw ConfigError("anchor batch size must be positive");
  if (!(positive_fraction > 0.0 && positive_fraction <= 1.0)) throw ConfigError("positive fraction must be in (0, 1]");
  std::vector<int> positives;
  std::vector<int> negatives;
  for (std::size_t a = 0; a < match.labels.size(); ++a) {
    if (match.labels[a] == AnchorLabel::positive) positives.push_back(static_cast<int>(a));
    if (match.labels[a] == AnchorLabel::negative) negatives.push_back(static_cast<int>(a));
  }
  const auto pos_cap = static_cast<std::size_t>(std::floor(positive_fraction * batch_size));
  std::size_t n_pos = std::min(positives.size(), pos_cap);
  if (negatives.empty()) n_pos = std::min(positives.size(), static_cast<std::size_t>(batch_size));
  const std::size_t n_neg = std::min(negatives.size(), static_cast<std::size_t>(batch_size) - n_pos);

  std::vector<int> picked_pos = rng.sample(positives, n_pos);
  std::vector<int> picked_neg = rng.sample(negatives, n_neg);
  std::sort(picked_pos.begin(), picked_pos.end());
  std::sort(picked_neg.begin(), picked_neg.end());

  AnchorBatch batch;
  for (int a : picked_pos) {
    batch.anchor_index.push_back(a);
    batch.labels.push_back(1);
    batch.targets.push_back(encode_offsets(gts[match.matched_gt[a]], anchors[a]));
  }
  for (int a : picked_neg) {
    batch.anchor_index.push_back(a);
    batch.labels.push_back(0);
    batch.targets.push_back({});
  }
  return batch;
}

template <typename Real>
StageLoss<Real> spn_loss(const SpnOutput<Real>& output, const AnchorBatch& batch, double lambda) {
  if (batch.anchor_index.empty()) throw ConfigError("spn_loss: empty anchor batch");
  const int cells = output.length();
  const int scales = output.num_scales();
  const Var<Real> flat_logits = reshape(output.logits, cells * scales, 1);
  const Var<Real> cls = sigmoid_cross_entropy(gather_rows(flat_logits, std::span<const int>(batch.anchor_index)),
                                              std::span<const int>(batch.labels));

  std::vector<int> pos_rows;
  std::vector<Real> pos_targets;
  for (std::size_t i = 0; i < batch.labels.size(); ++i) {
    if (batch.labels[i] != 1) continue;
    pos_rows.push_back(batch.anchor_index[i]);
    pos_targets.push_back(static_cast<Real>(batch.targets[i].center));
    pos_targets.push_back(static_cast<Real>(batch.targets[i].length));
  }
  Var<Real> reg;
  if (pos_rows.empty()) {
    reg = output.logits.tape().constant(Matrix<Real>(1, 1));
  } else {
    const Var<Real> flat_offsets = reshape(output.offsets, cells * scales, 2);
    const int n = static_cast<int>(pos_rows.size());
    const Var<Real> picked = gather_rows(flat_offsets, std::span<const int>(pos_rows));
    reg = scale(smooth_l1(picked, Matrix<Real>(n, 2, std::move(pos_targets))), Real(1) / static_cast<Real>(n));
  }
  return {add(cls, scale(reg, static_cast<Real>(lambda))), cls, reg};
}

#define TALNET_INSTANTIATE(R)                                                                                    \
  template struct SpnOutput<R>;                                                                                  \
  template void SegmentProposalNetwork::init_params(ParamStore<R>&, Rng&) const;                                 \
  template SpnOutput<R> SegmentProposalNetwork::forward(Tape<R>&, ParamStore<R>&, const Var<R>&) const;          \
  template SpnOutput<R> SegmentProposalNetwork::forward(Tape<R>&, const ParamStore<R>&, const Var<R>&) const;    \
  template Var<R> SegmentProposalNetwork::scale_logits(Tape<R>&, ParamStore<R>&, const Var<R>&, int) const;      \
  template Var<R> SegmentProposalNetwork::scale_logits(Tape<R>&, const ParamStore<R>&, const Var<R>&, int) const; \
  template std::vector<ScoredSegment> generate_proposals(const Matrix<R>&, const Matrix<R>&, const SpnConfig&,   \
                                                         int);                                                   \
  template StageLoss<R> spn_loss(const SpnOutput<R>&, const AnchorBatch&, double);

TALNET_INSTANTIATE(float)
TALNET_INSTANTIATE(double)

#undef TALNET_INSTANTIATE

}  // namespace talnet
