#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "talnet/autodiff.hpp"
#include "talnet/receptive_field.hpp"
#include "talnet/segments.hpp"

namespace talnet {

// Receptive-field ablations:
//   single         one shared tower of kernel-1 layers (centre cell only)
//   single_tconv   one shared tower of two kernel-3 convolutions
//   multi_tconv    one tower per scale, two kernel-3 convolutions each
//   multi_dilated  one tower per scale with rates from derive_rates()
enum class SpnVariant { single, single_tconv, multi_tconv, multi_dilated };

std::string to_string(SpnVariant variant);
// Accepts the CLI spellings (single, single-tconv, multi-tconv, multi-dilated).
SpnVariant parse_spn_variant(std::string_view text);

struct SpnConfig {
  std::vector<int> anchor_scales{1, 2, 3, 4, 5, 6, 8, 11, 16};
  int hidden_width = 256;
  bool context = false;
  SpnVariant variant = SpnVariant::multi_dilated;
  double proposal_nms_threshold = 0.7;
  int proposal_top_k = 300;

  void validate() const;
};

// Objectness logits (T x K) and offsets (T x 2K, columns 2k and 2k+1 for
// scale k) as tape nodes.
template <typename Real>
struct SpnOutput {
  Var<Real> logits;
  Var<Real> offsets;

  int length() const { return logits.rows(); }
  int num_scales() const { return logits.cols(); }
  // T x 1 logits / T x 2 offsets of one scale.
  Matrix<Real> scale_logits(int k) const;
  Matrix<Real> scale_offsets(int k) const;
};

// Multi-task loss pieces; total = classification + lambda * regression.
template <typename Real>
struct StageLoss {
  Var<Real> total;
  Var<Real> classification;
  Var<Real> regression;
};

class SegmentProposalNetwork {
 public:
  SegmentProposalNetwork(SpnConfig config, int input_dim);

  const SpnConfig& config() const { return config_; }
  int input_dim() const { return input_dim_; }
  int num_scales() const { return static_cast<int>(config_.anchor_scales.size()); }
  bool shared_tower() const;

  // Layers of the tower serving scale k, excluding the kernel-1 reduction.
  const std::vector<LayerSpec>& tower_layers(int k) const;
  int receptive_field(int k) const { return rf_extent(tower_layers(k)); }

  // Adds every "spn.*" parameter to `store`.
  template <typename Real>
  void init_params(ParamStore<Real>& store, Rng& rng) const;

  template <typename Real, typename Store>
  SpnOutput<Real> forward(Tape<Real>& tape, Store& store, const Var<Real>& features) const;

  // Objectness logits of scale k only (T x 1); the receptive-field probe
  // differentiates this.
  template <typename Real, typename Store>
  Var<Real> scale_logits(Tape<Real>& tape, Store& store, const Var<Real>& features, int k) const;

 private:
  template <typename Real, typename Store>
  Var<Real> reduce(Tape<Real>& tape, Store& store, const Var<Real>& features) const;
  template <typename Real, typename Store>
  Var<Real> tower(Tape<Real>& tape, Store& store, const Var<Real>& reduced, int k) const;
  std::string tower_name(int k) const;

  SpnConfig config_;
  int input_dim_;
  std::vector<std::vector<LayerSpec>> towers_;
};

// Scores, decodes, clips, suppresses and truncates the anchor predictions of
// one video. `logits` is T x K and `offsets` T x 2K.
template <typename Real>
std::vector<ScoredSegment> generate_proposals(const Matrix<Real>& logits, const Matrix<Real>& offsets,
                                              const SpnConfig& config, int length);

// Sampled anchors of one mini-batch; targets are set for positives only.
struct AnchorBatch {
  std::vector<int> anchor_index;
  std::vector<int> labels;  // 1 positive, 0 negative
  std::vector<Offsets> targets;

  int positives() const;
};

// Up to `batch_size` anchors with at most positive_fraction * batch_size
// positives, the rest negatives; ignored anchors never enter. When no
// negative exists all positives (up to batch_size) are used.
AnchorBatch sample_anchor_batch(const AnchorMatch& match, std::span<const Anchor> anchors,
                                std::span<const Segment> gts, int batch_size, double positive_fraction, Rng& rng);

// Mean binary cross-entropy over the batch + lambda * smooth-L1 summed over
// positive offsets and divided by the number of positives.
template <typename Real>
StageLoss<Real> spn_loss(const SpnOutput<Real>& output, const AnchorBatch& batch, double lambda);

}  // namespace talnet
