#pragma once

#include <span>
#include <vector>

#include "talnet/autodiff.hpp"
#include "talnet/segments.hpp"
#include "talnet/spn.hpp"

namespace talnet {

struct SoiConfig {
  int output_bins = 7;
  bool context = false;
  int hidden_width = 256;
  int num_classes = 1;

  void validate() const;
};

// Pooling extent of a proposal: the proposal itself, or with context the
// proposal widened by half its length on each side; clipped to [0, length).
// Throws ConfigError if the proposal lies entirely outside the grid.
Segment soi_extent(const Segment& proposal, bool context, int length);

// Cells [first, last] whose unit interval overlaps bin `bin` of `extent`.
struct CellRange {
  int first = 0;
  int last = 0;
};
CellRange soi_bin_cells(const Segment& extent, int bins, int bin, int length);

// Max pooling of each proposal's extent into `bins` equal bins. Output row
// p * bins + i holds bin i of proposal p. Gradients go to the first maximal
// cell of each bin.
template <typename Real>
Var<Real> soi_pool(const Var<Real>& features, std::span<const Segment> proposals, int bins, bool context);

// Single-proposal convenience form on a stored feature grid (bins x D).
Matrix<float> soi_pool(const FeatureGrid& features, const Segment& proposal, const SoiConfig& config);

// Class logits (N x (C+1), column 0 background) and per-class offsets
// (N x 2C, columns 2(c-1), 2(c-1)+1 for class c).
template <typename Real>
struct HeadOutput {
  Var<Real> logits;
  Var<Real> offsets;
};

class ClassifierHead {
 public:
  ClassifierHead(SoiConfig config, int input_dim);

  const SoiConfig& config() const { return config_; }
  int input_dim() const { return input_dim_; }

  // Adds every "head.*" parameter to `store`.
  template <typename Real>
  void init_params(ParamStore<Real>& store, Rng& rng) const;

  // `pooled` is (N * bins) x D as produced by soi_pool.
  template <typename Real, typename Store>
  HeadOutput<Real> forward(Tape<Real>& tape, Store& store, const Var<Real>& pooled) const;

  template <typename Real, typename Store>
  HeadOutput<Real> forward_proposals(Tape<Real>& tape, Store& store, const Var<Real>& features,
                                     std::span<const Segment> proposals) const;

 private:
  SoiConfig config_;
  int input_dim_;
};

// Sampled proposals of one classification mini-batch.
struct ProposalBatch {
  std::vector<int> proposal_index;
  std::vector<int> labels;  // 0 background, 1..C foreground
  std::vector<Offsets> targets;

  int foreground() const;
};

// Up to `batch_size` proposals with at most foreground_fraction * batch_size
// foreground, remainder background. Without background proposals the batch
// may be all foreground.
ProposalBatch sample_proposal_batch(std::span<const ProposalTarget> targets, int batch_size,
                                    double foreground_fraction, Rng& rng);

// Mean cross-entropy + lambda * smooth-L1 over the labelled class's offsets of
// foreground rows, divided by the foreground count. Row i of `output` must
// correspond to batch entry i.
template <typename Real>
StageLoss<Real> cls_loss(const HeadOutput<Real>& output, const ProposalBatch& batch, double lambda);

}  // namespace talnet
