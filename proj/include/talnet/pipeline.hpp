#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "talnet/autodiff.hpp"
#include "talnet/classifier_head.hpp"
#include "talnet/metrics.hpp"
#include "talnet/spn.hpp"
#include "talnet/synth_data.hpp"

namespace talnet {

// single: stream A only. early: streams concatenated along channels into one
// network. late: one network per stream, outputs averaged.
enum class FusionMode { single, early, late };

std::string to_string(FusionMode mode);
FusionMode parse_fusion_mode(std::string_view text);

std::string to_string(Precision precision);
Precision parse_precision(std::string_view text);

struct ModelConfig {
  FusionMode mode = FusionMode::late;
  SpnConfig spn;
  SoiConfig soi;
  int feature_dim = 16;  // channels per input stream

  int input_dim() const { return mode == FusionMode::early ? 2 * feature_dim : feature_dim; }
  int num_streams() const { return mode == FusionMode::late ? 2 : 1; }
  void validate() const;

  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

struct TrainConfig {
  double learning_rate = 1e-4;
  double lambda = 1.0;
  int spn_batch = 256;
  double positive_fraction = 0.5;
  int cls_batch = 64;
  double foreground_fraction = 0.25;
  int steps = 0;
  std::uint64_t seed = 0;

  void validate() const;

  // `steps` is left out so a resumed run with a larger budget keeps the
  // same digest.
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

struct InferenceResult {
  std::vector<ScoredSegment> proposals;
  std::vector<Detection> detections;
};

// Parameters of every stream network plus the shared architecture.
template <typename Real>
class Detector {
 public:
  explicit Detector(ModelConfig config);

  const ModelConfig& config() const { return config_; }
  const SegmentProposalNetwork& spn() const { return spn_; }
  const ClassifierHead& head() const { return head_; }

  // Fresh random parameters; stream i draws from mix_seed(seed, i).
  void init_params(std::uint64_t seed);

  std::vector<ParamStore<Real>>& stores() { return stores_; }
  const std::vector<ParamStore<Real>>& stores() const { return stores_; }

  // Network inputs of one video for the configured mode. Stream B is ignored
  // in single mode.
  std::vector<Matrix<Real>> inputs(const FeatureGrid& a, const FeatureGrid& b) const;

  // Records the (fused) SPN on `tape`. `features` holds one tape node per
  // stream network.
  // `StoreVec` is std::vector<ParamStore<Real>>, optionally const; const
  // stores give constant parameter nodes.
  template <typename StoreVec>
  SpnOutput<Real> spn_forward(Tape<Real>& tape, StoreVec& stores,
                              const std::vector<Var<Real>>& features) const;
  // Records the (fused) classifier head for the given proposals.
  template <typename StoreVec>
  HeadOutput<Real> head_forward(Tape<Real>& tape, StoreVec& stores,
                                const std::vector<Var<Real>>& features, std::span<const Segment> proposals) const;

  InferenceResult run(const FeatureGrid& a, const FeatureGrid& b) const;
  InferenceResult run(const VideoSample& video) const { return run(video.stream_a, video.stream_b); }
  std::vector<ScoredSegment> propose(const VideoSample& video) const { return run(video).proposals; }
  std::vector<Detection> detect(const VideoSample& video) const { return run(video).detections; }

 private:
  ModelConfig config_;
  SegmentProposalNetwork spn_;
  ClassifierHead head_;
  std::vector<ParamStore<Real>> stores_;
};

// Per-class detections from head outputs: one candidate per foreground class
// per proposal, scored by its softmax probability, decoded against the
// proposal, clipped, then NMS per class. Ordered by class, then keep order.
template <typename Real>
std::vector<Detection> decode_detections(std::span<const Segment> proposals, const Matrix<Real>& logits,
                                         const Matrix<Real>& offsets, int length, double nms_threshold);

struct StepLosses {
  double total = 0.0;
  double proposal = 0.0;        // SPN classification + lambda * regression
  double classification = 0.0;  // head classification + lambda * regression
  int positives = 0;
  int foreground = 0;
};

template <typename Real>
class Trainer {
 public:
  Trainer(Detector<Real>& detector, TrainConfig config);

  // One joint update on one video. Sampling draws from mix_seed(seed, step).
  StepLosses step(const VideoSample& video);

  // Runs until step_count() reaches config.steps, visiting videos in a fresh
  // shuffled order each epoch.
  void train(const std::vector<VideoSample>& videos,
             const std::function<void(std::int64_t, const StepLosses&)>& on_step = {});

  // Loss terms of one video without updating anything.
  StepLosses evaluate_losses(const VideoSample& video, std::int64_t step_seed) const;

  std::int64_t step_count() const { return step_; }
  void set_step_count(std::int64_t step);
  const TrainConfig& config() const { return config_; }
  TrainConfig& mutable_config() { return config_; }
  std::vector<AdamState<Real>>& optimizer() { return adam_; }
  const std::vector<AdamState<Real>>& optimizer() const { return adam_; }
  Detector<Real>& detector() { return detector_; }

 private:
  template <typename StoreVec>
  StepLosses losses(Tape<Real>& tape, StoreVec& stores, const VideoSample& video, Rng& rng,
                    Var<Real>* total) const;

  Detector<Real>& detector_;
  TrainConfig config_;
  std::vector<AdamState<Real>> adam_;
  std::int64_t step_ = 0;
};

struct EvalReport {
  std::vector<ArAnPoint> ar_an;
  std::vector<std::pair<double, MapResult>> map;  // (tIoU threshold, result)
  std::vector<std::vector<ScoredSegment>> proposals;
  std::vector<std::vector<Detection>> detections;

  double ar_at(int an) const;
  double map_at(double tiou) const;
};

// Proposal and detection metrics of `detector` over `videos`. Throws
// ConfigError on an empty set.
template <typename Real>
EvalReport evaluate_dataset(const Detector<Real>& detector, const std::vector<VideoSample>& videos,
                            const EvalConfig& config);

}  // namespace talnet
