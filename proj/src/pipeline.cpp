#include "talnet/pipeline.hpp"

#include <algorithm>
#include <cmath>

#include "talnet/errors.hpp"

namespace talnet {

namespace {

constexpr std::uint64_t kEpochTag = 0x45504f43ULL;

}  // namespace

std::string to_string(FusionMode mode) {
  switch (mode) {
    case FusionMode::single:
      return "single";
    case FusionMode::early:
      return "early";
    case FusionMode::late:
      return "late";
  }
  return "?";
}

FusionMode parse_fusion_mode(std::string_view text) {
  if (text == "single") return FusionMode::single;
  if (text == "early") return FusionMode::early;
  if (text == "late") return FusionMode::late;
  throw ConfigError("unknown fusion mode '" + std::string(text) + "'");
}

std::string to_string(Precision precision) { return precision == Precision::wide ? "wide" : "standard"; }

Precision parse_precision(std::string_view text) {
  if (text == "standard" || text == "float") return Precision::standard;
  if (text == "wide" || text == "double") return Precision::wide;
  throw ConfigError("unknown precision '" + std::string(text) + "'");
}

void ModelConfig::validate() const {
  spn.validate();
  soi.validate();
  if (feature_dim < 1) throw ConfigError("feature dimension must be positive");
}

nlohmann::json ModelConfig::to_json() const {
  return {
      {"mode", to_string(mode)},
      {"feature_dim", feature_dim},
      {"spn",
       {{"anchor_scales", spn.anchor_scales},
        {"hidden_width", spn.hidden_width},
        {"context", spn.context},
        {"variant", to_string(spn.variant)},
        {"nms_threshold", spn.proposal_nms_threshold},
        {"top_k", spn.proposal_top_k}}},
      {"soi",
       {{"output_bins", soi.output_bins},
        {"context", soi.context},
        {"hidden_width", soi.hidden_width},
        {"num_classes", soi.num_classes}}},
  };
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  try {
    ModelConfig c;
    c.mode = parse_fusion_mode(j.at("mode").get<std::string>());
    c.feature_dim = j.at("feature_dim").get<int>();
    const auto& s = j.at("spn");
    c.spn.anchor_scales = s.at("anchor_scales").get<std::vector<int>>();
    c.spn.hidden_width = s.at("hidden_width").get<int>();
    c.spn.context = s.at("context").get<bool>();
    c.spn.variant = parse_spn_variant(s.at("variant").get<std::string>());
    c.spn.proposal_nms_threshold = s.at("nms_threshold").get<double>();
    c.spn.proposal_top_k = s.at("top_k").get<int>();
    const auto& h = j.at("soi");
    c.soi.output_bins = h.at("output_bins").get<int>();
    c.soi.context = h.at("context").get<bool>();
    c.soi.hidden_width = h.at("hidden_width").get<int>();
    c.soi.num_classes = h.at("num_classes").get<int>();
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("model config: ") + e.what());
  }
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
  if (!(lambda >= 0.0)) throw ConfigError("lambda must be non-negative");
  if (spn_batch < 1 || cls_batch < 1) throw ConfigError("batch sizes must be positive");
  if (!(positive_fraction > 0.0 && positive_fraction <= 1.0)) throw ConfigError("positive fraction must be in (0, 1]");
  if (!(foreground_fraction > 0.0 && foreground_fraction <= 1.0))
    throw ConfigError("foreground fraction must be in (0, 1]");
  if (steps < 0) throw ConfigError("steps must be non-negative");
}

nlohmann::json TrainConfig::to_json() const {
  return {{"learning_rate", learning_rate},
          {"lambda", lambda},
          {"spn_batch", spn_batch},
          {"positive_fraction", positive_fraction},
          {"cls_batch", cls_batch},
          {"foreground_fraction", foreground_fraction},
          {"seed", seed}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  try {
    TrainConfig c;
    c.learning_rate = j.at("learning_rate").get<double>();
    c.lambda = j.at("lambda").get<double>();
    c.spn_batch = j.at("spn_batch").get<int>();
    c.positive_fraction = j.at("positive_fraction").get<double>();
    c.cls_batch = j.at("cls_batch").get<int>();
    c.foreground_fraction = j.at("foreground_fraction").get<double>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("train config: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Detector

template <typename Real>
Detector<Real>::Detector(ModelConfig config)
    : config_(std::move(config)),
      spn_(config_.spn, config_.input_dim()),
      head_(config_.soi, config_.input_dim()),
      stores_(config_.num_streams()) {
  config_.validate();
}

template <typename Real>
void Detector<Real>::init_params(std::uint64_t seed) {
  for (std::size_t i = 0; i < stores_.size(); ++i) {
    stores_[i] = ParamStore<Real>();
    Rng rng(mix_seed(seed, i));
    spn_.init_params(stores_[i], rng);
    head_.init_params(stores_[i], rng);
  }
}

template <typename Real>
std::vector<Matrix<Real>> Detector<Real>::inputs(const FeatureGrid& a, const FeatureGrid& b) const {
  const auto check = [&](const FeatureGrid& g) {
    if (g.dim() != config_.feature_dim) throw ShapeError("feature grid channel count does not match the model");
  };
  check(a);
  if (config_.mode == FusionMode::single) return {a.data.template cast<Real>()};
  check(b);
  if (a.length() != b.length()) throw ShapeError("streams must have the same number of cells");
  if (config_.mode == FusionMode::early) return {concat_features(a, b).data.template cast<Real>()};
  return {a.data.template cast<Real>(), b.data.template cast<Real>()};
}

template <typename Real>
template <typename StoreVec>
SpnOutput<Real> Detector<Real>::spn_forward(Tape<Real>& tape, StoreVec& stores,
                                            const std::vector<Var<Real>>& features) const {
  if (features.size() != stores.size()) throw ShapeError("one input per stream network required");
  SpnOutput<Real> fused = spn_.forward(tape, stores[0], features[0]);
  for (std::size_t i = 1; i < stores.size(); ++i) {
    const SpnOutput<Real> other = spn_.forward(tape, stores[i], features[i]);
    fused.logits = mean_of(fused.logits, other.logits);
    fused.offsets = mean_of(fused.offsets, other.offsets);
  }
  return fused;
}

template <typename Real>
template <typename StoreVec>
HeadOutput<Real> Detector<Real>::head_forward(Tape<Real>& tape, StoreVec& stores,
                                              const std::vector<Var<Real>>& features,
                                              std::span<const Segment> proposals) const {
  if (features.size() != stores.size()) throw ShapeError("one input per stream network required");
  HeadOutput<Real> fused = head_.forward_proposals(tape, stores[0], features[0], proposals);
  for (std::size_t i = 1; i < stores.size(); ++i) {
    const HeadOutput<Real> other = head_.forward_proposals(tape, stores[i], features[i], proposals);
    fused.logits = mean_of(fused.logits, other.logits);
    fused.offsets = mean_of(fused.offsets, other.offsets);
  }
  return fused;
}

template <typename Real>
std::vector<Detection> decode_detections(std::span<const Segment> proposals, const Matrix<Real>& logits,
                                         const Matrix<Real>& offsets, int length, double nms_threshold) {
  const int n = static_cast<int>(proposals.size());
  if (logits.rows() != n || offsets.rows() != n) throw ShapeError("decode_detections: one row per proposal required");
  const int classes = logits.cols() - 1;
  if (classes < 1 || offsets.cols() != 2 * classes) throw ShapeError("decode_detections: malformed head output");
  std::vector<std::vector<Detection>> per_class(classes);
  std::vector<double> prob(classes + 1);
  for (int i = 0; i < n; ++i) {
    double top = -std::numeric_limits<double>::infinity();
    for (int c = 0; c <= classes; ++c) top = std::max(top, static_cast<double>(logits(i, c)));
    double z = 0.0;
    for (int c = 0; c <= classes; ++c) z += prob[c] = std::exp(static_cast<double>(logits(i, c)) - top);
    const Anchor anchor = Anchor::from_segment(proposals[i]);
    for (int c = 1; c <= classes; ++c) {
      const Offsets o{static_cast<double>(offsets(i, 2 * (c - 1))), static_cast<double>(offsets(i, 2 * (c - 1) + 1))};
      const auto clipped = clip_to_bounds(decode_offsets(o, anchor), length);
      if (!clipped) continue;
      per_class[c - 1].push_back({*clipped, c, prob[c] / z});
    }
  }
  std::vector<Detection> out;
  for (const auto& list : per_class) {
    const auto kept = nms(std::span<const Detection>(list), nms_threshold);
    out.insert(out.end(), kept.begin(), kept.end());
  }
  return out;
}

template <typename Real>
InferenceResult Detector<Real>::run(const FeatureGrid& a, const FeatureGrid& b) const {
  std::vector<Matrix<Real>> x = inputs(a, b);
  const int length = x[0].rows();
  Tape<Real> tape;
  std::vector<Var<Real>> features;
  for (auto& m : x) features.push_back(tape.constant(std::move(m)));
  const std::vector<ParamStore<Real>>& stores = stores_;
  InferenceResult result;
  const SpnOutput<Real> spn_out = spn_forward(tape, stores, features);
  result.proposals = generate_proposals(spn_out.logits.value(), spn_out.offsets.value(), config_.spn, length);
  if (result.proposals.empty()) return result;
  std::vector<Segment> segments;
  for (const auto& p : result.proposals) segments.push_back(p.segment);
  const HeadOutput<Real> head_out = head_forward(tape, stores, features, segments);
  result.detections = decode_detections(std::span<const Segment>(segments), head_out.logits.value(),
                                        head_out.offsets.value(), length, config_.spn.proposal_nms_threshold);
  return result;
}

// ---------------------------------------------------------------------------
// Trainer

template <typename Real>
Trainer<Real>::Trainer(Detector<Real>& detector, TrainConfig config) : detector_(detector), config_(config) {
  config_.validate();
  for (const auto& store : detector_.stores()) {
    if (store.size() == 0) throw ConfigError("trainer: detector parameters are not initialised");
    adam_.push_back(AdamState<Real>::for_store(store, config_.learning_rate));
  }
}

template <typename Real>
void Trainer<Real>::set_step_count(std::int64_t step) {
  if (step < 0) throw ConfigError("step count must be non-negative");
  step_ = step;
  for (auto& a : adam_) a.step = step;
}

template <typename Real>
template <typename StoreVec>
StepLosses Trainer<Real>::losses(Tape<Real>& tape, StoreVec& stores, const VideoSample& video, Rng& rng,
                                 Var<Real>* total) const {
  const Detector<Real>& det = detector_;
  std::vector<Var<Real>> features;
  for (auto& m : det.inputs(video.stream_a, video.stream_b)) features.push_back(tape.constant(std::move(m)));
  const int length = features[0].rows();
  const SpnOutput<Real> spn_out = det.spn_forward(tape, stores, features);

  const auto& scales = det.config().spn.anchor_scales;
  const std::vector<Anchor> anchors = make_anchors(length, scales);
  const std::vector<Segment> gts = video.segments();
  const AnchorMatch match = match_anchors(anchors, gts);
  const AnchorBatch anchor_batch =
      sample_anchor_batch(match, anchors, gts, config_.spn_batch, config_.positive_fraction, rng);
  const StageLoss<Real> spn_l = spn_loss(spn_out, anchor_batch, config_.lambda);

  StepLosses out;
  out.positives = anchor_batch.positives();
  out.proposal = static_cast<double>(spn_l.total.value()(0, 0));
  Var<Real> joint = spn_l.total;

  const auto proposals =
      generate_proposals(spn_out.logits.value(), spn_out.offsets.value(), det.config().spn, length);
  std::vector<Segment> segments;
  for (const auto& p : proposals) segments.push_back(p.segment);
  const auto targets = assign_proposal_labels(segments, video.instances);
  if (!targets.empty()) {
    const ProposalBatch batch = sample_proposal_batch(targets, config_.cls_batch, config_.foreground_fraction, rng);
    std::vector<Segment> chosen;
    for (int i : batch.proposal_index) chosen.push_back(segments[i]);
    const HeadOutput<Real> head_out = det.head_forward(tape, stores, features, chosen);
    const StageLoss<Real> cls_l = cls_loss(head_out, batch, config_.lambda);
    out.foreground = batch.foreground();
    out.classification = static_cast<double>(cls_l.total.value()(0, 0));
    joint = add(joint, cls_l.total);
  }
  out.total = static_cast<double>(joint.value()(0, 0));
  if (total != nullptr) *total = joint;
  return out;
}

template <typename Real>
StepLosses Trainer<Real>::step(const VideoSample& video) {
  Rng rng(mix_seed(config_.seed, static_cast<std::uint64_t>(step_)));
  Tape<Real> tape;
  auto& stores = detector_.stores();
  for (auto& s : stores) s.zero_grad();
  Var<Real> total;
  const StepLosses out = losses(tape, stores, video, rng, &total);
  tape.backward(total);
  for (std::size_t i = 0; i < stores.size(); ++i) adam_step(stores[i], adam_[i]);
  ++step_;
  return out;
}

template <typename Real>
StepLosses Trainer<Real>::evaluate_losses(const VideoSample& video, std::int64_t step_seed) const {
  Rng rng(mix_seed(config_.seed, static_cast<std::uint64_t>(step_seed)));
  Tape<Real> tape;
  const std::vector<ParamStore<Real>>& stores = detector_.stores();
  return losses(tape, stores, video, rng, nullptr);
}

template <typename Real>
void Trainer<Real>::train(const std::vector<VideoSample>& videos,
                          const std::function<void(std::int64_t, const StepLosses&)>& on_step) {
  if (videos.empty()) throw ConfigError("training set is empty");
  const auto n = static_cast<std::int64_t>(videos.size());
  std::vector<int> order;
  std::int64_t order_epoch = -1;
  while (step_ < config_.steps) {
    const std::int64_t epoch = step_ / n;
    if (epoch != order_epoch) {
      order.resize(videos.size());
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
      Rng rng(mix_seed(mix_seed(config_.seed, kEpochTag), static_cast<std::uint64_t>(epoch)));
      rng.shuffle(order);
      order_epoch = epoch;
    }
    const std::int64_t current = step_;
    const StepLosses l = step(videos[order[current % n]]);
    if (on_step) on_step(current, l);
  }
}

// ---------------------------------------------------------------------------
// Evaluation

double EvalReport::ar_at(int an) const {
  for (const auto& p : ar_an)
    if (p.an == an) return p.average_recall;
  throw ConfigError("AN " + std::to_string(an) + " was not evaluated");
}

double EvalReport::map_at(double tiou) const {
  for (const auto& [t, m] : map)
    if (std::abs(t - tiou) < 1e-9) return m.mean;
  throw ConfigError("tIoU threshold was not evaluated");
}

template <typename Real>
EvalReport evaluate_dataset(const Detector<Real>& detector, const std::vector<VideoSample>& videos,
                            const EvalConfig& config) {
  if (videos.empty()) throw ConfigError("evaluation set is empty");
  config.validate();
  EvalReport report;
  std::vector<std::vector<Segment>> gt_segments;
  std::vector<std::vector<Annotation>> gt_annotations;
  for (const auto& v : videos) {
    InferenceResult r = detector.run(v);
    report.proposals.push_back(std::move(r.proposals));
    report.detections.push_back(std::move(r.detections));
    gt_segments.push_back(v.segments());
    gt_annotations.push_back(v.instances);
  }
  report.ar_an = ar_an_curve(report.proposals, gt_segments, config);
  for (double t : config.detection_tious) report.map.emplace_back(t, mean_ap(report.detections, gt_annotations, t));
  return report;
}

#define TALNET_INSTANTIATE(R)                                                                                     \
  template class Detector<R>;                                                                                     \
  template class Trainer<R>;                                                                                      \
  template SpnOutput<R> Detector<R>::spn_forward(Tape<R>&, std::vector<ParamStore<R>>&,                           \
                                                 const std::vector<Var<R>>&) const;                               \
  template SpnOutput<R> Detector<R>::spn_forward(Tape<R>&, const std::vector<ParamStore<R>>&,                     \
                                                 const std::vector<Var<R>>&) const;                               \
  template HeadOutput<R> Detector<R>::head_forward(Tape<R>&, std::vector<ParamStore<R>>&,                         \
                                                   const std::vector<Var<R>>&, std::span<const Segment>) const;   \
  template HeadOutput<R> Detector<R>::head_forward(Tape<R>&, const std::vector<ParamStore<R>>&,                   \
                                                   const std::vector<Var<R>>&, std::span<const Segment>) const;   \
  template std::vector<Detection> decode_detections(std::span<const Segment>, const Matrix<R>&, const Matrix<R>&, \
                                                    int, double);                                                 \
  template EvalReport evaluate_dataset(const Detector<R>&, const std::vector<VideoSample>&, const EvalConfig&);

TALNET_INSTANTIATE(float)
TALNET_INSTANTIATE(double)

#undef TALNET_INSTANTIATE

}  // namespace talnet
