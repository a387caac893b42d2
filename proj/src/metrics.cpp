#include "talnet/metrics.hpp"

#include <algorithm>
#include <numeric>
#include <set>

#include "talnet/errors.hpp"

namespace talnet {

std::vector<double> EvalConfig::default_proposal_tious() {
  std::vector<double> out;
  for (int i = 0; i <= 10; ++i) out.push_back((50 + 5 * i) / 100.0);
  return out;
}

std::vector<double> EvalConfig::default_detection_tious() {
  std::vector<double> out;
  for (int i = 1; i <= 9; ++i) out.push_back(i / 10.0);
  return out;
}

void EvalConfig::validate() const {
  for (double t : proposal_tious)
    if (!(t > 0.0 && t <= 1.0)) throw ConfigError("tIoU thresholds must be in (0, 1]");
  for (double t : detection_tious)
    if (!(t > 0.0 && t <= 1.0)) throw ConfigError("tIoU thresholds must be in (0, 1]");
  for (int an : an_grid)
    if (an < 1) throw ConfigError("AN values must be positive");
}

namespace {

// Greedy rank-order matching within one video; returns the number of gts hit.
int match_video(std::span<const ScoredSegment> ranked, std::span<const Segment> gts, double threshold) {
  std::vector<bool> used(gts.size(), false);
  int hits = 0;
  for (const auto& p : ranked) {
    int best = -1;
    double best_iou = -1.0;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (used[g]) continue;
      const double overlap = tiou(p.segment, gts[g]);
      if (overlap > best_iou) {
        best_iou = overlap;
        best = static_cast<int>(g);
      }
    }
    if (best >= 0 && best_iou >= threshold) {
      used[best] = true;
      ++hits;
    }
  }
  return hits;
}

std::vector<ScoredSegment> top_ranked(const std::vector<ScoredSegment>& proposals, int an) {
  std::vector<ScoredSegment> ranked = proposals;
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const ScoredSegment& a, const ScoredSegment& b) { return a.score > b.score; });
  if (static_cast<int>(ranked.size()) > an) ranked.resize(an);
  return ranked;
}

}  // namespace

double recall(std::span<const std::vector<ScoredSegment>> proposals, std::span<const std::vector<Segment>> gts,
              double tiou_threshold, int an) {
  if (proposals.size() != gts.size()) throw ConfigError("recall: one proposal list per video required");
  if (an < 1) throw ConfigError("recall: AN must be positive");
  std::size_t total = 0;
  for (const auto& g : gts) total += g.size();
  if (total == 0) throw ConfigError("recall: no ground-truth segments");
  long hits = 0;
  for (std::size_t v = 0; v < gts.size(); ++v) hits += match_video(top_ranked(proposals[v], an), gts[v], tiou_threshold);
  return static_cast<double>(hits) / static_cast<double>(total);
}

double average_recall(std::span<const std::vector<ScoredSegment>> proposals,
                      std::span<const std::vector<Segment>> gts, int an, std::span<const double> tious) {
  if (tious.empty()) throw ConfigError("average_recall: no tIoU thresholds");
  double acc = 0.0;
  for (double t : tious) acc += recall(proposals, gts, t, an);
  return acc / static_cast<double>(tious.size());
}

std::vector<ArAnPoint> ar_an_curve(std::span<const std::vector<ScoredSegment>> proposals,
                                   std::span<const std::vector<Segment>> gts, const EvalConfig& config) {
  config.validate();
  std::vector<ArAnPoint> curve;
  for (int an : config.an_grid) {
    ArAnPoint point;
    point.an = an;
    double acc = 0.0;
    for (double t : config.proposal_tious) {
      point.recalls.push_back(recall(proposals, gts, t, an));
      acc += point.recalls.back();
    }
    point.average_recall = acc / static_cast<double>(config.proposal_tious.size());
    curve.push_back(std::move(point));
  }
  return curve;
}

double interpolated_ap(const std::vector<bool>& is_true_positive, int positives) {
  if (positives <= 0) throw ConfigError("interpolated_ap: no positives");
  const std::size_t n = is_true_positive.size();
  std::vector<double> precision(n);
  std::vector<double> rec(n);
  int tp = 0;
  for (std::size_t i = 0; i < n; ++i) {
    tp += is_true_positive[i] ? 1 : 0;
    precision[i] = static_cast<double>(tp) / static_cast<double>(i + 1);
    rec[i] = static_cast<double>(tp) / positives;
  }
  // Envelope: running max of precision from the right.
  for (std::size_t i = n; i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
  double ap = 0.0;
  double prev_recall = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (rec[i] > prev_recall) {
      ap += (rec[i] - prev_recall) * precision[i];
      prev_recall = rec[i];
    }
  }
  return ap;
}

std::optional<double> average_precision(std::span<const std::vector<Detection>> detections,
                                        std::span<const std::vector<Annotation>> gts, int label,
                                        double tiou_threshold) {
  if (detections.size() != gts.size()) throw ConfigError("average_precision: one detection list per video required");
  std::vector<std::vector<Segment>> class_gts(gts.size());
  int positives = 0;
  for (std::size_t v = 0; v < gts.size(); ++v)
    for (const auto& a : gts[v])
      if (a.label == label) {
        class_gts[v].push_back(a.segment);
        ++positives;
      }
  if (positives == 0) return std::nullopt;

  struct Ranked {
    std::size_t video;
    Segment segment;
    double score;
  };
  std::vector<Ranked> ranked;
  for (std::size_t v = 0; v < detections.size(); ++v)
    for (const auto& d : detections[v])
      if (d.label == label) ranked.push_back({v, d.segment, d.score});
  std::stable_sort(ranked.begin(), ranked.end(), [](const Ranked& a, const Ranked& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.video != b.video) return a.video < b.video;
    return a.segment.start < b.segment.start;
  });

  std::vector<std::vector<bool>> used(gts.size());
  for (std::size_t v = 0; v < gts.size(); ++v) used[v].assign(class_gts[v].size(), false);
  std::vector<bool> flags;
  flags.reserve(ranked.size());
  for (const auto& r : ranked) {
    const auto& cands = class_gts[r.video];
    int best = -1;
    double best_iou = -1.0;
    for (std::size_t g = 0; g < cands.size(); ++g) {
      if (used[r.video][g]) continue;
      const double overlap = tiou(r.segment, cands[g]);
      if (overlap > best_iou) {
        best_iou = overlap;
        best = static_cast<int>(g);
      }
    }
    const bool hit = best >= 0 && best_iou >= tiou_threshold;
    if (hit) used[r.video][best] = true;
    flags.push_back(hit);
  }
  return interpolated_ap(flags, positives);
}

MapResult mean_ap(std::span<const std::vector<Detection>> detections, std::span<const std::vector<Annotation>> gts,
                  double tiou_threshold) {
  std::set<int> labels;
  for (const auto& v : gts)
    for (const auto& a : v) labels.insert(a.label);
  MapResult result;
  for (int label : labels) {
    if (auto ap = average_precision(detections, gts, label, tiou_threshold)) result.per_class[label] = *ap;
  }
  if (!result.per_class.empty()) {
    double acc = 0.0;
    for (const auto& [label, ap] : result.per_class) acc += ap;
    result.mean = acc / static_cast<double>(result.per_class.size());
  }
  return result;
}

}  // namespace talnet
