#include "talnet/segments.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "talnet/errors.hpp"

namespace talnet {

bool Segment::valid() const { return std::isfinite(start) && std::isfinite(end) && end > start; }

double tiou(const Segment& a, const Segment& b) {
  const double inter = std::min(a.end, b.end) - std::max(a.start, b.start);
  if (inter <= 0.0) return 0.0;
  const double uni = std::max(a.end, b.end) - std::min(a.start, b.start);
  return inter / uni;
}

Offsets encode_offsets(const Segment& gt, const Anchor& anchor) {
  return {10.0 * (gt.center() - anchor.center) / anchor.length, 5.0 * std::log(gt.length() / anchor.length)};
}

Segment decode_offsets(const Offsets& offsets, const Anchor& anchor) {
  const double c = anchor.center + offsets.center * anchor.length / 10.0;
  const double l = anchor.length * std::exp(offsets.length / 5.0);
  return {c - 0.5 * l, c + 0.5 * l};
}

std::optional<Segment> clip_to_bounds(const Segment& segment, int length) {
  if (length <= 0) throw ConfigError("clip_to_bounds: length must be positive");
  const Segment clipped{std::max(segment.start, 0.0), std::min(segment.end, static_cast<double>(length))};
  if (!(clipped.end > clipped.start)) return std::nullopt;
  return clipped;
}

std::vector<Anchor> make_anchors(int length, std::span<const int> scales) {
  std::vector<Anchor> anchors;
  anchors.reserve(static_cast<std::size_t>(length) * scales.size());
  for (int t = 0; t < length; ++t)
    for (std::size_t k = 0; k < scales.size(); ++k)
      anchors.push_back({t + 0.5, static_cast<double>(scales[k]), static_cast<int>(k)});
  return anchors;
}

std::vector<std::size_t> nms_indices(std::span<const Segment> segments, std::span<const double> scores,
                                     double threshold) {
  if (segments.size() != scores.size()) throw ConfigError("nms: one score per segment required");
  if (!(threshold > 0.0 && threshold <= 1.0)) throw ConfigError("nms: threshold must be in (0, 1]");
  std::vector<std::size_t> order(segments.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::vector<std::size_t> kept;
  for (std::size_t idx : order) {
    bool suppressed = false;
    for (std::size_t k : kept) {
      if (tiou(segments[idx], segments[k]) > threshold) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(idx);
  }
  return kept;
}

namespace {

template <typename Item>
std::vector<Item> nms_items(std::span<const Item> items, double threshold) {
  std::vector<Segment> segments;
  std::vector<double> scores;
  segments.reserve(items.size());
  scores.reserve(items.size());
  for (const auto& item : items) {
    segments.push_back(item.segment);
    scores.push_back(item.score);
  }
  std::vector<Item> out;
  for (std::size_t idx : nms_indices(segments, scores, threshold)) out.push_back(items[idx]);
  return out;
}

}  // namespace

std::vector<ScoredSegment> nms(std::span<const ScoredSegment> items, double threshold) {
  return nms_items(items, threshold);
}

std::vector<Detection> nms(std::span<const Detection> items, double threshold) { return nms_items(items, threshold); }

AnchorMatch match_anchors(std::span<const Anchor> anchors, std::span<const Segment> gts,
                          const AnchorMatchThresholds& thresholds) {
  AnchorMatch match;
  match.labels.assign(anchors.size(), AnchorLabel::negative);
  match.matched_gt.assign(anchors.size(), -1);
  std::vector<double> best_for_gt(gts.size(), -1.0);
  std::vector<int> best_anchor_for_gt(gts.size(), -1);

  for (std::size_t a = 0; a < anchors.size(); ++a) {
    const Segment seg = anchors[a].segment();
    double best = 0.0;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      const double overlap = tiou(seg, gts[g]);
      if (overlap > best) {
        best = overlap;
        match.matched_gt[a] = static_cast<int>(g);
      }
      if (overlap > best_for_gt[g]) {
        best_for_gt[g] = overlap;
        best_anchor_for_gt[g] = static_cast<int>(a);
      }
    }
    if (best > thresholds.positive)
      match.labels[a] = AnchorLabel::positive;
    else if (best < thresholds.negative)
      match.labels[a] = AnchorLabel::negative;
    else
      match.labels[a] = AnchorLabel::ignore;
  }
  for (std::size_t g = 0; g < gts.size(); ++g) {
    const int a = best_anchor_for_gt[g];
    if (a < 0 || best_for_gt[g] <= 0.0) continue;
    match.labels[a] = AnchorLabel::positive;
    match.matched_gt[a] = static_cast<int>(g);
  }
  return match;
}

std::vector<ProposalTarget> assign_proposal_labels(std::span<const Segment> proposals,
                                                   std::span<const Annotation> gts, double foreground_threshold) {
  std::vector<ProposalTarget> targets(proposals.size());
  for (std::size_t p = 0; p < proposals.size(); ++p) {
    double best = 0.0;
    int best_gt = -1;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      const double overlap = tiou(proposals[p], gts[g].segment);
      if (overlap > best) {
        best = overlap;
        best_gt = static_cast<int>(g);
      }
    }
    if (best_gt >= 0 && best > foreground_threshold) {
      targets[p].label = gts[best_gt].label;
      targets[p].matched_gt = best_gt;
      targets[p].offsets = encode_offsets(gts[best_gt].segment, Anchor::from_segment(proposals[p]));
    }
  }
  return targets;
}

}  // namespace talnet
