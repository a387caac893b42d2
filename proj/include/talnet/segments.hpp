#pragma once

#include <optional>
#include <span>
#include <vector>

namespace talnet {

// Half-open interval [start, end) in feature-cell coordinates.
struct Segment {
  double start = 0.0;
  double end = 0.0;

  double center() const { return 0.5 * (start + end); }
  double length() const { return end - start; }
  bool valid() const;

  bool operator==(const Segment&) const = default;
};

struct Anchor {
  double center = 0.5;
  double length = 1.0;
  int scale_index = -1;  // -1 when a proposal plays the anchor role

  Segment segment() const { return {center - 0.5 * length, center + 0.5 * length}; }
  static Anchor from_segment(const Segment& s) { return {s.center(), s.length(), -1}; }
};

// Centre / log-length regression targets relative to an anchor.
struct Offsets {
  double center = 0.0;  // t_c
  double length = 0.0;  // t_l

  bool operator==(const Offsets&) const = default;
};

struct ScoredSegment {
  Segment segment;
  double score = 0.0;

  bool operator==(const ScoredSegment&) const = default;
};

// Class labels start at 1; 0 is background and never emitted.
struct Detection {
  Segment segment;
  int label = 1;
  double score = 0.0;

  bool operator==(const Detection&) const = default;
};

// Ground-truth instance.
struct Annotation {
  Segment segment;
  int label = 1;

  bool operator==(const Annotation&) const = default;
};

double tiou(const Segment& a, const Segment& b);

// t_c = 10 (c - c_a) / l_a, t_l = 5 ln(l / l_a).
Offsets encode_offsets(const Segment& gt, const Anchor& anchor);
Segment decode_offsets(const Offsets& offsets, const Anchor& anchor);

// Intersection with [0, length); nullopt if nothing of positive length is left.
std::optional<Segment> clip_to_bounds(const Segment& segment, int length);

// One anchor per scale per cell, centred on the cell centre. Anchor for cell
// t and scale k is at index t * scales.size() + k.
std::vector<Anchor> make_anchors(int length, std::span<const int> scales);

// Greedy NMS. Visits items by descending score (lower index first on ties);
// an item is dropped if its tIoU with an already kept item is > threshold.
// Returns kept indices in keep order.
std::vector<std::size_t> nms_indices(std::span<const Segment> segments, std::span<const double> scores,
                                     double threshold);

std::vector<ScoredSegment> nms(std::span<const ScoredSegment> items, double threshold);
std::vector<Detection> nms(std::span<const Detection> items, double threshold);

enum class AnchorLabel { negative = 0, positive = 1, ignore = -1 };

struct AnchorMatch {
  std::vector<AnchorLabel> labels;
  std::vector<int> matched_gt;  // -1 when the anchor has no overlap with any gt
};

struct AnchorMatchThresholds {
  double positive = 0.7;  // positive if max tIoU > this
  double negative = 0.3;  // negative if max tIoU < this
};

// Positive above the positive threshold, negative below the negative one,
// otherwise ignored. Each gt's best anchor (lowest index on ties) is forced
// positive and matched to that gt, unless it does not overlap at all; a later
// gt wins when two force the same anchor.
AnchorMatch match_anchors(std::span<const Anchor> anchors, std::span<const Segment> gts,
                          const AnchorMatchThresholds& thresholds = {});

struct ProposalTarget {
  int label = 0;  // 0 = background
  int matched_gt = -1;
  Offsets offsets;  // meaningful only when label > 0
};

// Class of the most overlapped gt if that tIoU exceeds `foreground_threshold`,
// with offsets encoded against the proposal; background otherwise.
std::vector<ProposalTarget> assign_proposal_labels(std::span<const Segment> proposals,
                                                   std::span<const Annotation> gts,
                                                   double foreground_threshold = 0.5);

}  // namespace talnet
