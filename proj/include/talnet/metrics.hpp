#pragma once

#include <map>
#include <optional>
#include <span>
#include <vector>

#include "talnet/segments.hpp"

namespace talnet {

struct EvalConfig {
  // 0.50, 0.55, ..., 1.00
  std::vector<double> proposal_tious = default_proposal_tious();
  std::vector<int> an_grid{10, 20, 50, 100, 200};
  // 0.1, 0.2, ..., 0.9
  std::vector<double> detection_tious = default_detection_tious();

  static std::vector<double> default_proposal_tious();
  static std::vector<double> default_detection_tious();
  void validate() const;
};

// Fraction of ground-truth segments recalled by the top `an` proposals of each
// video. Proposals are visited in rank order and each takes the unmatched gt
// of highest tIoU (lowest index on ties) if that tIoU >= threshold.
// Throws ConfigError when there are no ground-truth segments at all.
double recall(std::span<const std::vector<ScoredSegment>> proposals, std::span<const std::vector<Segment>> gts,
              double tiou_threshold, int an);

// Mean of recall() over the given thresholds.
double average_recall(std::span<const std::vector<ScoredSegment>> proposals,
                      std::span<const std::vector<Segment>> gts, int an, std::span<const double> tious);

struct ArAnPoint {
  int an = 0;
  std::vector<double> recalls;  // one per proposal tIoU threshold
  double average_recall = 0.0;
};

std::vector<ArAnPoint> ar_an_curve(std::span<const std::vector<ScoredSegment>> proposals,
                                   std::span<const std::vector<Segment>> gts, const EvalConfig& config);

// All-point interpolated AP of one class. Detections of the class are ranked
// by score (ties: video index, then start time); each takes the unmatched
// same-video gt of that class with highest tIoU if it reaches the threshold.
// nullopt when the class has no ground truth.
std::optional<double> average_precision(std::span<const std::vector<Detection>> detections,
                                        std::span<const std::vector<Annotation>> gts, int label,
                                        double tiou_threshold);

struct MapResult {
  std::map<int, double> per_class;  // classes present in the ground truth
  double mean = 0.0;
};

MapResult mean_ap(std::span<const std::vector<Detection>> detections, std::span<const std::vector<Annotation>> gts,
                  double tiou_threshold);

// Precision envelope integral for a ranked list of TP/FP flags with
// `positives` ground-truth items.
double interpolated_ap(const std::vector<bool>& is_true_positive, int positives);

}  // namespace talnet
