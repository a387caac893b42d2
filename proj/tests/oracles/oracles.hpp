#pragma once

// Brute-force reference implementations used only by tests. None of these
// call into the library's geometry or metric code.

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <vector>

#include "talnet/autodiff.hpp"
#include "talnet/segments.hpp"

namespace oracle {

// Segments whose endpoints are multiples of 1 / kGrid.
inline constexpr int kGrid = 4;

struct Overlap {
  long intersection = 0;  // grid cells
  long uni = 0;

  double ratio() const { return uni == 0 ? 0.0 : static_cast<double>(intersection) / static_cast<double>(uni); }
};

// Counts grid cells covered by both / either segment by walking every cell.
inline Overlap grid_overlap(const talnet::Segment& a, const talnet::Segment& b) {
  const auto lo = static_cast<long>(std::floor(std::min(a.start, b.start) * kGrid));
  const auto hi = static_cast<long>(std::ceil(std::max(a.end, b.end) * kGrid));
  Overlap o;
  for (long c = lo; c < hi; ++c) {
    const double mid = (c + 0.5) / kGrid;
    const bool in_a = mid > a.start && mid < a.end;
    const bool in_b = mid > b.start && mid < b.end;
    o.intersection += (in_a && in_b) ? 1 : 0;
    o.uni += (in_a || in_b) ? 1 : 0;
  }
  return o;
}

inline double tiou(const talnet::Segment& a, const talnet::Segment& b) { return grid_overlap(a, b).ratio(); }

// Repeatedly keeps the best remaining item and deletes everything it
// suppresses. Scores tie-break on index.
inline std::vector<std::size_t> nms(const std::vector<talnet::Segment>& segs, const std::vector<double>& scores,
                                    double threshold) {
  const std::size_t n = segs.size();
  std::vector<std::vector<bool>> suppresses(n, std::vector<bool>(n, false));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) suppresses[i][j] = i != j && oracle::tiou(segs[i], segs[j]) > threshold;
  std::vector<bool> alive(n, true);
  std::vector<std::size_t> kept;
  for (;;) {
    std::size_t best = n;
    for (std::size_t i = 0; i < n; ++i)
      if (alive[i] && (best == n || scores[i] > scores[best])) best = i;
    if (best == n) break;
    kept.push_back(best);
    alive[best] = false;
    for (std::size_t j = 0; j < n; ++j)
      if (suppresses[best][j]) alive[j] = false;
  }
  return kept;
}

struct Match {
  std::vector<int> labels;  // 1, 0, -1
  std::vector<int> matched_gt;
};

inline Match match_anchors(const std::vector<talnet::Segment>& anchors, const std::vector<talnet::Segment>& gts,
                           double pos = 0.7, double neg = 0.3) {
  Match m;
  for (const auto& a : anchors) {
    double best = 0.0;
    int arg = -1;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      const double o = oracle::tiou(a, gts[g]);
      if (o > best) {
        best = o;
        arg = static_cast<int>(g);
      }
    }
    m.labels.push_back(best > pos ? 1 : (best < neg ? 0 : -1));
    m.matched_gt.push_back(arg);
  }
  for (std::size_t g = 0; g < gts.size(); ++g) {
    double best = 0.0;
    int arg = -1;
    for (std::size_t a = 0; a < anchors.size(); ++a) {
      const double o = oracle::tiou(anchors[a], gts[g]);
      if (o > best) {
        best = o;
        arg = static_cast<int>(a);
      }
    }
    if (arg >= 0) {
      m.labels[arg] = 1;
      m.matched_gt[arg] = static_cast<int>(g);
    }
  }
  return m;
}

// Recall of the top-`an` proposals per video, matched greedily in rank order.
inline double recall(const std::vector<std::vector<talnet::ScoredSegment>>& props,
                     const std::vector<std::vector<talnet::Segment>>& gts, double thr, int an) {
  long total = 0;
  long hits = 0;
  for (std::size_t v = 0; v < gts.size(); ++v) {
    total += static_cast<long>(gts[v].size());
    std::vector<std::size_t> idx(props[v].size());
    std::iota(idx.begin(), idx.end(), 0);
    // Insertion sort: descending score, ascending index on ties.
    for (std::size_t i = 1; i < idx.size(); ++i)
      for (std::size_t j = i; j > 0 && props[v][idx[j]].score > props[v][idx[j - 1]].score; --j)
        std::swap(idx[j], idx[j - 1]);
    std::vector<bool> taken(gts[v].size(), false);
    for (std::size_t r = 0; r < idx.size() && static_cast<int>(r) < an; ++r) {
      int arg = -1;
      double best = -1.0;
      for (std::size_t g = 0; g < gts[v].size(); ++g) {
        if (taken[g]) continue;
        const double o = oracle::tiou(props[v][idx[r]].segment, gts[v][g]);
        if (o > best) {
          best = o;
          arg = static_cast<int>(g);
        }
      }
      if (arg >= 0 && best >= thr) {
        taken[arg] = true;
        ++hits;
      }
    }
  }
  return static_cast<double>(hits) / static_cast<double>(total);
}

// AP as the sum over true positives of (1 / positives) times the best
// precision at that rank or later.
inline double ap_from_flags(const std::vector<bool>& tp, int positives) {
  std::vector<double> precision;
  int hits = 0;
  for (std::size_t k = 0; k < tp.size(); ++k) {
    hits += tp[k] ? 1 : 0;
    precision.push_back(static_cast<double>(hits) / static_cast<double>(k + 1));
  }
  double ap = 0.0;
  for (std::size_t k = 0; k < tp.size(); ++k) {
    if (!tp[k]) continue;
    double best = 0.0;
    for (std::size_t j = k; j < tp.size(); ++j) best = std::max(best, precision[j]);
    ap += best / positives;
  }
  return ap;
}

struct ClassDet {
  std::size_t video;
  talnet::Segment segment;
  double score;
};

// AP of one class; detections ranked by score, then video, then start.
inline double average_precision(const std::vector<std::vector<talnet::Detection>>& dets,
                                const std::vector<std::vector<talnet::Annotation>>& gts, int label, double thr) {
  int positives = 0;
  std::vector<std::vector<talnet::Segment>> g(gts.size());
  for (std::size_t v = 0; v < gts.size(); ++v)
    for (const auto& a : gts[v])
      if (a.label == label) {
        g[v].push_back(a.segment);
        ++positives;
      }
  std::vector<ClassDet> list;
  for (std::size_t v = 0; v < dets.size(); ++v)
    for (const auto& d : dets[v])
      if (d.label == label) list.push_back({v, d.segment, d.score});
  for (std::size_t i = 1; i < list.size(); ++i)
    for (std::size_t j = i; j > 0; --j) {
      const auto& a = list[j];
      const auto& b = list[j - 1];
      const bool before = a.score != b.score ? a.score > b.score
                          : a.video != b.video ? a.video < b.video
                                               : a.segment.start < b.segment.start;
      if (!before) break;
      std::swap(list[j], list[j - 1]);
    }
  std::vector<std::vector<bool>> taken(g.size());
  for (std::size_t v = 0; v < g.size(); ++v) taken[v].assign(g[v].size(), false);
  std::vector<bool> flags;
  for (const auto& d : list) {
    int arg = -1;
    double best = -1.0;
    for (std::size_t k = 0; k < g[d.video].size(); ++k) {
      if (taken[d.video][k]) continue;
      const double o = oracle::tiou(d.segment, g[d.video][k]);
      if (o > best) {
        best = o;
        arg = static_cast<int>(k);
      }
    }
    const bool hit = arg >= 0 && best >= thr;
    if (hit) taken[d.video][arg] = true;
    flags.push_back(hit);
  }
  return ap_from_flags(flags, positives);
}

// Central finite differences of a scalar function of several matrices.
// Returns the worst norm-wise relative error over the inputs, comparing
// against the reverse-mode gradient of the same function.
using GradFn = std::function<talnet::Var<double>(talnet::Tape<double>&, const std::vector<talnet::Var<double>>&)>;

struct GradCheck {
  double rel_error = 0.0;
  double margin = 0.0;  // distance of the evaluation point from the nearest kink
};

inline GradCheck check_gradients(const GradFn& fn, const std::vector<talnet::Matrix<double>>& inputs,
                                 double h = 1e-6) {
  GradCheck result;
  std::vector<talnet::Matrix<double>> analytic;
  {
    talnet::Tape<double> tape;
    std::vector<talnet::Var<double>> vars;
    for (const auto& m : inputs) vars.push_back(tape.variable(m));
    const auto loss = fn(tape, vars);
    result.margin = tape.nondiff_margin();
    tape.backward(loss);
    for (const auto& v : vars) analytic.push_back(tape.grad(v.id()));
  }
  const auto eval = [&](const std::vector<talnet::Matrix<double>>& xs) {
    talnet::Tape<double> tape;
    std::vector<talnet::Var<double>> vars;
    for (const auto& m : xs) vars.push_back(tape.constant(m));
    return fn(tape, vars).value()(0, 0);
  };
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    std::vector<talnet::Matrix<double>> xs = inputs;
    double diff2 = 0.0;
    double a2 = 0.0;
    double n2 = 0.0;
    for (std::size_t k = 0; k < xs[i].size(); ++k) {
      const double orig = xs[i].flat()[k];
      xs[i].flat()[k] = orig + h;
      const double up = eval(xs);
      xs[i].flat()[k] = orig - h;
      const double down = eval(xs);
      xs[i].flat()[k] = orig;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[i].flat()[k];
      diff2 += (a - numeric) * (a - numeric);
      a2 += a * a;
      n2 += numeric * numeric;
    }
    const double scale = std::max(std::sqrt(a2), std::sqrt(n2));
    if (scale < 1e-12) continue;
    result.rel_error = std::max(result.rel_error, std::sqrt(diff2) / scale);
  }
  return result;
}

}  // namespace oracle
