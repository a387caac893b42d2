// Release acceptance checks. Prints one PASS/FAIL line per criterion and
// exits non-zero if any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "oracles/oracles.hpp"
#include "talnet/classifier_head.hpp"
#include "talnet/formats.hpp"
#include "talnet/metrics.hpp"
#include "talnet/pipeline.hpp"
#include "talnet/receptive_field.hpp"
#include "talnet/segments.hpp"
#include "talnet/spn.hpp"
#include "talnet/synth_data.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;
using namespace talnet;
using nlohmann::json;
using testutil::quarter_segment;
using testutil::random_matrix;

namespace {

// Tolerances and budgets.
constexpr double kGradTolerance = 1e-5;
constexpr int kGradShapes = 20;
constexpr double kGradMinMargin = 1e-3;
constexpr double kGradBudgetSeconds = 60.0;
constexpr int kOracleInstances = 500;
constexpr double kRealTolerance = 1e-9;
constexpr int kRoundTrips = 10000;
constexpr double kRoundTripTolerance = 1e-9;
constexpr double kSpotTolerance = 1e-12;
constexpr double kFusionTolerance = 1e-6;
constexpr double kBenchmarkMap = 0.60;
constexpr double kBenchmarkAr = 0.70;
constexpr double kBenchmarkBudgetSeconds = 15 * 60.0;
constexpr int kBenchmarkSteps = 3000;
constexpr int kBenchmarkHidden = 32;
constexpr double kBenchmarkLr = 1e-3;
constexpr int kAblationSteps = 1500;
constexpr int kAblationSeeds = 3;
constexpr double kAblationContextSlack = 0.02;
constexpr double kAblationBlockingInversion = 0.05;

struct Outcome {
  bool pass = true;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fixed(double v, int digits = 4) {
  std::ostringstream s;
  s.setf(std::ios::fixed);
  s.precision(digits);
  s << v;
  return s.str();
}

// ---------------------------------------------------------------------------
// 1. gradients

Var<double> weighted_sum(const Var<double>& out, std::uint64_t seed) {
  Rng rng(seed);
  return sum(mul(out, out.tape().constant(random_matrix(out.rows(), out.cols(), rng))));
}

struct GradCase {
  std::string name;
  // Draws a random shape and returns the function and its inputs.
  std::function<std::pair<oracle::GradFn, std::vector<Matrix<double>>>(Rng&)> draw;
};

int draw_int(Rng& rng, int lo, int hi) { return static_cast<int>(rng.uniform_int(lo, hi)); }

std::vector<Segment> random_proposals(Rng& rng, int n, int length) {
  std::vector<Segment> out;
  for (int i = 0; i < n; ++i) {
    const double a = rng.uniform(0.0, length - 1.0);
    const double b = rng.uniform(a + 0.5, static_cast<double>(length));
    out.push_back({a, b});
  }
  return out;
}

std::vector<GradCase> grad_cases() {
  std::vector<GradCase> cases;
  cases.push_back({"conv1d", [](Rng& rng) {
                     const int t = draw_int(rng, 3, 12), din = draw_int(rng, 1, 3), dout = draw_int(rng, 1, 3);
                     const int k = 2 * draw_int(rng, 0, 2) + 1, d = draw_int(rng, 1, 3);
                     const std::uint64_t s = rng.next_u64();
                     oracle::GradFn fn = [d, s](Tape<double>&, const std::vector<Var<double>>& v) {
                       return weighted_sum(conv1d(v[0], v[1], v[2], d), s);
                     };
                     return std::pair{fn, std::vector{random_matrix(t, din, rng), random_matrix(k * din, dout, rng),
                                                      random_matrix(1, dout, rng)}};
                   }});
  cases.push_back({"maxpool1d", [](Rng& rng) {
                     const int t = draw_int(rng, 2, 12), c = draw_int(rng, 1, 3), k = draw_int(rng, 1, 4);
                     const std::uint64_t s = rng.next_u64();
                     oracle::GradFn fn = [k, s](Tape<double>&, const std::vector<Var<double>>& v) {
                       return weighted_sum(maxpool1d(v[0], k), s);
                     };
                     return std::pair{fn, std::vector{random_matrix(t, c, rng)}};
                   }});
  cases.push_back({"relu", [](Rng& rng) {
                     const int r = draw_int(rng, 1, 8), c = draw_int(rng, 1, 4);
                     const std::uint64_t s = rng.next_u64();
                     oracle::GradFn fn = [s](Tape<double>&, const std::vector<Var<double>>& v) {
                       return weighted_sum(relu(v[0]), s);
                     };
                     return std::pair{fn, std::vector{random_matrix(r, c, rng)}};
                   }});
  cases.push_back({"linear", [](Rng& rng) {
                     const int n = draw_int(rng, 1, 6), in = draw_int(rng, 1, 5), out = draw_int(rng, 1, 4);
                     const std::uint64_t s = rng.next_u64();
                     oracle::GradFn fn = [s](Tape<double>&, const std::vector<Var<double>>& v) {
                       return weighted_sum(linear(v[0], v[1], v[2]), s);
                     };
                     return std::pair{fn, std::vector{random_matrix(n, in, rng), random_matrix(in, out, rng),
                                                      random_matrix(1, out, rng)}};
                   }});
  cases.push_back({"softmax_cross_entropy", [](Rng& rng) {
                     const int n = draw_int(rng, 1, 6), c = draw_int(rng, 2, 5);
                     std::vector<int> labels;
                     for (int i = 0; i < n; ++i) labels.push_back(draw_int(rng, 0, c - 1));
                     oracle::GradFn fn = [labels](Tape<double>&, const std::vector<Var<double>>& v) {
                       return softmax_cross_entropy(v[0], std::span<const int>(labels));
                     };
                     return std::pair{fn, std::vector{random_matrix(n, c, rng, 2.0)}};
                   }});
  cases.push_back({"smooth_l1", [](Rng& rng) {
                     const int r = draw_int(rng, 1, 6), c = draw_int(rng, 1, 3);
                     const Matrix<double> target = random_matrix(r, c, rng);
                     oracle::GradFn fn = [target](Tape<double>&, const std::vector<Var<double>>& v) {
                       return smooth_l1(v[0], target);
                     };
                     return std::pair{fn, std::vector{random_matrix(r, c, rng, 2.0)}};
                   }});
  cases.push_back({"soi_pool", [](Rng& rng) {
                     const int t = draw_int(rng, 6, 20), c = draw_int(rng, 1, 3), bins = draw_int(rng, 1, 4);
                     const bool context = rng.uniform_int(0, 1) == 1;
                     const auto props = random_proposals(rng, draw_int(rng, 1, 3), t);
                     const std::uint64_t s = rng.next_u64();
                     oracle::GradFn fn = [=](Tape<double>&, const std::vector<Var<double>>& v) {
                       return weighted_sum(soi_pool(v[0], std::span<const Segment>(props), bins, context), s);
                     };
                     return std::pair{fn, std::vector{random_matrix(t, c, rng)}};
                   }});
  cases.push_back({"spn_tower", [](Rng& rng) {
                     SpnConfig config;
                     config.hidden_width = draw_int(rng, 2, 3);
                     config.context = rng.uniform_int(0, 1) == 1;
                     config.anchor_scales = {draw_int(rng, 1, 4), draw_int(rng, 5, 16)};
                     const int dim = draw_int(rng, 1, 2), t = draw_int(rng, 10, 16);
                     auto spn = std::make_shared<SegmentProposalNetwork>(config, dim);
                     auto store = std::make_shared<ParamStore<double>>();
                     spn->init_params(*store, rng);
                     const std::uint64_t s = rng.next_u64();
                     oracle::GradFn fn = [=](Tape<double>& tape, const std::vector<Var<double>>& v) {
                       const ParamStore<double>& frozen = *store;
                       const auto out = spn->forward(tape, frozen, v[0]);
                       return add(weighted_sum(out.logits, s), weighted_sum(out.offsets, s + 1));
                     };
                     return std::pair{fn, std::vector{random_matrix(t, dim, rng)}};
                   }});
  cases.push_back({"classifier_head", [](Rng& rng) {
                     SoiConfig config;
                     config.hidden_width = draw_int(rng, 2, 4);
                     config.num_classes = draw_int(rng, 1, 3);
                     config.output_bins = draw_int(rng, 1, 4);
                     config.context = rng.uniform_int(0, 1) == 1;
                     const int dim = draw_int(rng, 1, 3), t = draw_int(rng, 8, 16);
                     auto head = std::make_shared<ClassifierHead>(config, dim);
                     auto store = std::make_shared<ParamStore<double>>();
                     head->init_params(*store, rng);
                     const auto props = random_proposals(rng, draw_int(rng, 1, 3), t);
                     std::vector<int> labels;
                     for (std::size_t i = 0; i < props.size(); ++i) labels.push_back(draw_int(rng, 0, config.num_classes));
                     const Matrix<double> targets = random_matrix(static_cast<int>(props.size()), 2 * config.num_classes, rng);
                     oracle::GradFn fn = [=](Tape<double>& tape, const std::vector<Var<double>>& v) {
                       const ParamStore<double>& frozen = *store;
                       const auto out = head->forward_proposals(tape, frozen, v[0], std::span<const Segment>(props));
                       return add(softmax_cross_entropy(out.logits, std::span<const int>(labels)),
                                  smooth_l1(out.offsets, targets));
                     };
                     return std::pair{fn, std::vector{random_matrix(t, dim, rng)}};
                   }});
  return cases;
}

Outcome check_gradients_suite() {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  Rng rng(0x6ead);
  std::ostringstream detail;
  for (const auto& c : grad_cases()) {
    int checked = 0;
    double worst = 0.0;
    for (int attempt = 0; attempt < 50 * kGradShapes && checked < kGradShapes; ++attempt) {
      auto [fn, inputs] = c.draw(rng);
      const auto r = oracle::check_gradients(fn, inputs);
      if (r.margin < kGradMinMargin) continue;
      worst = std::max(worst, r.rel_error);
      ++checked;
    }
    const bool ok = checked == kGradShapes && worst < kGradTolerance;
    o.pass &= ok;
    detail << c.name << " " << checked << "x max_rel=" << std::scientific << worst << std::defaultfloat
           << (ok ? "" : " (FAIL)") << "; ";
  }
  const double elapsed = seconds_since(t0);
  o.pass &= elapsed < kGradBudgetSeconds;
  detail << "time " << fixed(elapsed, 1) << "s";
  o.detail = detail.str();
  return o;
}

// ---------------------------------------------------------------------------
// 2. receptive fields

Outcome check_receptive_fields() {
  Outcome o;
  std::ostringstream detail;
  int compared = 0;
  const auto measure = [&](SpnVariant variant, bool context, const std::function<int(int)>& expected) {
    SpnConfig config;
    config.hidden_width = 4;
    config.variant = variant;
    config.context = context;
    const SegmentProposalNetwork spn(config, 2);
    ParamStore<double> store;
    Rng rng(3);
    spn.init_params(store, rng);
    for (int k = 0; k < spn.num_scales(); ++k) {
      const TowerFn<double> tower = [&](Tape<double>& tape, const Var<double>& x) {
        const ParamStore<double>& frozen = store;
        return spn.scale_logits(tape, frozen, x, k);
      };
      const int analytic = spn.receptive_field(k);
      const int want = expected(config.anchor_scales[k]);
      const int empirical = empirical_rf(tower, 2 * std::max(analytic, want) + 9, {2, 32, 3});
      ++compared;
      if (empirical != analytic || analytic != want) {
        o.pass = false;
        detail << to_string(variant) << " s=" << config.anchor_scales[k] << " ctx=" << context
               << " empirical=" << empirical << " analytic=" << analytic << " expected=" << want << "; ";
      }
    }
  };
  for (bool context : {false, true}) {
    measure(SpnVariant::multi_dilated, context, [context](int s) {
      return rf_extent(derive_rates(s, context).layers);
    });
  }
  measure(SpnVariant::single, false, [](int) { return 1; });
  measure(SpnVariant::single_tconv, false, [](int) { return 5; });
  measure(SpnVariant::multi_tconv, false, [](int) { return 5; });
  detail << compared << " towers compared";
  o.detail = detail.str();
  return o;
}

// ---------------------------------------------------------------------------
// 3. geometry and metric oracles

std::vector<Segment> random_segments(Rng& rng, int n, int limit) {
  std::vector<Segment> out;
  for (int i = 0; i < n; ++i) out.push_back(quarter_segment(rng, limit));
  return out;
}

double coarse_score(Rng& rng) { return static_cast<double>(rng.uniform_int(0, 8)) / 8.0; }

Outcome check_oracles() {
  Rng rng(0x0ac1e);
  int tiou_bad = 0, nms_bad = 0, match_bad = 0, ar_bad = 0, ap_bad = 0;
  for (int i = 0; i < kOracleInstances; ++i) {
    const Segment a = quarter_segment(rng, 12);
    const Segment b = quarter_segment(rng, 12);
    if (std::abs(tiou(a, b) - oracle::tiou(a, b)) > kRealTolerance) ++tiou_bad;
  }
  for (int i = 0; i < kOracleInstances; ++i) {
    const auto segs = random_segments(rng, draw_int(rng, 0, 12), 10);
    std::vector<double> scores;
    for (std::size_t k = 0; k < segs.size(); ++k) scores.push_back(coarse_score(rng));
    const double thr = draw_int(rng, 1, 20) / 20.0;
    if (nms_indices(segs, scores, thr) != oracle::nms(segs, scores, thr)) ++nms_bad;
  }
  for (int i = 0; i < kOracleInstances; ++i) {
    std::vector<Anchor> anchors;
    std::vector<Segment> anchor_segs;
    for (const auto& s : random_segments(rng, draw_int(rng, 1, 15), 10)) {
      anchors.push_back(Anchor::from_segment(s));
      anchor_segs.push_back(anchors.back().segment());
    }
    const auto gts = random_segments(rng, draw_int(rng, 0, 4), 10);
    const AnchorMatch m = match_anchors(anchors, gts);
    const oracle::Match ref = oracle::match_anchors(anchor_segs, gts);
    bool same = true;
    for (std::size_t k = 0; k < anchors.size(); ++k)
      same &= static_cast<int>(m.labels[k]) == ref.labels[k] && m.matched_gt[k] == ref.matched_gt[k];
    if (!same) ++match_bad;
  }
  for (int i = 0; i < kOracleInstances; ++i) {
    const int videos = draw_int(rng, 1, 3);
    std::vector<std::vector<ScoredSegment>> props(videos);
    std::vector<std::vector<Segment>> gts(videos);
    for (int v = 0; v < videos; ++v) {
      gts[v] = random_segments(rng, draw_int(rng, v == 0 ? 1 : 0, 4), 10);
      for (const auto& s : random_segments(rng, draw_int(rng, 0, 8), 10)) props[v].push_back({s, coarse_score(rng)});
    }
    const double thr = draw_int(rng, 1, 20) / 20.0;
    const int an = draw_int(rng, 1, 8);
    if (std::abs(recall(props, gts, thr, an) - oracle::recall(props, gts, thr, an)) > kRealTolerance) ++ar_bad;
  }
  for (int i = 0; i < kOracleInstances; ++i) {
    const int videos = draw_int(rng, 1, 3);
    std::vector<std::vector<Detection>> dets(videos);
    std::vector<std::vector<Annotation>> gts(videos);
    for (int v = 0; v < videos; ++v) {
      for (const auto& s : random_segments(rng, draw_int(rng, v == 0 ? 1 : 0, 4), 10))
        gts[v].push_back({s, 1});
      for (const auto& s : random_segments(rng, draw_int(rng, 0, 6), 10)) dets[v].push_back({s, 1, coarse_score(rng)});
    }
    const double thr = draw_int(rng, 1, 20) / 20.0;
    const auto ap = average_precision(dets, gts, 1, thr);
    if (!ap || std::abs(*ap - oracle::average_precision(dets, gts, 1, thr)) > kRealTolerance) ++ap_bad;
  }
  const double spot = interpolated_ap({true, false, true}, 2);
  Outcome o;
  o.pass = tiou_bad + nms_bad + match_bad + ar_bad + ap_bad == 0 && std::abs(spot - 5.0 / 6.0) < kRealTolerance;
  o.detail = std::to_string(kOracleInstances) + " instances each; mismatches tiou=" + std::to_string(tiou_bad) +
             " nms=" + std::to_string(nms_bad) + " match=" + std::to_string(match_bad) +
             " ar=" + std::to_string(ar_bad) + " ap=" + std::to_string(ap_bad) + "; AP(TP,FP,TP | 2 gt)=" +
             fixed(spot, 6);
  return o;
}

// ---------------------------------------------------------------------------
// 4. offsets

Outcome check_offsets() {
  Rng rng(0x0ff5);
  double worst = 0.0;
  for (int i = 0; i < kRoundTrips; ++i) {
    const Anchor a{rng.uniform(0.0, 256.0), rng.uniform(0.5, 32.0)};
    const double c = rng.uniform(-16.0, 272.0);
    const double len = rng.uniform(0.25, 64.0);
    const Segment g{c - 0.5 * len, c + 0.5 * len};
    const Segment back = decode_offsets(encode_offsets(g, a), a);
    worst = std::max({worst, std::abs(back.start - g.start), std::abs(back.end - g.end)});
  }
  double spot_err = 0.0;
  for (int i = 0; i < 100; ++i) {
    const Anchor a{rng.uniform(0.0, 256.0), rng.uniform(0.5, 32.0)};
    const double c = a.center + 0.1 * a.length;
    const Offsets t = encode_offsets(Segment{c - 0.5 * a.length, c + 0.5 * a.length}, a);
    spot_err = std::max({spot_err, std::abs(t.center - 1.0), std::abs(t.length)});
  }
  Outcome o;
  o.pass = worst < kRoundTripTolerance && spot_err < kSpotTolerance;
  std::ostringstream detail;
  detail << kRoundTrips << " round trips max_err=" << std::scientific << worst << "; spot max_err=" << spot_err;
  o.detail = detail.str();
  return o;
}

// ---------------------------------------------------------------------------
// 5. fusion degeneracy

Outcome check_fusion() {
  SynthConfig data_config;
  data_config.num_train = 20;
  data_config.num_test = 0;
  data_config.length = 160;
  data_config.dim = 6;
  data_config.seed = 21;
  const Dataset data = generate(data_config);
  const auto model = [&](FusionMode mode) {
    ModelConfig m;
    m.mode = mode;
    m.feature_dim = data_config.dim;
    m.spn.hidden_width = 8;
    m.spn.context = true;
    m.soi.hidden_width = 8;
    m.soi.context = true;
    m.soi.num_classes = data_config.num_classes;
    return m;
  };
  Detector<float> single(model(FusionMode::single));
  single.init_params(4);
  Detector<float> late(model(FusionMode::late));
  late.init_params(5);
  late.stores()[0] = single.stores()[0];
  late.stores()[1] = single.stores()[0];
  double worst = 0.0;
  int structural = 0;
  std::size_t detections = 0;
  for (const auto& v : data.train) {
    const auto s = single.run(v.stream_a, v.stream_b);
    const auto l = late.run(v.stream_a, v.stream_a);
    detections += s.detections.size();
    if (s.detections.size() != l.detections.size() || s.proposals.size() != l.proposals.size()) {
      ++structural;
      continue;
    }
    for (std::size_t i = 0; i < s.detections.size(); ++i) {
      if (s.detections[i].label != l.detections[i].label) ++structural;
      worst = std::max({worst, std::abs(s.detections[i].segment.start - l.detections[i].segment.start),
                        std::abs(s.detections[i].segment.end - l.detections[i].segment.end)});
    }
  }
  Outcome o;
  o.pass = structural == 0 && worst <= kFusionTolerance && detections > 0;
  std::ostringstream detail;
  detail << data.train.size() << " videos, " << detections << " detections, label/order mismatches=" << structural
         << ", max segment diff=" << std::scientific << worst;
  o.detail = detail.str();
  return o;
}

// ---------------------------------------------------------------------------
// 6 and 7. training runs on the synthetic benchmark

struct RunResult {
  double ar50 = 0.0;
  double ar100 = 0.0;
  double map50 = 0.0;
  double train_seconds = 0.0;
  double total_seconds = 0.0;
};

RunResult train_and_evaluate(const Dataset& data, SpnVariant variant, bool context, int steps, std::uint64_t seed) {
  const auto t0 = std::chrono::steady_clock::now();
  ModelConfig model;
  model.mode = FusionMode::late;
  model.feature_dim = data.train.front().stream_a.dim();
  model.spn.variant = variant;
  model.spn.context = context;
  model.spn.hidden_width = kBenchmarkHidden;
  model.soi.context = context;
  model.soi.hidden_width = kBenchmarkHidden;
  model.soi.num_classes = data.num_classes;
  TrainConfig train;
  train.learning_rate = kBenchmarkLr;
  train.steps = steps;
  train.seed = seed;
  Detector<float> detector(model);
  detector.init_params(seed);
  Trainer<float> trainer(detector, train);
  trainer.train(data.train);
  RunResult r;
  r.train_seconds = seconds_since(t0);
  const EvalReport report = evaluate_dataset(detector, data.test, EvalConfig{});
  r.ar50 = report.ar_at(50);
  r.ar100 = report.ar_at(100);
  r.map50 = report.map_at(0.5);
  r.total_seconds = seconds_since(t0);
  return r;
}

json to_json(const RunResult& r) {
  return {{"AR@50", r.ar50}, {"AR@100", r.ar100}, {"mAP@0.5", r.map50}, {"train_seconds", r.train_seconds},
          {"total_seconds", r.total_seconds}};
}

Outcome check_benchmark(const Dataset& data, json& manifest) {
  const RunResult r = train_and_evaluate(data, SpnVariant::multi_dilated, true, kBenchmarkSteps, 0);
  manifest["benchmark"] = to_json(r);
  manifest["benchmark"]["steps"] = kBenchmarkSteps;
  Outcome o;
  o.pass = r.map50 >= kBenchmarkMap && r.ar100 >= kBenchmarkAr && r.total_seconds < kBenchmarkBudgetSeconds;
  o.detail = "mAP@0.5=" + fixed(r.map50) + " (>= " + fixed(kBenchmarkMap, 2) + ") AR@100=" + fixed(r.ar100) +
             " (>= " + fixed(kBenchmarkAr, 2) + ") time " + fixed(r.total_seconds, 1) + "s";
  return o;
}

Outcome check_ablation(const Dataset& data, json& manifest) {
  double md_ar = 0.0, single_ar = 0.0, on_map = 0.0, off_map = 0.0;
  json runs = json::array();
  for (int seed = 0; seed < kAblationSeeds; ++seed) {
    const RunResult md = train_and_evaluate(data, SpnVariant::multi_dilated, true, kAblationSteps, seed);
    const RunResult single = train_and_evaluate(data, SpnVariant::single, true, kAblationSteps, seed);
    const RunResult off = train_and_evaluate(data, SpnVariant::multi_dilated, false, kAblationSteps, seed);
    md_ar += md.ar50 / kAblationSeeds;
    single_ar += single.ar50 / kAblationSeeds;
    on_map += md.map50 / kAblationSeeds;
    off_map += off.map50 / kAblationSeeds;
    runs.push_back({{"seed", seed},
                    {"multi_dilated_context", to_json(md)},
                    {"single_context", to_json(single)},
                    {"multi_dilated_no_context", to_json(off)}});
  }
  const bool variant_order = md_ar >= single_ar;
  const bool context_order = on_map >= off_map - kAblationContextSlack;
  const bool blocking = single_ar - md_ar > kAblationBlockingInversion ||
                        off_map - on_map > kAblationBlockingInversion;
  manifest["ablation"] = {{"steps", kAblationSteps},
                          {"seeds", kAblationSeeds},
                          {"runs", runs},
                          {"mean_AR@50_multi_dilated", md_ar},
                          {"mean_AR@50_single", single_ar},
                          {"mean_mAP@0.5_context_on", on_map},
                          {"mean_mAP@0.5_context_off", off_map},
                          {"multi_dilated_ge_single", variant_order},
                          {"context_on_ge_off_minus_slack", context_order},
                          {"blocking_inversion", blocking}};
  Outcome o;
  o.pass = !blocking;
  o.detail = "AR@50 multi-dilated=" + fixed(md_ar) + " single=" + fixed(single_ar) + " (" +
             (variant_order ? "ordered" : "inverted") + "); mAP@0.5 context on=" + fixed(on_map) +
             " off=" + fixed(off_map) + " (" + (context_order ? "ordered" : "inverted") + ")";
  return o;
}

// ---------------------------------------------------------------------------
// 8. CLI determinism

int run_cli(const std::string& args) {
  const std::string cmd = std::string(TALNET_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Outcome check_determinism(const fs::path& dir) {
  fs::remove_all(dir);
  fs::create_directories(dir);
  const auto p = [&](const std::string& name) { return (dir / name).string(); };
  write_file(dir / "synth.json",
             R"({"num_train": 20, "num_test": 10, "T": 128, "D": 8, "C": 3, "max_length": 12, "seed": 3})");
  Outcome o;
  if (run_cli("synth --config " + p("synth.json") + " --out " + p("data")) != 0) {
    o.pass = false;
    o.detail = "synth failed";
    return o;
  }
  std::vector<std::string> failures;
  for (const std::string run : {"a", "b"}) {
    const std::string ckpt = p(run + ".ckpt");
    const std::vector<std::string> commands = {
        "train --data " + p("data") + " --steps 300 --seed 9 --hidden-width 16 --lr 1e-3 --log-every 0 --out " + ckpt,
        "propose --ckpt " + ckpt + " --data " + p("data") + " --out " + p(run + ".proposals.jsonl"),
        "detect --ckpt " + ckpt + " --data " + p("data") + " --out " + p(run + ".detections.jsonl"),
        "eval-proposals --proposals " + p(run + ".proposals.jsonl") + " --data " + p("data") + " --out " +
            p(run + ".ar.csv"),
        "eval-detections --detections " + p(run + ".detections.jsonl") + " --data " + p("data") + " --out " +
            p(run + ".map.csv"),
    };
    for (const auto& c : commands)
      if (run_cli(c) != 0) failures.push_back("command failed: " + c);
  }
  for (const std::string suffix : {".ckpt", ".proposals.jsonl", ".detections.jsonl", ".ar.csv", ".map.csv"}) {
    try {
      if (read_file(p("a" + suffix)) != read_file(p("b" + suffix))) failures.push_back(suffix + " differs");
    } catch (const std::exception& e) {
      failures.push_back(e.what());
    }
  }
  o.pass = failures.empty();
  o.detail = failures.empty() ? "checkpoint, JSONL and CSV outputs bit-identical across two runs" : failures.front();
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks"};
  std::string workdir = "acceptance_work";
  app.add_option("--workdir", workdir, "Scratch directory for data and results")->capture_default_str();
  CLI11_PARSE(app, argc, argv);
  fs::create_directories(workdir);

  int failed = 0;
  const auto report = [&](int n, const std::string& name, const std::function<Outcome()>& check) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += o.pass ? 0 : 1;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << n << " (" << name << "): " << o.detail << " ["
              << fixed(seconds_since(t0), 1) << "s]" << std::endl;
  };

  json manifest;
  report(1, "gradient suite", check_gradients_suite);
  report(2, "receptive-field alignment", check_receptive_fields);
  report(3, "geometry and metric oracles", check_oracles);
  report(4, "offset round trip", check_offsets);
  report(5, "fusion degeneracy", check_fusion);
  const Dataset benchmark = generate(SynthConfig{});
  report(6, "synthetic benchmark", [&] { return check_benchmark(benchmark, manifest); });
  report(7, "ablation trend", [&] { return check_ablation(benchmark, manifest); });
  report(8, "determinism", [&] { return check_determinism(fs::path(workdir) / "determinism"); });

  manifest["failed_criteria"] = failed;
  write_file(fs::path(workdir) / "acceptance_manifest.json", manifest.dump(2) + "\n");
  std::cout << (failed == 0 ? "all criteria passed" : std::to_string(failed) + " criteria failed") << std::endl;
  return failed == 0 ? 0 : 1;
}
