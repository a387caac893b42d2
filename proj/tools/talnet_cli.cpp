// talnet: synthetic data, training, inference and evaluation from the shell.
//
// Exit codes: 0 ok, 1 other failure, 2 usage, 3 I/O, 4 malformed input,
// 5 config digest mismatch on --resume.

#include <chrono>
#include <cinttypes>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "talnet/checkpoint.hpp"
#include "talnet/errors.hpp"
#include "talnet/formats.hpp"
#include "talnet/metrics.hpp"
#include "talnet/pipeline.hpp"
#include "talnet/receptive_field.hpp"
#include "talnet/synth_data.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace talnet;

namespace {

enum ExitCode { kOk = 0, kFailure = 1, kUsage = 2, kIo = 3, kFormat = 4, kDigest = 5 };

std::string utc_now() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string hex64(std::uint64_t v) {
  char buf[24];
  std::snprintf(buf, sizeof(buf), "%016" PRIx64, v);
  return buf;
}

std::string fmt(const char* pattern, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), pattern, v);
  return buf;
}

bool parse_on_off(const std::string& text) {
  if (text == "on") return true;
  if (text == "off") return false;
  throw ConfigError("expected on|off, got '" + text + "'");
}

std::vector<int> parse_int_list(const std::string& text) {
  std::vector<int> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stoi(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError("bad integer list '" + text + "'");
    }
  }
  if (out.empty()) throw ConfigError("empty integer list");
  return out;
}

std::string manifest_path(const std::string& out) { return out + ".manifest.json"; }

void write_manifest(const std::string& out, json manifest) {
  write_file(manifest_path(out), manifest.dump(2) + "\n");
}

std::string command_line(int argc, char** argv) {
  std::string s;
  for (int i = 0; i < argc; ++i) {
    if (i) s += ' ';
    s += argv[i];
  }
  return s;
}

// ---------------------------------------------------------------------------
// synth

SynthConfig synth_config_from_json(const json& j) {
  SynthConfig c;
  try {
    c.num_train = j.value("num_train", c.num_train);
    c.num_test = j.value("num_test", c.num_test);
    c.length = j.value("T", c.length);
    c.dim = j.value("D", c.dim);
    c.num_classes = j.value("C", c.num_classes);
    c.mean_instances = j.value("mean_instances", c.mean_instances);
    c.min_length = j.value("min_length", c.min_length);
    c.max_length = j.value("max_length", c.max_length);
    c.noise = j.value("noise", c.noise);
    c.context_cues = j.value("context_cues", c.context_cues);
    c.stream_correlation = j.value("stream_correlation", c.stream_correlation);
    c.cells_per_second = j.value("cells_per_second", c.cells_per_second);
    c.seed = j.value("seed", c.seed);
  } catch (const json::exception& e) {
    throw FormatError(std::string("synth config: ") + e.what());
  }
  return c;
}

struct SynthArgs {
  std::string config;
  std::string out;
};

int run_synth(const SynthArgs& args) {
  SynthConfig config;
  if (!args.config.empty()) {
    json j;
    try {
      j = json::parse(read_file(args.config));
    } catch (const json::exception& e) {
      throw FormatError(args.config + ": " + e.what());
    }
    config = synth_config_from_json(j);
  }
  const Dataset data = generate(config);
  write_dataset(args.out, data);
  std::cout << "wrote " << data.train.size() << " train and " << data.test.size() << " test videos to " << args.out
            << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
  std::string data;
  std::string mode = "late";
  std::string variant = "multi-dilated";
  std::string context = "on";
  int steps = 3000;
  std::uint64_t seed = 0;
  std::string out;
  int hidden_width = 256;
  double lr = 1e-4;
  std::string precision = "standard";
  std::string resume;
  int log_every = 100;
};

template <typename Real>
int train_with(const TrainArgs& args, const std::string& command) {
  const std::string started = utc_now();
  const Dataset data = read_dataset(args.data);
  if (data.train.empty()) throw ConfigError("dataset has no training videos");

  ModelConfig model;
  model.mode = parse_fusion_mode(args.mode);
  model.feature_dim = data.train.front().stream_a.dim();
  model.spn.variant = parse_spn_variant(args.variant);
  model.spn.context = parse_on_off(args.context);
  model.spn.hidden_width = args.hidden_width;
  model.soi.context = model.spn.context;
  model.soi.hidden_width = args.hidden_width;
  model.soi.num_classes = data.num_classes;

  TrainConfig train;
  train.learning_rate = args.lr;
  train.steps = args.steps;
  train.seed = args.seed;

  Detector<Real> detector(model);
  detector.init_params(args.seed);
  Trainer<Real> trainer(detector, train);
  if (!args.resume.empty()) restore_trainer(load_checkpoint(args.resume), trainer);

  StepLosses last;
  double window = 0.0;
  int window_n = 0;
  trainer.train(data.train, [&](std::int64_t step, const StepLosses& l) {
    last = l;
    window += l.total;
    ++window_n;
    if (args.log_every > 0 && (step + 1) % args.log_every == 0) {
      std::cerr << "step " << step + 1 << " loss " << fmt("%.5f", window / window_n) << "\n";
      window = 0.0;
      window_n = 0;
    }
  });

  const Checkpoint checkpoint = make_checkpoint(trainer, detector);
  save_checkpoint(args.out, checkpoint);
  write_manifest(args.out, {{"command", command},
                            {"config_digest", hex64(checkpoint.digest())},
                            {"config", checkpoint.config},
                            {"seed", args.seed},
                            {"steps", trainer.step_count()},
                            {"started", started},
                            {"finished", utc_now()},
                            {"metrics",
                             {{"final_loss", last.total},
                              {"final_proposal_loss", last.proposal},
                              {"final_classification_loss", last.classification}}}});
  return kOk;
}

int run_train(const TrainArgs& args, const std::string& command) {
  return parse_precision(args.precision) == Precision::wide ? train_with<double>(args, command)
                                                           : train_with<float>(args, command);
}

// ---------------------------------------------------------------------------
// propose / detect

struct InferArgs {
  std::string ckpt;
  std::string data;
  std::string out;
  std::string split = "test";
};

template <typename Real>
int infer_with(const Checkpoint& checkpoint, const InferArgs& args, bool detections, const std::string& command) {
  const std::string started = utc_now();
  const Detector<Real> detector = detector_from_checkpoint<Real>(checkpoint);
  const Dataset data = read_dataset(args.data);
  const auto& videos = split_of(data, args.split);
  std::vector<VideoProposals> proposals;
  std::vector<VideoDetections> dets;
  std::size_t count = 0;
  for (const auto& v : videos) {
    InferenceResult r = detector.run(v);
    count += detections ? r.detections.size() : r.proposals.size();
    if (detections) {
      dets.push_back({v.id, std::move(r.detections)});
    } else {
      proposals.push_back({v.id, std::move(r.proposals)});
    }
  }
  if (detections) {
    write_detections(args.out, dets);
  } else {
    write_proposals(args.out, proposals);
  }
  write_manifest(args.out, {{"command", command},
                            {"config_digest", hex64(checkpoint.digest())},
                            {"seed", checkpoint.config.at("train").at("seed")},
                            {"started", started},
                            {"finished", utc_now()},
                            {"metrics", {{"videos", videos.size()}, {"items", count}}}});
  return kOk;
}

int run_infer(const InferArgs& args, bool detections, const std::string& command) {
  const Checkpoint checkpoint = load_checkpoint(args.ckpt);
  return checkpoint.precision == Precision::wide ? infer_with<double>(checkpoint, args, detections, command)
                                                 : infer_with<float>(checkpoint, args, detections, command);
}

// ---------------------------------------------------------------------------
// eval-proposals / eval-detections

struct EvalArgs {
  std::string input;
  std::string data;
  std::string out;
  std::string split = "test";
  std::string an = "10,20,50,100,200";
};

template <typename Item>
std::vector<std::vector<Item>> align(const std::vector<VideoSample>& videos,
                                     std::map<std::string, std::vector<Item>> by_video) {
  std::vector<std::vector<Item>> out;
  for (const auto& v : videos) {
    auto it = by_video.find(v.id);
    out.push_back(it == by_video.end() ? std::vector<Item>{} : std::move(it->second));
    if (it != by_video.end()) by_video.erase(it);
  }
  if (!by_video.empty()) throw FormatError("items reference video '" + by_video.begin()->first + "' not in the split");
  return out;
}

int run_eval_proposals(const EvalArgs& args, const std::string& command) {
  const std::string started = utc_now();
  const Dataset data = read_dataset(args.data);
  const auto& videos = split_of(data, args.split);
  const auto proposals = align(videos, read_proposals(args.input));
  std::vector<std::vector<Segment>> gts;
  for (const auto& v : videos) gts.push_back(v.segments());
  EvalConfig config;
  config.an_grid = parse_int_list(args.an);
  const auto curve = ar_an_curve(proposals, gts, config);

  std::string csv = "an,tiou,recall\n";
  json ar = json::object();
  for (const auto& point : curve) {
    for (std::size_t i = 0; i < config.proposal_tious.size(); ++i)
      csv += std::to_string(point.an) + "," + fmt("%.2f", config.proposal_tious[i]) + "," +
             fmt("%.6f", point.recalls[i]) + "\n";
    csv += std::to_string(point.an) + ",mean," + fmt("%.6f", point.average_recall) + "\n";
    ar["AR@" + std::to_string(point.an)] = point.average_recall;
  }
  write_file(args.out, csv);
  write_manifest(args.out, {{"command", command},
                            {"input_digest", hex64(fnv1a64(read_file(args.input)))},
                            {"started", started},
                            {"finished", utc_now()},
                            {"metrics", ar}});
  std::cout << csv;
  return kOk;
}

int run_eval_detections(const EvalArgs& args, const std::string& command) {
  const std::string started = utc_now();
  const Dataset data = read_dataset(args.data);
  const auto& videos = split_of(data, args.split);
  const auto detections = align(videos, read_detections(args.input));
  std::vector<std::vector<Annotation>> gts;
  for (const auto& v : videos) gts.push_back(v.instances);
  const EvalConfig config;

  std::string csv = "class,tiou,ap\n";
  json maps = json::object();
  std::vector<std::pair<double, MapResult>> results;
  for (double t : config.detection_tious) results.emplace_back(t, mean_ap(detections, gts, t));
  for (int c = 1; c <= data.num_classes; ++c)
    for (const auto& [t, m] : results) {
      auto it = m.per_class.find(c);
      if (it != m.per_class.end()) csv += std::to_string(c) + "," + fmt("%.1f", t) + "," + fmt("%.6f", it->second) + "\n";
    }
  for (const auto& [t, m] : results) {
    csv += "mean," + fmt("%.1f", t) + "," + fmt("%.6f", m.mean) + "\n";
    maps["mAP@" + fmt("%.1f", t)] = m.mean;
  }
  write_file(args.out, csv);
  write_manifest(args.out, {{"command", command},
                            {"input_digest", hex64(fnv1a64(read_file(args.input)))},
                            {"started", started},
                            {"finished", utc_now()},
                            {"metrics", maps}});
  std::cout << csv;
  return kOk;
}

// ---------------------------------------------------------------------------
// rf

int run_rf(const std::string& scales, const std::string& context) {
  std::cout << format_tower_table(parse_int_list(scales), parse_on_off(context));
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Temporal action localization on 1D feature grids"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic two-stream dataset");
  synth_cmd->add_option("--config", synth.config, "JSON file with generator settings");
  synth_cmd->add_option("--out", synth.out, "Dataset directory")->required();

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "Train a detector and write a checkpoint");
  train_cmd->add_option("--data", train.data, "Dataset directory")->required();
  train_cmd->add_option("--mode", train.mode, "single|early|late")->capture_default_str();
  train_cmd->add_option("--variant", train.variant, "multi-dilated|single|single-tconv|multi-tconv")
      ->capture_default_str();
  train_cmd->add_option("--context", train.context, "on|off")->capture_default_str();
  train_cmd->add_option("--steps", train.steps)->capture_default_str();
  train_cmd->add_option("--seed", train.seed)->capture_default_str();
  train_cmd->add_option("--out", train.out, "Checkpoint path")->required();
  train_cmd->add_option("--hidden-width", train.hidden_width)->capture_default_str();
  train_cmd->add_option("--lr", train.lr)->capture_default_str();
  train_cmd->add_option("--precision", train.precision, "standard|wide")->capture_default_str();
  train_cmd->add_option("--resume", train.resume, "Continue from this checkpoint");
  train_cmd->add_option("--log-every", train.log_every)->capture_default_str();

  InferArgs propose;
  auto* propose_cmd = app.add_subcommand("propose", "Write proposals as JSON Lines");
  InferArgs detect;
  auto* detect_cmd = app.add_subcommand("detect", "Write detections as JSON Lines");
  for (auto [cmd, args] : {std::pair{propose_cmd, &propose}, std::pair{detect_cmd, &detect}}) {
    cmd->add_option("--ckpt", args->ckpt)->required();
    cmd->add_option("--data", args->data)->required();
    cmd->add_option("--out", args->out)->required();
    cmd->add_option("--split", args->split, "train|test")->capture_default_str();
  }

  EvalArgs eval_p;
  auto* eval_p_cmd = app.add_subcommand("eval-proposals", "AR-AN table as CSV");
  eval_p_cmd->add_option("--proposals", eval_p.input)->required();
  eval_p_cmd->add_option("--an", eval_p.an, "Comma-separated AN grid")->capture_default_str();
  EvalArgs eval_d;
  auto* eval_d_cmd = app.add_subcommand("eval-detections", "Per-class AP and mAP as CSV");
  eval_d_cmd->add_option("--detections", eval_d.input)->required();
  for (auto [cmd, args] : {std::pair{eval_p_cmd, &eval_p}, std::pair{eval_d_cmd, &eval_d}}) {
    cmd->add_option("--data", args->data)->required();
    cmd->add_option("--out", args->out)->required();
    cmd->add_option("--split", args->split, "train|test")->capture_default_str();
  }

  std::string rf_scales = "1,2,3,4,5,6,8,11,16";
  std::string rf_context = "off";
  auto* rf_cmd = app.add_subcommand("rf", "Print the receptive-field tower table");
  rf_cmd->add_option("--scales", rf_scales)->capture_default_str();
  rf_cmd->add_option("--context", rf_context, "on|off")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  const std::string command = command_line(argc, argv);
  try {
    if (synth_cmd->parsed()) return run_synth(synth);
    if (train_cmd->parsed()) return run_train(train, command);
    if (propose_cmd->parsed()) return run_infer(propose, false, command);
    if (detect_cmd->parsed()) return run_infer(detect, true, command);
    if (eval_p_cmd->parsed()) return run_eval_proposals(eval_p, command);
    if (eval_d_cmd->parsed()) return run_eval_detections(eval_d, command);
    if (rf_cmd->parsed()) return run_rf(rf_scales, rf_context);
  } catch (const DigestMismatch& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kDigest;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIo;
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFormat;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kUsage;
}
