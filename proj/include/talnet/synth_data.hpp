#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "talnet/segments.hpp"
#include "talnet/tensor.hpp"

namespace talnet {

struct SynthConfig {
  int num_train = 200;
  int num_test = 100;
  int length = 256;  // cells per video
  int dim = 16;      // channels per stream
  int num_classes = 3;
  double mean_instances = 3.0;
  int min_length = 1;
  int max_length = 16;
  double noise = 0.3;
  // Class-specific cue patterns on the half-length flanks before and after
  // each instance.
  bool context_cues = true;
  // Stream B = corr * (stream A signal) + (1 - corr) * (its own signal) + noise.
  double stream_correlation = 0.5;
  double cells_per_second = 0.625;
  std::uint64_t seed = 7;

  // Throws ConfigError, including when the worst-case number of instances
  // (with flanks and one-cell gaps) cannot be packed into a video.
  void validate() const;
};

struct VideoSample {
  std::string id;
  FeatureGrid stream_a;
  FeatureGrid stream_b;
  std::vector<Annotation> instances;

  int length() const { return stream_a.length(); }
  std::vector<Segment> segments() const;
};

struct Dataset {
  int num_classes = 1;
  std::vector<VideoSample> train;
  std::vector<VideoSample> test;
};

// Deterministic in config.seed. Each instance writes its class waveform into
// the class's channel subset; with cues enabled, class-specific flank
// patterns are written over the s/2 cells before and after it.
Dataset generate(const SynthConfig& config);

// Instances per video are drawn from {m - 1, m, m + 1} around round(mean),
// never below 1.
int max_instances_per_video(const SynthConfig& config);

inline double seconds_to_cells(double seconds, double cells_per_second) { return seconds * cells_per_second; }
inline double cells_to_seconds(double cells, double cells_per_second) { return cells / cells_per_second; }

}  // namespace talnet
