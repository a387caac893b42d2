#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "talnet/segments.hpp"
#include "talnet/synth_data.hpp"
#include "talnet/tensor.hpp"

namespace talnet {

// Feature file: "TALF", u32 version, u32 T, u32 D, f64 cells_per_second, then
// T*D f32 row-major (cell-major), all little-endian.
inline constexpr std::uint32_t kFeatureVersion = 1;

std::string encode_features(const FeatureGrid& grid);
FeatureGrid decode_features(std::string_view bytes);
void write_features(const std::filesystem::path& path, const FeatureGrid& grid);
FeatureGrid read_features(const std::filesystem::path& path);

// Dataset directory:
//   annotations.json        {"num_classes", "videos": [{"id", "split", "T",
//                             "cells_per_second", "instances": [{"start",
//                             "end", "label"}]}]}
//   features/<id>.a.talf    stream A
//   features/<id>.b.talf    stream B
void write_dataset(const std::filesystem::path& dir, const Dataset& data);
Dataset read_dataset(const std::filesystem::path& dir);

const std::vector<VideoSample>& split_of(const Dataset& data, std::string_view split);

// JSON Lines, one item per line: {"video", "start", "end", "score"} plus
// "label" for detections. Items keep their per-video order.
struct VideoProposals {
  std::string video;
  std::vector<ScoredSegment> items;
};
struct VideoDetections {
  std::string video;
  std::vector<Detection> items;
};

void write_proposals(const std::filesystem::path& path, const std::vector<VideoProposals>& proposals);
std::map<std::string, std::vector<ScoredSegment>> read_proposals(const std::filesystem::path& path);
void write_detections(const std::filesystem::path& path, const std::vector<VideoDetections>& detections);
std::map<std::string, std::vector<Detection>> read_detections(const std::filesystem::path& path);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

}  // namespace talnet
