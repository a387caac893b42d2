#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "talnet/pipeline.hpp"

namespace talnet {

// Checkpoint file, all integers and floats little-endian:
//   "TALC"  u32 version  u8 precision (0 standard, 1 wide)
//   u64 config digest  u32 n  n bytes of config JSON
//   u64 step  u32 array count
//   per array: u32 n, n bytes of name, u32 rows, u32 cols,
//              rows*cols f32 (standard) or f64 (wide), row-major
// Array names: "stream<i>/<param>", "stream<i>/adam.m/<param>",
// "stream<i>/adam.v/<param>".
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedArray {
  std::string name;
  int rows = 0;
  int cols = 0;
  std::vector<double> values;  // widened losslessly from float when standard

  bool operator==(const NamedArray&) const = default;
};

struct Checkpoint {
  Precision precision = Precision::standard;
  nlohmann::json config;  // {"model": ..., "train": ..., "precision": ...}
  std::uint64_t step = 0;
  std::vector<NamedArray> arrays;

  // Digest of the canonical (sorted-key, compact) config text.
  std::uint64_t digest() const;
  const NamedArray& array(std::string_view name) const;
};

std::uint64_t fnv1a64(std::string_view bytes);

// Canonical run configuration whose digest guards resumption.
nlohmann::json run_config_json(const ModelConfig& model, const TrainConfig& train, Precision precision);

std::string encode_checkpoint(const Checkpoint& checkpoint);
// Throws FormatError on bad magic, version, truncation or a stored digest that
// does not match the stored config.
Checkpoint decode_checkpoint(std::string_view bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

template <typename Real>
Checkpoint make_checkpoint(const Trainer<Real>& trainer, const Detector<Real>& detector);

// Detector with the checkpoint's architecture and parameters. Precision must
// match Real.
template <typename Real>
Detector<Real> detector_from_checkpoint(const Checkpoint& checkpoint);

// Copies parameters, optimizer moments and step count into a trainer whose
// run configuration must digest to the checkpoint's (DigestMismatch if not).
template <typename Real>
void restore_trainer(const Checkpoint& checkpoint, Trainer<Real>& trainer);

}  // namespace talnet
