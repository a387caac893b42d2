#include <cmath>
#include <limits>
#include <cstring>

#include "talnet/rng.hpp"
#include "talnet/tensor.hpp"

namespace talnet {

std::int64_t Rng::uniform_int(std::int64_t lo, std::int64_t hi) {
  if (hi < lo) throw ConfigError("uniform_int: empty range");
  const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
  if (span == 0) return static_cast<std::int64_t>(engine_());
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % span;
  std::uint64_t draw = engine_();
  while (draw >= limit) draw = engine_();
  return lo + static_cast<std::int64_t>(draw % span);
}

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * M_PI * u2;
  spare_ = radius * std::sin(angle);
  has_spare_ = true;
  return radius * std::cos(angle);
}

void FeatureGrid::validate() const {
  if (data.rows() < 1 || data.cols() < 1) throw ShapeError("feature grid must have T >= 1 and D >= 1");
  if (!(cells_per_second > 0.0) || !std::isfinite(cells_per_second))
    throw ConfigError("cells_per_second must be positive and finite");
  for (float v : data.flat())
    if (!std::isfinite(v)) throw ConfigError("feature grid contains a non-finite entry");
}

FeatureGrid concat_features(const FeatureGrid& a, const FeatureGrid& b) {
  if (a.length() != b.length()) throw ShapeError("concat_features: streams differ in length");
  FeatureGrid out;
  out.cells_per_second = a.cells_per_second;
  out.data = Matrix<float>(a.length(), a.dim() + b.dim());
  for (int t = 0; t < a.length(); ++t) {
    std::memcpy(out.data.row(t), a.data.row(t), sizeof(float) * a.dim());
    std::memcpy(out.data.row(t) + a.dim(), b.data.row(t), sizeof(float) * b.dim());
  }
  return out;
}

}  // namespace talnet
