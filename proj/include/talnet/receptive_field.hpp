#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "talnet/autodiff.hpp"

namespace talnet {

enum class LayerKind { conv, pool };

// One stride-1 layer of a temporal tower. Pools always have dilation 1.
struct LayerSpec {
  LayerKind kind = LayerKind::conv;
  int kernel = 1;
  int dilation = 1;

  static LayerSpec conv(int kernel, int dilation) { return {LayerKind::conv, kernel, dilation}; }
  static LayerSpec pool(int kernel) { return {LayerKind::pool, kernel, 1}; }

  bool operator==(const LayerSpec&) const = default;
};

// Receptive field of a stride-1 stack: 1 + sum (kernel - 1) * dilation.
// An empty stack is the identity (size 1).
int rf_extent(std::span<const LayerSpec> layers);

// Cells a centred output reaches to the left / right of itself.
struct Reach {
  int left = 0;
  int right = 0;
};
Reach rf_reach(std::span<const LayerSpec> layers);

// Per-scale tower of the proposal network: [pool(k_p), conv(3, r1), conv(3, r2)].
struct TowerSpec {
  int anchor_scale = 1;
  bool context = false;
  int pool_kernel = 1;
  int dilation1 = 1;
  int dilation2 = 2;
  std::vector<LayerSpec> layers;
  int receptive_field = 1;
  Reach reach;
};

// Base rate r = max(1, round(s / 6)) with halves rounded up. Without context
// the tower is pool(r), conv(3, r), conv(3, 2r); with context every rate and
// the pool kernel are doubled.
TowerSpec derive_rates(int anchor_scale, bool context);

// Maps an input grid (probe_length x in_dim) to an output grid with the same
// number of rows.
template <typename Real>
using TowerFn = std::function<Var<Real>(Tape<Real>&, const Var<Real>&)>;

struct EmpiricalRfOptions {
  int in_dim = 1;
  int trials = 32;
  std::uint64_t seed = 0x5eed;
};

// Width of the input span, first to last cell, that receives a nonzero
// gradient from the centre output row (summed over its channels). The mask is
// the union over several random probes so that max-pool routing and dead
// ReLUs do not hide cells. Throws ConfigError if the probe is too short,
// detected by the mask touching an end or changing on a longer probe.
template <typename Real>
int empirical_rf(const TowerFn<Real>& tower, int probe_length, const EmpiricalRfOptions& options = {});

// Human-readable table, one line per scale; used by the `rf` command.
std::string format_tower_table(std::span<const int> scales, bool context);

}  // namespace talnet
