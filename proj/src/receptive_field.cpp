#include "talnet/receptive_field.hpp"

#include <algorithm>
#include <sstream>

namespace talnet {

int rf_extent(std::span<const LayerSpec> layers) {
  int size = 1;
  for (const auto& layer : layers) {
    if (layer.kernel < 1 || layer.dilation < 1) throw ConfigError("layer kernel and dilation must be >= 1");
    size += (layer.kernel - 1) * layer.dilation;
  }
  return size;
}

Reach rf_reach(std::span<const LayerSpec> layers) {
  Reach reach;
  for (const auto& layer : layers) {
    if (layer.kernel < 1 || layer.dilation < 1) throw ConfigError("layer kernel and dilation must be >= 1");
    if (layer.kind == LayerKind::pool) {
      // Window t - floor(k/2) ... t + ceil(k/2) - 1.
      reach.left += layer.kernel / 2;
      reach.right += (layer.kernel + 1) / 2 - 1;
    } else {
      const int half = (layer.kernel - 1) / 2 * layer.dilation;
      reach.left += half;
      reach.right += half;
    }
  }
  return reach;
}

TowerSpec derive_rates(int anchor_scale, bool context) {
  if (anchor_scale < 1) throw ConfigError("anchor scale must be >= 1");
  const int base = std::max(1, (anchor_scale + 3) / 6);
  const int rate = context ? 2 * base : base;
  TowerSpec spec;
  spec.anchor_scale = anchor_scale;
  spec.context = context;
  spec.pool_kernel = rate;
  spec.dilation1 = rate;
  spec.dilation2 = 2 * rate;
  spec.layers = {LayerSpec::pool(rate), LayerSpec::conv(3, rate), LayerSpec::conv(3, 2 * rate)};
  spec.receptive_field = rf_extent(spec.layers);
  spec.reach = rf_reach(spec.layers);
  return spec;
}

namespace {

// Span from the first to the last input cell that receives a nonzero
// gradient from the centre output row, or 0 if the mask touches either end.
template <typename Real>
int gradient_span(const TowerFn<Real>& tower, int probe_length, const EmpiricalRfOptions& options) {
  const int centre = probe_length / 2;
  std::vector<bool> reached(probe_length, false);
  Rng rng(options.seed);
  for (int trial = 0; trial < options.trials; ++trial) {
    Tape<Real> tape;
    Matrix<Real> probe(probe_length, options.in_dim);
    for (Real& v : probe.flat()) v = static_cast<Real>(rng.normal());
    Var<Real> input = tape.variable(std::move(probe));
    Var<Real> out = tower(tape, input);
    if (out.rows() != probe_length) throw ShapeError("empirical_rf: tower changed the temporal length");
    const int row[] = {centre};
    Var<Real> loss = sum(gather_rows(out, std::span<const int>(row)));
    tape.backward(loss);
    const Matrix<Real>& g = tape.grad(input);
    for (int t = 0; t < probe_length; ++t)
      for (int d = 0; d < g.cols(); ++d)
        if (g(t, d) != Real(0)) reached[t] = true;
  }
  if (reached.front() || reached.back()) return 0;
  const auto first = std::find(reached.begin(), reached.end(), true);
  const auto last = std::find(reached.rbegin(), reached.rend(), true);
  return static_cast<int>((reached.rend() - last) - (first - reached.begin()));
}

}  // namespace

template <typename Real>
int empirical_rf(const TowerFn<Real>& tower, int probe_length, const EmpiricalRfOptions& options) {
  if (probe_length < 3) throw ConfigError("empirical_rf: probe too short");
  const int span = gradient_span(tower, probe_length, options);
  // Taps that fall off a short probe are invisible, so confirm on a longer one.
  if (span == 0 || span != gradient_span(tower, 2 * probe_length + 1, options))
    throw ConfigError("empirical_rf: probe too short for this tower");
  return span;
}

std::string format_tower_table(std::span<const int> scales, bool context) {
  std::ostringstream out;
  for (int s : scales) {
    const TowerSpec spec = derive_rates(s, context);
    out << "s=" << s << " context=" << (context ? "on" : "off") << " pool=" << spec.pool_kernel
        << ",r1=" << spec.dilation1 << ",r2=" << spec.dilation2 << ",RF=" << spec.receptive_field << '\n';
  }
  return out.str();
}

template int empirical_rf<float>(const TowerFn<float>&, int, const EmpiricalRfOptions&);
template int empirical_rf<double>(const TowerFn<double>&, int, const EmpiricalRfOptions&);

}  // namespace talnet
