#include "talnet/synth_data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "talnet/errors.hpp"
#include "talnet/rng.hpp"

namespace talnet {

namespace {

constexpr std::uint64_t kClassTag = 1000;
constexpr std::uint64_t kTrainTag = 1u << 20;
constexpr std::uint64_t kTestTag = 1u << 21;
constexpr int kMaxPlacementAttempts = 1000;
constexpr int kMaxVideoRestarts = 100;

struct ChannelWave {
  int channel = 0;
  double amplitude = 1.0;
  double frequency = 0.0;
  double phase = 0.0;

  double at(double u) const { return amplitude * (1.0 + 0.5 * std::cos(M_PI * frequency * u + phase)); }
};

struct ClassPattern {
  std::vector<ChannelWave> stream_a;
  std::vector<ChannelWave> stream_b;
  std::vector<int> pre_cue;
  std::vector<int> post_cue;
};

std::vector<int> pick_channels(int dim, int count, Rng& rng) {
  std::vector<int> all(dim);
  for (int d = 0; d < dim; ++d) all[d] = d;
  std::vector<int> picked = rng.sample(all, static_cast<std::size_t>(count));
  std::sort(picked.begin(), picked.end());
  return picked;
}

std::vector<ChannelWave> make_waves(const std::vector<int>& channels, Rng& rng) {
  std::vector<ChannelWave> waves;
  for (int ch : channels) {
    ChannelWave w;
    w.channel = ch;
    w.amplitude = rng.uniform(0.8, 1.5);
    w.frequency = static_cast<double>(rng.uniform_int(0, 2));
    w.phase = rng.uniform(0.0, 2.0 * M_PI);
    waves.push_back(w);
  }
  return waves;
}

// Class patterns shared by every video. Channel subsets of different classes
// are distinct so classes stay linearly separable without noise.
std::vector<ClassPattern> make_patterns(const SynthConfig& config) {
  const int active = std::max(2, config.dim / 4);
  std::vector<ClassPattern> patterns;
  std::vector<std::vector<int>> used_a;
  std::vector<std::vector<int>> used_b;
  for (int c = 1; c <= config.num_classes; ++c) {
    Rng rng(mix_seed(config.seed, kClassTag + static_cast<std::uint64_t>(c)));
    ClassPattern p;
    std::vector<int> ch_a;
    std::vector<int> ch_b;
    for (int attempt = 0;; ++attempt) {
      ch_a = pick_channels(config.dim, active, rng);
      ch_b = pick_channels(config.dim, active, rng);
      const bool fresh = std::find(used_a.begin(), used_a.end(), ch_a) == used_a.end() &&
                         std::find(used_b.begin(), used_b.end(), ch_b) == used_b.end();
      if (fresh || attempt > 64) break;
    }
    used_a.push_back(ch_a);
    used_b.push_back(ch_b);
    p.stream_a = make_waves(ch_a, rng);
    p.stream_b = make_waves(ch_b, rng);
    p.pre_cue = pick_channels(config.dim, std::min(2, config.dim), rng);
    p.post_cue = pick_channels(config.dim, std::min(2, config.dim), rng);
    patterns.push_back(std::move(p));
  }
  return patterns;
}

int flank_of(int length, bool cues) { return cues ? (length + 1) / 2 : 0; }

struct Placed {
  Annotation annotation;
  int flank = 0;
};

std::vector<Placed> place_instances(const SynthConfig& config, Rng& rng) {
  const int typical = static_cast<int>(std::lround(config.mean_instances));
  for (int restart = 0; restart < kMaxVideoRestarts; ++restart) {
    const int count = std::max(1, typical + static_cast<int>(rng.uniform_int(-1, 1)));
    std::vector<Placed> placed;
    bool ok = true;
    for (int i = 0; i < count && ok; ++i) {
      const int len = static_cast<int>(rng.uniform_int(config.min_length, config.max_length));
      const int label = static_cast<int>(rng.uniform_int(1, config.num_classes));
      const int flank = flank_of(len, config.context_cues);
      ok = false;
      for (int attempt = 0; attempt < kMaxPlacementAttempts; ++attempt) {
        const int start = static_cast<int>(rng.uniform_int(0, config.length - len));
        const int lo = start - flank;
        const int hi = start + len + flank;
        bool clear = true;
        for (const auto& other : placed) {
          const int olo = static_cast<int>(other.annotation.segment.start) - other.flank;
          const int ohi = static_cast<int>(other.annotation.segment.end) + other.flank;
          if (lo < ohi + 1 && olo < hi + 1) {
            clear = false;
            break;
          }
        }
        if (clear) {
          placed.push_back({Annotation{Segment{static_cast<double>(start), static_cast<double>(start + len)}, label},
                            flank});
          ok = true;
          break;
        }
      }
    }
    if (ok) {
      std::sort(placed.begin(), placed.end(), [](const Placed& a, const Placed& b) {
        return a.annotation.segment.start < b.annotation.segment.start;
      });
      return placed;
    }
  }
  throw ConfigError("synthetic generator could not place the requested instances");
}

void write_wave(Matrix<double>& signal, const std::vector<ChannelWave>& waves, int start, int len, double weight) {
  for (int t = start; t < start + len; ++t) {
    const double u = (t - start + 0.5) / len;
    for (const auto& w : waves) signal(t, w.channel) += weight * w.at(u);
  }
}

void write_cue(Matrix<double>& signal, const std::vector<int>& channels, int from, int to, double value) {
  for (int t = std::max(0, from); t < std::min(signal.rows(), to); ++t)
    for (int ch : channels) signal(t, ch) += value;
}

VideoSample make_video(const SynthConfig& config, const std::vector<ClassPattern>& patterns, std::string id,
                       std::uint64_t seed) {
  Rng rng(seed);
  const auto placed = place_instances(config, rng);
  Matrix<double> signal_a(config.length, config.dim);
  Matrix<double> signal_b(config.length, config.dim);
  VideoSample video;
  video.id = std::move(id);
  for (const auto& p : placed) {
    const ClassPattern& pattern = patterns[p.annotation.label - 1];
    const int start = static_cast<int>(p.annotation.segment.start);
    const int len = static_cast<int>(p.annotation.segment.length());
    write_wave(signal_a, pattern.stream_a, start, len, 1.0);
    write_wave(signal_b, pattern.stream_b, start, len, 1.0);
    if (config.context_cues) {
      write_cue(signal_a, pattern.pre_cue, start - p.flank, start, -1.0);
      write_cue(signal_a, pattern.post_cue, start + len, start + len + p.flank, -1.0);
      write_cue(signal_b, pattern.pre_cue, start - p.flank, start, -1.0);
      write_cue(signal_b, pattern.post_cue, start + len, start + len + p.flank, -1.0);
    }
    video.instances.push_back(p.annotation);
  }
  const double rho = config.stream_correlation;
  video.stream_a.cells_per_second = config.cells_per_second;
  video.stream_b.cells_per_second = config.cells_per_second;
  video.stream_a.data = Matrix<float>(config.length, config.dim);
  video.stream_b.data = Matrix<float>(config.length, config.dim);
  for (int t = 0; t < config.length; ++t) {
    for (int d = 0; d < config.dim; ++d) {
      const double a = signal_a(t, d);
      const double b = rho * a + (1.0 - rho) * signal_b(t, d);
      const double na = config.noise > 0.0 ? config.noise * rng.normal() : 0.0;
      const double nb = config.noise > 0.0 ? config.noise * rng.normal() : 0.0;
      video.stream_a.data(t, d) = static_cast<float>(a + na);
      video.stream_b.data(t, d) = static_cast<float>(b + nb);
    }
  }
  return video;
}

}  // namespace

int max_instances_per_video(const SynthConfig& config) {
  return std::max(1, static_cast<int>(std::lround(config.mean_instances)) + 1);
}

void SynthConfig::validate() const {
  if (num_train < 0 || num_test < 0) throw ConfigError("video counts must be non-negative");
  if (length < 1 || dim < 1 || num_classes < 1) throw ConfigError("length, dim and num_classes must be positive");
  if (!(mean_instances >= 1.0)) throw ConfigError("mean instances per video must be >= 1");
  if (min_length < 1 || max_length < min_length || max_length > length)
    throw ConfigError("instance length bounds must satisfy 1 <= min <= max <= T");
  if (!(noise >= 0.0)) throw ConfigError("noise amplitude must be non-negative");
  if (!(stream_correlation >= 0.0 && stream_correlation <= 1.0))
    throw ConfigError("stream correlation must be in [0, 1]");
  if (!(cells_per_second > 0.0)) throw ConfigError("cells_per_second must be positive");
  const int footprint = max_length + 2 * flank_of(max_length, context_cues) + 1;
  if (static_cast<long long>(max_instances_per_video(*this)) * footprint > length)
    throw ConfigError("instances cannot be packed without overlap; lower the count or the maximum length");
}

std::vector<Segment> VideoSample::segments() const {
  std::vector<Segment> out;
  out.reserve(instances.size());
  for (const auto& a : instances) out.push_back(a.segment);
  return out;
}

Dataset generate(const SynthConfig& config) {
  config.validate();
  const auto patterns = make_patterns(config);
  Dataset data;
  data.num_classes = config.num_classes;
  char id[32];
  for (int i = 0; i < config.num_train; ++i) {
    std::snprintf(id, sizeof(id), "train_%04d", i);
    data.train.push_back(make_video(config, patterns, id, mix_seed(config.seed, kTrainTag + i)));
  }
  for (int i = 0; i < config.num_test; ++i) {
    std::snprintf(id, sizeof(id), "test_%04d", i);
    data.test.push_back(make_video(config, patterns, id, mix_seed(config.seed, kTestTag + i)));
  }
  return data;
}

}  // namespace talnet
