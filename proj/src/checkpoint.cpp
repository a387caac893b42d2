#include "talnet/checkpoint.hpp"

#include "byte_io.hpp"
#include "talnet/errors.hpp"
#include "talnet/formats.hpp"

namespace talnet {

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : bytes) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

nlohmann::json run_config_json(const ModelConfig& model, const TrainConfig& train, Precision precision) {
  return {{"model", model.to_json()}, {"train", train.to_json()}, {"precision", to_string(precision)}};
}

std::uint64_t Checkpoint::digest() const { return fnv1a64(config.dump()); }

const NamedArray& Checkpoint::array(std::string_view name) const {
  for (const auto& a : arrays)
    if (a.name == name) return a;
  throw FormatError("checkpoint has no array '" + std::string(name) + "'");
}

std::string encode_checkpoint(const Checkpoint& checkpoint) {
  detail::ByteWriter w;
  w.raw("TALC");
  w.u32(kCheckpointVersion);
  const bool wide = checkpoint.precision == Precision::wide;
  w.u8(wide ? 1 : 0);
  const std::string config = checkpoint.config.dump();
  w.u64(fnv1a64(config));
  w.str(config);
  w.u64(checkpoint.step);
  w.u32(static_cast<std::uint32_t>(checkpoint.arrays.size()));
  for (const auto& a : checkpoint.arrays) {
    if (a.values.size() != static_cast<std::size_t>(a.rows) * a.cols)
      throw ShapeError("checkpoint array '" + a.name + "' has the wrong element count");
    w.str(a.name);
    w.u32(static_cast<std::uint32_t>(a.rows));
    w.u32(static_cast<std::uint32_t>(a.cols));
    for (double v : a.values) {
      if (wide) {
        w.f64(v);
      } else {
        w.f32(static_cast<float>(v));
      }
    }
  }
  return w.take();
}

Checkpoint decode_checkpoint(std::string_view bytes) {
  detail::ByteReader r(bytes, "checkpoint");
  if (r.raw(4) != "TALC") throw FormatError("checkpoint: bad magic");
  if (const auto version = r.u32(); version != kCheckpointVersion)
    throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  Checkpoint c;
  const std::uint8_t precision = r.u8();
  if (precision > 1) throw FormatError("checkpoint: bad precision tag");
  c.precision = precision == 1 ? Precision::wide : Precision::standard;
  const std::uint64_t digest = r.u64();
  const std::string config = r.str();
  if (fnv1a64(config) != digest) throw FormatError("checkpoint: config digest does not match its config");
  try {
    c.config = nlohmann::json::parse(config);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint config: ") + e.what());
  }
  c.step = r.u64();
  const std::uint32_t count = r.u32();
  const std::size_t width = precision == 1 ? 8 : 4;
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedArray a;
    a.name = r.str();
    a.rows = static_cast<int>(r.u32());
    a.cols = static_cast<int>(r.u32());
    if (a.rows < 0 || a.cols < 0) throw FormatError("checkpoint: bad array shape");
    const auto n = static_cast<std::size_t>(a.rows) * static_cast<std::size_t>(a.cols);
    r.need(n * width);
    a.values.resize(n);
    for (double& v : a.values) v = precision == 1 ? r.f64() : static_cast<double>(r.f32());
    c.arrays.push_back(std::move(a));
  }
  if (r.remaining() != 0) throw FormatError("checkpoint: trailing bytes");
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  write_file(path, encode_checkpoint(checkpoint));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  try {
    return decode_checkpoint(read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

namespace {

template <typename Real>
constexpr Precision precision_of() {
  return sizeof(Real) == sizeof(double) ? Precision::wide : Precision::standard;
}

template <typename Real>
NamedArray to_array(std::string name, const Matrix<Real>& m) {
  return {std::move(name), m.rows(), m.cols(), std::vector<double>(m.flat().begin(), m.flat().end())};
}

template <typename Real>
void from_array(const NamedArray& a, Matrix<Real>& m) {
  if (a.rows != m.rows() || a.cols != m.cols()) throw FormatError("checkpoint array '" + a.name + "' has the wrong shape");
  auto flat = m.flat();
  for (std::size_t i = 0; i < flat.size(); ++i) flat[i] = static_cast<Real>(a.values[i]);
}

std::string stream_prefix(std::size_t i) { return "stream" + std::to_string(i) + "/"; }

template <typename Real>
void load_params(const Checkpoint& checkpoint, Detector<Real>& detector) {
  auto& stores = detector.stores();
  for (std::size_t s = 0; s < stores.size(); ++s)
    for (std::size_t p = 0; p < stores[s].size(); ++p) {
      auto& e = stores[s].entry(p);
      from_array(checkpoint.array(stream_prefix(s) + e.name), e.value);
    }
}

}  // namespace

template <typename Real>
Checkpoint make_checkpoint(const Trainer<Real>& trainer, const Detector<Real>& detector) {
  Checkpoint c;
  c.precision = precision_of<Real>();
  c.config = run_config_json(detector.config(), trainer.config(), c.precision);
  c.step = static_cast<std::uint64_t>(trainer.step_count());
  const auto& stores = detector.stores();
  for (std::size_t s = 0; s < stores.size(); ++s) {
    const std::string prefix = stream_prefix(s);
    const auto& adam = trainer.optimizer()[s];
    for (std::size_t p = 0; p < stores[s].size(); ++p) {
      const auto& e = stores[s].entry(p);
      c.arrays.push_back(to_array(prefix + e.name, e.value));
      c.arrays.push_back(to_array(prefix + "adam.m/" + e.name, adam.first_moment[p]));
      c.arrays.push_back(to_array(prefix + "adam.v/" + e.name, adam.second_moment[p]));
    }
  }
  return c;
}

template <typename Real>
Detector<Real> detector_from_checkpoint(const Checkpoint& checkpoint) {
  if (checkpoint.precision != precision_of<Real>()) throw ConfigError("checkpoint precision does not match");
  ModelConfig model;
  try {
    model = ModelConfig::from_json(checkpoint.config.at("model"));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint config: ") + e.what());
  }
  Detector<Real> detector(model);
  detector.init_params(0);
  load_params(checkpoint, detector);
  return detector;
}

template <typename Real>
void restore_trainer(const Checkpoint& checkpoint, Trainer<Real>& trainer) {
  Detector<Real>& detector = trainer.detector();
  const auto expected = fnv1a64(run_config_json(detector.config(), trainer.config(), precision_of<Real>()).dump());
  if (checkpoint.precision != precision_of<Real>() || checkpoint.digest() != expected)
    throw DigestMismatch("checkpoint was written by a run with a different configuration");
  load_params(checkpoint, detector);
  auto& stores = detector.stores();
  for (std::size_t s = 0; s < stores.size(); ++s) {
    const std::string prefix = stream_prefix(s);
    auto& adam = trainer.optimizer()[s];
    for (std::size_t p = 0; p < stores[s].size(); ++p) {
      const std::string& name = stores[s].entry(p).name;
      from_array(checkpoint.array(prefix + "adam.m/" + name), adam.first_moment[p]);
      from_array(checkpoint.array(prefix + "adam.v/" + name), adam.second_moment[p]);
    }
  }
  trainer.set_step_count(static_cast<std::int64_t>(checkpoint.step));
}

#define TALNET_INSTANTIATE(R)                                                      \
  template Checkpoint make_checkpoint(const Trainer<R>&, const Detector<R>&);      \
  template Detector<R> detector_from_checkpoint<R>(const Checkpoint&);             \
  template void restore_trainer(const Checkpoint&, Trainer<R>&);

TALNET_INSTANTIATE(float)
TALNET_INSTANTIATE(double)

#undef TALNET_INSTANTIATE

}  // namespace talnet
