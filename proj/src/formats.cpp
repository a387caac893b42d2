#include "talnet/formats.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "byte_io.hpp"
#include "json.hpp"
#include "talnet/errors.hpp"

namespace talnet {

using nlohmann::json;

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  if (in.bad()) throw IoError("cannot read " + path.string());
  return buf.str();
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot create " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("cannot write " + path.string());
}

std::string encode_features(const FeatureGrid& grid) {
  grid.validate();
  detail::ByteWriter w;
  w.raw("TALF");
  w.u32(kFeatureVersion);
  w.u32(static_cast<std::uint32_t>(grid.length()));
  w.u32(static_cast<std::uint32_t>(grid.dim()));
  w.f64(grid.cells_per_second);
  for (float v : grid.data.flat()) w.f32(v);
  return w.take();
}

FeatureGrid decode_features(std::string_view bytes) {
  detail::ByteReader r(bytes, "feature file");
  if (r.raw(4) != "TALF") throw FormatError("feature file: bad magic");
  if (const auto version = r.u32(); version != kFeatureVersion)
    throw FormatError("feature file: unsupported version " + std::to_string(version));
  const std::uint32_t length = r.u32();
  const std::uint32_t dim = r.u32();
  const double rate = r.f64();
  if (length == 0 || dim == 0 || length > (1u << 30) / dim) throw FormatError("feature file: bad shape");
  r.need(static_cast<std::size_t>(length) * dim * 4);
  FeatureGrid grid;
  grid.cells_per_second = rate;
  grid.data = Matrix<float>(static_cast<int>(length), static_cast<int>(dim));
  for (float& v : grid.data.flat()) v = r.f32();
  if (r.remaining() != 0) throw FormatError("feature file: trailing bytes");
  try {
    grid.validate();
  } catch (const std::invalid_argument& e) {
    throw FormatError(std::string("feature file: ") + e.what());
  }
  return grid;
}

void write_features(const std::filesystem::path& path, const FeatureGrid& grid) {
  write_file(path, encode_features(grid));
}

FeatureGrid read_features(const std::filesystem::path& path) {
  try {
    return decode_features(read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

namespace {

json video_json(const VideoSample& v, std::string_view split) {
  json instances = json::array();
  for (const auto& a : v.instances)
    instances.push_back({{"start", a.segment.start}, {"end", a.segment.end}, {"label", a.label}});
  return {{"id", v.id},
          {"split", split},
          {"T", v.length()},
          {"cells_per_second", v.stream_a.cells_per_second},
          {"instances", std::move(instances)}};
}

json parse_json(std::string_view text, const std::string& what) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw FormatError(what + ": " + e.what());
  }
}

}  // namespace

void write_dataset(const std::filesystem::path& dir, const Dataset& data) {
  json videos = json::array();
  for (const auto& [split, list] : {std::pair{"train", &data.train}, std::pair{"test", &data.test}}) {
    for (const auto& v : *list) {
      videos.push_back(video_json(v, split));
      write_features(dir / "features" / (v.id + ".a.talf"), v.stream_a);
      write_features(dir / "features" / (v.id + ".b.talf"), v.stream_b);
    }
  }
  const json doc = {{"num_classes", data.num_classes}, {"videos", std::move(videos)}};
  write_file(dir / "annotations.json", doc.dump(1) + "\n");
}

Dataset read_dataset(const std::filesystem::path& dir) {
  const auto ann_path = dir / "annotations.json";
  const json doc = parse_json(read_file(ann_path), ann_path.string());
  Dataset data;
  std::set<std::string> ids;
  try {
    data.num_classes = doc.at("num_classes").get<int>();
    if (data.num_classes < 1) throw FormatError("num_classes must be positive");
    for (const auto& jv : doc.at("videos")) {
      VideoSample v;
      v.id = jv.at("id").get<std::string>();
      if (v.id.empty() || v.id.find('/') != std::string::npos) throw FormatError("bad video id '" + v.id + "'");
      if (!ids.insert(v.id).second) throw FormatError("duplicate video id '" + v.id + "'");
      const std::string split = jv.value("split", "test");
      const int length = jv.at("T").get<int>();
      const double rate = jv.at("cells_per_second").get<double>();
      for (const auto& ji : jv.at("instances")) {
        Annotation a;
        a.segment = {ji.at("start").get<double>(), ji.at("end").get<double>()};
        a.label = ji.at("label").get<int>();
        if (!(a.segment.end > a.segment.start))
          throw FormatError("video " + v.id + ": instance with end <= start");
        if (a.segment.start < 0.0 || a.segment.end > length)
          throw FormatError("video " + v.id + ": instance outside [0, T)");
        if (a.label < 1 || a.label > data.num_classes) throw FormatError("video " + v.id + ": label out of range");
        v.instances.push_back(a);
      }
      v.stream_a = read_features(dir / "features" / (v.id + ".a.talf"));
      v.stream_b = read_features(dir / "features" / (v.id + ".b.talf"));
      if (v.stream_a.length() != length || v.stream_b.length() != length)
        throw FormatError("video " + v.id + ": feature length does not match T");
      if (v.stream_a.dim() != v.stream_b.dim()) throw FormatError("video " + v.id + ": stream widths differ");
      if (v.stream_a.cells_per_second != rate) throw FormatError("video " + v.id + ": cells_per_second mismatch");
      if (split == "train") {
        data.train.push_back(std::move(v));
      } else if (split == "test") {
        data.test.push_back(std::move(v));
      } else {
        throw FormatError("video " + v.id + ": unknown split '" + split + "'");
      }
    }
  } catch (const json::exception& e) {
    throw FormatError(ann_path.string() + ": " + e.what());
  }
  return data;
}

const std::vector<VideoSample>& split_of(const Dataset& data, std::string_view split) {
  if (split == "train") return data.train;
  if (split == "test") return data.test;
  throw ConfigError("unknown split '" + std::string(split) + "'");
}

namespace {

template <typename Fn>
void for_each_line(const std::filesystem::path& path, Fn&& fn) {
  std::istringstream in(read_file(path));
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(number);
    const json j = parse_json(line, where);
    try {
      fn(j);
    } catch (const json::exception& e) {
      throw FormatError(where + ": " + e.what());
    }
  }
}

Segment read_segment(const json& j) {
  Segment s{j.at("start").get<double>(), j.at("end").get<double>()};
  if (!(s.end > s.start)) throw FormatError("segment with end <= start");
  return s;
}

}  // namespace

void write_proposals(const std::filesystem::path& path, const std::vector<VideoProposals>& proposals) {
  std::string out;
  for (const auto& v : proposals)
    for (const auto& p : v.items) {
      const json j = {{"video", v.video}, {"start", p.segment.start}, {"end", p.segment.end}, {"score", p.score}};
      out += j.dump() + "\n";
    }
  write_file(path, out);
}

std::map<std::string, std::vector<ScoredSegment>> read_proposals(const std::filesystem::path& path) {
  std::map<std::string, std::vector<ScoredSegment>> out;
  for_each_line(path, [&](const json& j) {
    out[j.at("video").get<std::string>()].push_back({read_segment(j), j.at("score").get<double>()});
  });
  return out;
}

void write_detections(const std::filesystem::path& path, const std::vector<VideoDetections>& detections) {
  std::string out;
  for (const auto& v : detections)
    for (const auto& d : v.items) {
      const json j = {{"video", v.video},
                      {"start", d.segment.start},
                      {"end", d.segment.end},
                      {"score", d.score},
                      {"label", d.label}};
      out += j.dump() + "\n";
    }
  write_file(path, out);
}

std::map<std::string, std::vector<Detection>> read_detections(const std::filesystem::path& path) {
  std::map<std::string, std::vector<Detection>> out;
  for_each_line(path, [&](const json& j) {
    out[j.at("video").get<std::string>()].push_back(
        {read_segment(j), j.at("label").get<int>(), j.at("score").get<double>()});
  });
  return out;
}

}  // namespace talnet
