#include "vidreason/dataset_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <json.hpp>

#include "vidreason/digest.hpp"
#include "vidreason/errors.hpp"

namespace vidreason {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

void put_f32(std::string& out, float f) { put_u32(out, std::bit_cast<std::uint32_t>(f)); }

class Reader {
 public:
  Reader(std::string bytes, std::string where) : bytes_(std::move(bytes)), where_(std::move(where)) {}
  std::uint32_t u32() {
    if (pos_ + 4 > bytes_.size()) throw FormatError(where_ + ": truncated at byte " + std::to_string(pos_));
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  void expect_end() const {
    if (pos_ != bytes_.size()) throw FormatError(where_ + ": " + std::to_string(bytes_.size() - pos_) + " trailing bytes");
  }

 private:
  std::string bytes_;
  std::string where_;
  std::size_t pos_ = 0;
};

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), {});
}

void spit(const fs::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("short write to " + path.string());
}

json scene_json(const SceneSpec& s) {
  json inst = json::array();
  for (const auto& i : s.instances) {
    inst.push_back({{"id", i.id},
                    {"shape", shape_name(i.shape)},
                    {"size", i.size},
                    {"color", palette()[i.color].name},
                    {"depth", i.depth},
                    {"trajectory", i.trajectory == TrajectoryKind::kLinear ? "linear" : "circular"},
                    {"x0", i.x0},
                    {"y0", i.y0},
                    {"vx", i.vx},
                    {"vy", i.vy},
                    {"cx", i.cx},
                    {"cy", i.cy},
                    {"orbit", i.orbit},
                    {"omega", i.omega},
                    {"phase", i.phase}});
  }
  return {{"height", s.height}, {"width", s.width}, {"frames", s.frames}, {"instances", inst}};
}

ShapeKind parse_shape(const std::string& s) {
  if (s == "circle") return ShapeKind::kCircle;
  if (s == "square") return ShapeKind::kSquare;
  if (s == "triangle") return ShapeKind::kTriangle;
  throw FormatError("unknown shape '" + s + "'");
}

SceneSpec scene_from_json(const json& j) {
  SceneSpec s;
  s.height = j.at("height").get<std::size_t>();
  s.width = j.at("width").get<std::size_t>();
  s.frames = j.at("frames").get<std::size_t>();
  for (const auto& e : j.at("instances")) {
    InstanceSpec i;
    i.id = e.at("id").get<std::uint32_t>();
    i.shape = parse_shape(e.at("shape").get<std::string>());
    i.size = e.at("size").get<double>();
    i.color = palette_index(e.at("color").get<std::string>());
    i.depth = e.at("depth").get<int>();
    i.trajectory = e.at("trajectory").get<std::string>() == "linear" ? TrajectoryKind::kLinear : TrajectoryKind::kCircular;
    i.x0 = e.at("x0").get<double>();
    i.y0 = e.at("y0").get<double>();
    i.vx = e.at("vx").get<double>();
    i.vy = e.at("vy").get<double>();
    i.cx = e.at("cx").get<double>();
    i.cy = e.at("cy").get<double>();
    i.orbit = e.at("orbit").get<double>();
    i.omega = e.at("omega").get<double>();
    i.phase = e.at("phase").get<double>();
    s.instances.push_back(i);
  }
  return s;
}

json parse_json_file(const fs::path& path) {
  try {
    return json::parse(slurp(path));
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace

std::vector<std::uint32_t> rle_encode(std::span<const std::uint8_t> mask) {
  std::vector<std::uint32_t> counts;
  std::uint8_t current = 0;
  std::uint32_t run = 0;
  for (std::uint8_t v : mask) {
    const std::uint8_t b = v != 0 ? 1 : 0;
    if (b != current) {
      counts.push_back(run);
      run = 0;
      current = b;
    }
    ++run;
  }
  counts.push_back(run);
  return counts;
}

std::vector<std::uint8_t> rle_decode(std::span<const std::uint32_t> counts, std::size_t pixels,
                                     const std::string& where) {
  std::uint64_t total = 0;
  for (auto c : counts) total += c;
  if (total != pixels) {
    throw FormatError(where + ": RLE counts sum to " + std::to_string(total) + ", expected " + std::to_string(pixels));
  }
  std::vector<std::uint8_t> mask;
  mask.reserve(pixels);
  std::uint8_t value = 0;
  for (auto c : counts) {
    mask.insert(mask.end(), c, value);
    value ^= 1;
  }
  return mask;
}

const std::vector<std::string>& DatasetManifest::split(const std::string& name) const {
  auto it = splits.find(name);
  if (it == splits.end()) throw ConfigError("dataset has no split '" + name + "'");
  return it->second;
}

std::string manifest_json(const DatasetManifest& m) {
  json files = json::object();
  for (const auto& [id, f] : m.episodes) files[id] = {{"clip", f.clip}, {"masks", f.masks}, {"query", f.query}};
  json j = {{"version", m.version},
            {"seed", m.seed},
            {"config_digest", m.config_digest},
            {"splits", m.splits},
            {"episodes", files}};
  return j.dump(2) + "\n";
}

std::string manifest_digest(const DatasetManifest& m) { return hex_digest(manifest_json(m)); }

void write_clip(const fs::path& path, const VideoClip& clip) {
  clip.validate();
  std::string out;
  out.reserve(12 + clip.pixels.size() * 4);
  put_u32(out, static_cast<std::uint32_t>(clip.frames));
  put_u32(out, static_cast<std::uint32_t>(clip.height));
  put_u32(out, static_cast<std::uint32_t>(clip.width));
  for (double v : clip.pixels) put_f32(out, static_cast<float>(v));
  spit(path, out);
}

VideoClip read_clip(const fs::path& path, const std::string& id) {
  Reader r(slurp(path), path.string());
  VideoClip clip;
  clip.id = id;
  clip.frames = r.u32();
  clip.height = r.u32();
  clip.width = r.u32();
  const std::size_t n = clip.frames * clip.height * clip.width * 3;
  clip.pixels.resize(n);
  for (std::size_t i = 0; i < n; ++i) clip.pixels[i] = r.f32();
  r.expect_end();
  try {
    clip.validate();
  } catch (const ConfigError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  return clip;
}

void write_masks(const fs::path& path, const std::vector<MaskTracklet>& tracklets) {
  std::string out;
  put_u32(out, static_cast<std::uint32_t>(tracklets.size()));
  for (const auto& m : tracklets) {
    put_u32(out, m.instance_id);
    put_u32(out, static_cast<std::uint32_t>(m.frames));
    put_u32(out, static_cast<std::uint32_t>(m.height));
    put_u32(out, static_cast<std::uint32_t>(m.width));
    for (std::size_t t = 0; t < m.frames; ++t) {
      const auto counts = rle_encode(std::span<const std::uint8_t>(m.masks).subspan(t * m.frame_pixels(), m.frame_pixels()));
      put_u32(out, static_cast<std::uint32_t>(counts.size()));
      for (auto c : counts) put_u32(out, c);
    }
  }
  spit(path, out);
}

std::vector<MaskTracklet> read_masks(const fs::path& path) {
  Reader r(slurp(path), path.string());
  const std::uint32_t n = r.u32();
  std::vector<MaskTracklet> out;
  for (std::uint32_t k = 0; k < n; ++k) {
    const std::uint32_t id = r.u32();
    const std::size_t t = r.u32(), h = r.u32(), w = r.u32();
    MaskTracklet m = MaskTracklet::empty(t, h, w);
    m.instance_id = id;
    for (std::size_t f = 0; f < t; ++f) {
      const std::uint32_t nc = r.u32();
      std::vector<std::uint32_t> counts(nc);
      for (auto& c : counts) c = r.u32();
      const auto frame = rle_decode(counts, h * w, path.string() + " (tracklet " + std::to_string(id) + ", frame " +
                                                      std::to_string(f) + ")");
      std::copy(frame.begin(), frame.end(), m.masks.begin() + static_cast<std::ptrdiff_t>(f * h * w));
    }
    out.push_back(std::move(m));
  }
  r.expect_end();
  return out;
}

void write_query(const fs::path& path, const QueryEpisode& ep) {
  json j = {{"id", ep.id},
            {"family", ep.family},
            {"query", ep.query},
            {"target_ids", ep.target_ids},
            {"answer", ep.answer},
            {"fps", ep.clip.fps},
            {"mc", {{"question", ep.mc.question}, {"options", ep.mc.options}, {"key", ep.mc.key}}},
            {"scene", scene_json(ep.scene)}};
  spit(path, j.dump(2) + "\n");
}

void read_query(const fs::path& path, QueryEpisode& ep) {
  const json j = parse_json_file(path);
  try {
    ep.id = j.at("id").get<std::string>();
    ep.family = j.at("family").get<std::string>();
    ep.query = j.at("query").get<std::string>();
    ep.target_ids = j.at("target_ids").get<std::vector<std::uint32_t>>();
    ep.answer = j.at("answer").get<std::vector<std::string>>();
    ep.clip.fps = j.at("fps").get<double>();
    ep.mc.question = j.at("mc").at("question").get<std::string>();
    ep.mc.options = j.at("mc").at("options").get<std::vector<std::string>>();
    ep.mc.key = j.at("mc").at("key").get<std::size_t>();
    ep.scene = scene_from_json(j.at("scene"));
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  } catch (const EncodingError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  if (ep.mc.options.size() < 3 || ep.mc.options.size() > 5 || ep.mc.key >= ep.mc.options.size()) {
    throw FormatError(path.string() + ": malformed multiple-choice block");
  }
}

void write_dataset(const fs::path& dir, DatasetManifest manifest, const std::vector<QueryEpisode>& episodes) {
  std::error_code ec;
  fs::create_directories(dir / "episodes", ec);
  if (ec) throw FormatError("cannot create " + (dir / "episodes").string() + ": " + ec.message());
  for (const auto& ep : episodes) {
    const fs::path rel = fs::path("episodes") / ep.id;
    fs::create_directories(dir / rel, ec);
    if (ec) throw FormatError("cannot create " + (dir / rel).string() + ": " + ec.message());
    EpisodeFiles files{(rel / "clip.bin").generic_string(), (rel / "masks.rle").generic_string(),
                       (rel / "query.json").generic_string()};
    write_clip(dir / files.clip, ep.clip);
    write_masks(dir / files.masks, ep.tracklets);
    write_query(dir / files.query, ep);
    manifest.episodes[ep.id] = files;
  }
  spit(dir / "manifest.json", manifest_json(manifest));
}

DatasetManifest load_manifest(const fs::path& dir) {
  const fs::path path = dir / "manifest.json";
  const json j = parse_json_file(path);
  DatasetManifest m;
  try {
    m.version = j.at("version").get<int>();
    if (m.version != kDatasetVersion) {
      throw FormatError(path.string() + ": version " + std::to_string(m.version) + ", expected " +
                        std::to_string(kDatasetVersion));
    }
    m.seed = j.at("seed").get<std::uint64_t>();
    m.config_digest = j.at("config_digest").get<std::string>();
    m.splits = j.at("splits").get<std::map<std::string, std::vector<std::string>>>();
    for (const auto& [id, f] : j.at("episodes").items()) {
      m.episodes[id] = EpisodeFiles{f.at("clip").get<std::string>(), f.at("masks").get<std::string>(),
                                    f.at("query").get<std::string>()};
    }
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  for (const auto& [id, f] : m.episodes) {
    for (const auto* rel : {&f.clip, &f.masks, &f.query}) {
      if (!fs::exists(dir / *rel)) throw FormatError(path.string() + ": missing file " + (dir / *rel).string());
    }
  }
  for (const auto& [name, ids] : m.splits) {
    for (const auto& id : ids) {
      if (!m.episodes.count(id)) throw FormatError(path.string() + ": split " + name + " lists unknown episode " + id);
    }
  }
  return m;
}

QueryEpisode load_episode(const fs::path& dir, const DatasetManifest& manifest, const std::string& id) {
  auto it = manifest.episodes.find(id);
  if (it == manifest.episodes.end()) throw FormatError("manifest has no episode " + id);
  QueryEpisode ep;
  read_query(dir / it->second.query, ep);
  const double fps = ep.clip.fps;
  ep.clip = read_clip(dir / it->second.clip, id);
  ep.clip.fps = fps;
  ep.tracklets = read_masks(dir / it->second.masks);
  if (ep.tracklets.size() != ep.target_ids.size()) {
    throw FormatError((dir / it->second.masks).string() + ": " + std::to_string(ep.tracklets.size()) +
                      " tracklets for " + std::to_string(ep.target_ids.size()) + " targets");
  }
  return ep;
}

}  // namespace vidreason
