#include "lsfd/synthvid.hpp"

#include "json.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>

namespace lsfd {

namespace {

constexpr char kClipMagic[8] = {'L', 'S', 'F', 'D', 'V', 'I', 'D', '1'};
constexpr int kManifestVersion = 1;

static_assert(std::endian::native == std::endian::little, "clip files are written in native little-endian order");

constexpr std::array<std::array<double, 3>, 8> kPalette = {{
    {0.85, 0.20, 0.20},
    {0.20, 0.60, 0.85},
    {0.25, 0.75, 0.30},
    {0.90, 0.75, 0.15},
    {0.60, 0.30, 0.75},
    {0.95, 0.55, 0.20},
    {0.30, 0.30, 0.30},
    {0.80, 0.80, 0.85},
}};

constexpr std::array<std::array<double, 3>, 8> kShapePalette = {{
    {1.0, 1.0, 1.0},
    {0.0, 0.0, 0.0},
    {1.0, 0.0, 1.0},
    {0.0, 1.0, 1.0},
    {1.0, 1.0, 0.0},
    {1.0, 0.0, 0.0},
    {0.0, 0.0, 1.0},
    {0.0, 1.0, 0.0},
}};

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

// Signed distance (pixels, negative inside) of offset (dy, dx) to a shape of radius r.
double shape_distance(int shape_id, double dy, double dx, double r) {
  const double ay = std::abs(dy), ax = std::abs(dx);
  switch (shape_id % 8) {
    case 0: return std::hypot(dy, dx) - r;                                 // disc
    case 1: return std::max(ay, ax) - 0.85 * r;                            // square
    case 2: return (ay + ax) / std::numbers::sqrt2 - 0.75 * r;              // diamond
    case 3: return std::abs(std::hypot(dy, dx) - 0.7 * r) - 0.3 * r;        // ring
    case 4: return std::min(std::max(ay - r, ax - 0.3 * r), std::max(ay - 0.3 * r, ax - r));  // plus
    case 5: {                                                              // triangle, apex up
      const double edge = (ax * 0.866 + dy * 0.5) - 0.5 * r;
      return std::max(edge, -dy - 0.5 * r * 1.2);
    }
    case 6: return std::max(ay - 0.35 * r, ax - r);  // horizontal bar
    default: return std::max(ay - r, ax - 0.35 * r);  // vertical bar
  }
}

void write_u32(std::ofstream& os, std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }

std::uint32_t read_u32(std::ifstream& is) {
  std::uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 4);
  if (!is) throw Error(ErrorCode::Format, "clip file truncated");
  return v;
}

nlohmann::json config_to_json(const SynthConfig& c) {
  return {{"backgrounds", c.backgrounds},   {"shapes", c.shapes},
          {"colors", c.colors},             {"phases", c.phases},             {"frames", c.frames},
          {"height", c.height},             {"width", c.width},
          {"min_phase_len", c.min_phase_len}, {"max_phase_len", c.max_phase_len},
          {"n_train", c.n_train},           {"n_test", c.n_test},
          {"velocity", c.velocity},         {"scale_rate", c.scale_rate},
          {"base_radius", c.base_radius}};
}

SynthConfig config_from_json(const nlohmann::json& j) {
  SynthConfig c;
  c.backgrounds = j.at("backgrounds");
  c.shapes = j.at("shapes");
  c.colors = j.at("colors");
  c.phases = j.at("phases");
  c.frames = j.at("frames");
  c.height = j.at("height");
  c.width = j.at("width");
  c.min_phase_len = j.at("min_phase_len");
  c.max_phase_len = j.at("max_phase_len");
  c.n_train = j.at("n_train");
  c.n_test = j.at("n_test");
  c.velocity = j.at("velocity");
  c.scale_rate = j.at("scale_rate");
  c.base_radius = j.at("base_radius");
  return c;
}

std::string clip_name(int id) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "clip_%05d.bin", id);
  return buf;
}

}  // namespace

const char* phase_name(int phase_id) {
  static constexpr const char* kNames[kMaxPhases] = {"move-right", "move-down", "move-left", "move-up",
                                                     "hold",       "shrink",    "grow"};
  if (phase_id < 0 || phase_id >= kMaxPhases) return "unknown";
  return kNames[phase_id];
}

void SynthConfig::validate() const {
  auto fail = [](const std::string& msg) { throw Error(ErrorCode::Config, msg); };
  if (backgrounds < 1 || shapes < 1) fail("backgrounds and shapes must be >= 1");
  if (colors < 0 || colors > 8) fail("colors must be in [0, 8]");
  if (phases < 2 || phases > kMaxPhases) fail("phases must be in [2, 7]");
  if (frames < 1 || height < 8 || width < 8) fail("frames >= 1 and height, width >= 8 required");
  if (min_phase_len < 1 || max_phase_len < min_phase_len) fail("need 1 <= min_phase_len <= max_phase_len");
  if (frames < min_phase_len) {
    fail("infeasible phase partition: frames " + std::to_string(frames) + " < min_phase_len " +
         std::to_string(min_phase_len));
  }
  if (n_train < 1 || n_test < 1) fail("n_train and n_test must be >= 1");
}

Tensor VideoClip::frames_tensor() const {
  Vector v(static_cast<Index>(pixels.size()));
  for (std::size_t i = 0; i < pixels.size(); ++i) v[static_cast<Index>(i)] = pixels[i];
  return Tensor({frames, 3, height, width}, std::move(v));
}

Factors sample_factors(Rng& rng, const SynthConfig& config) {
  config.validate();
  Factors f;
  f.seed = rng.key();
  f.background_id = static_cast<int>(rng.below(static_cast<std::uint64_t>(config.backgrounds)));
  f.shape_id = static_cast<int>(rng.below(static_cast<std::uint64_t>(config.shapes)));
  if (config.colors == 0) {
    for (double& c : f.shape_color) c = rng.uniform();
  } else {
    f.shape_color = kShapePalette[static_cast<std::size_t>(rng.below(static_cast<std::uint64_t>(config.colors)))];
  }

  // Durations: uniform over the lengths that leave a feasible remainder.
  auto feasible = [&](int remaining) {
    // Can `remaining` frames be split into runs of [min, max]?
    if (remaining == 0) return true;
    const int min_runs = (remaining + config.max_phase_len - 1) / config.max_phase_len;
    return min_runs * config.min_phase_len <= remaining;
  };
  if (!feasible(config.frames)) {
    throw Error(ErrorCode::Config, "infeasible phase partition for frames " + std::to_string(config.frames));
  }
  int remaining = config.frames;
  int previous = -1;
  while (remaining > 0) {
    std::vector<int> options;
    for (int d = config.min_phase_len; d <= std::min(config.max_phase_len, remaining); ++d) {
      if (feasible(remaining - d)) options.push_back(d);
    }
    const int d = options[rng.below(options.size())];
    // Adjacent runs differ so the label sequence compresses back to the program.
    int phase = static_cast<int>(rng.below(static_cast<std::uint64_t>(previous < 0 ? config.phases : config.phases - 1)));
    if (previous >= 0 && phase >= previous) ++phase;
    f.motion_program.push_back({phase, d});
    previous = phase;
    remaining -= d;
  }

  const double margin = config.base_radius * 1.5;
  f.start_position = {rng.uniform(margin, config.height - 1 - margin), rng.uniform(margin, config.width - 1 - margin)};
  return f;
}

std::vector<ShapeState> shape_trajectory(const Factors& factors, const SynthConfig& config) {
  std::vector<int> labels;
  for (const auto& run : factors.motion_program) labels.insert(labels.end(), run.duration, run.phase_id);
  std::vector<ShapeState> states;
  states.reserve(labels.size());
  ShapeState s{factors.start_position[0], factors.start_position[1], 1.0, false};
  for (std::size_t t = 0; t < labels.size(); ++t) {
    s.clamped = false;
    if (t > 0) {
      switch (static_cast<Phase>(labels[t])) {
        case Phase::MoveRight: s.col += config.velocity; break;
        case Phase::MoveDown: s.row += config.velocity; break;
        case Phase::MoveLeft: s.col -= config.velocity; break;
        case Phase::MoveUp: s.row -= config.velocity; break;
        case Phase::Hold: break;
        case Phase::Shrink: s.scale -= config.scale_rate; break;
        case Phase::Grow: s.scale += config.scale_rate; break;
      }
    }
    auto clamp = [&](double& v, double lo, double hi) {
      if (v < lo || v > hi) {
        v = std::clamp(v, lo, hi);
        s.clamped = true;
      }
    };
    clamp(s.scale, 0.5, 1.5);
    const double r = config.base_radius * s.scale;
    clamp(s.row, r, config.height - 1 - r);
    clamp(s.col, r, config.width - 1 - r);
    states.push_back(s);
  }
  return states;
}

std::vector<float> render_background(int background_id, int height, int width) {
  const int pattern = background_id % 8;
  const auto& a = kPalette[static_cast<std::size_t>(background_id % 8)];
  const auto& b = kPalette[static_cast<std::size_t>((background_id / 8 + background_id * 3 + 1) % 8)];
  std::vector<float> out(static_cast<std::size_t>(3 * height * width));
  for (int h = 0; h < height; ++h) {
    for (int w = 0; w < width; ++w) {
      double t = 0.0;  // blend weight towards colour b
      switch (pattern) {
        case 0: t = (h / 4) % 2; break;
        case 1: t = (w / 4) % 2; break;
        case 2: t = ((h / 8) + (w / 8)) % 2; break;
        case 3: t = ((h + w) / 6) % 2; break;
        case 4: t = static_cast<double>(w) / (width - 1); break;
        case 5: t = static_cast<double>(h) / (height - 1); break;
        case 6: t = static_cast<int>(std::hypot(h - height / 2.0, w - width / 2.0) / 5.0) % 2; break;
        default: t = (h % 8 < 3 && w % 8 < 3) ? 1.0 : 0.0; break;
      }
      for (int c = 0; c < 3; ++c) {
        const double v = a[static_cast<std::size_t>(c)] * (1.0 - t) + b[static_cast<std::size_t>(c)] * t;
        out[static_cast<std::size_t>((c * height + h) * width + w)] = static_cast<float>(v);
      }
    }
  }
  return out;
}

VideoClip render(const Factors& factors, const SynthConfig& config) {
  int total = 0;
  for (const auto& run : factors.motion_program) {
    if (run.duration < 1 || run.phase_id < 0 || run.phase_id >= kMaxPhases) {
      throw Error(ErrorCode::Value, "render: invalid motion program entry");
    }
    total += run.duration;
  }
  if (total != config.frames) {
    throw Error(ErrorCode::Value, "render: motion program covers " + std::to_string(total) + " frames, expected " +
                                      std::to_string(config.frames));
  }
  VideoClip clip;
  clip.frames = config.frames;
  clip.height = config.height;
  clip.width = config.width;
  clip.factors = factors;
  for (const auto& run : factors.motion_program) clip.frame_labels.insert(clip.frame_labels.end(), run.duration, run.phase_id);

  const auto background = render_background(factors.background_id, config.height, config.width);
  const auto states = shape_trajectory(factors, config);
  const std::size_t frame_size = background.size();
  clip.pixels.resize(frame_size * static_cast<std::size_t>(config.frames));
  for (int t = 0; t < config.frames; ++t) {
    const ShapeState& s = states[static_cast<std::size_t>(t)];
    clip.clamp_events += s.clamped ? 1 : 0;
    float* frame = clip.pixels.data() + frame_size * static_cast<std::size_t>(t);
    std::copy(background.begin(), background.end(), frame);
    const double r = config.base_radius * s.scale;
    for (int h = 0; h < config.height; ++h) {
      for (int w = 0; w < config.width; ++w) {
        const double cover = clamp01(0.5 - shape_distance(factors.shape_id, h - s.row, w - s.col, r));
        if (cover == 0.0) continue;
        for (int c = 0; c < 3; ++c) {
          float& px = frame[(c * config.height + h) * config.width + w];
          px = static_cast<float>(px * (1.0 - cover) + factors.shape_color[static_cast<std::size_t>(c)] * cover);
        }
      }
    }
  }
  return clip;
}

std::int64_t motion_signature(const Factors& factors, const SynthConfig& config) {
  const std::int64_t base = config.frames / config.min_phase_len + 1;
  std::array<std::int64_t, kMaxPhases> counts{};
  for (const auto& run : factors.motion_program) ++counts[static_cast<std::size_t>(run.phase_id)];
  std::int64_t key = 0;
  for (std::int64_t c : counts) key = key * base + c;
  return key;
}

Corpus build_corpus(const SynthConfig& config, std::uint64_t seed) {
  config.validate();
  Corpus corpus;
  corpus.config = config;
  corpus.seed = seed;
  const Rng root(seed);
  const int n = config.n_train + config.n_test;
  corpus.videos.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    Rng rng = root.split(static_cast<std::uint64_t>(i));
    corpus.videos.push_back(render(sample_factors(rng, config), config));
    (i < config.n_train ? corpus.train : corpus.test).push_back(i);
  }
  return corpus;
}

void write_clip(const VideoClip& clip, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error(ErrorCode::Io, "cannot open " + path.string() + " for writing");
  os.write(kClipMagic, 8);
  write_u32(os, 4);
  for (int e : {clip.frames, 3, clip.height, clip.width}) write_u32(os, static_cast<std::uint32_t>(e));
  os.write(reinterpret_cast<const char*>(clip.pixels.data()), static_cast<std::streamsize>(clip.pixels.size() * 4));
  write_u32(os, static_cast<std::uint32_t>(clip.frames));
  os.write(reinterpret_cast<const char*>(clip.frame_labels.data()),
           static_cast<std::streamsize>(clip.frame_labels.size() * 4));
  if (!os) throw Error(ErrorCode::Io, "write failed for " + path.string());
}

VideoClip read_clip(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorCode::Io, "cannot open " + path.string());
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kClipMagic, 8) != 0) throw Error(ErrorCode::Format, "bad clip magic in " + path.string());
  if (read_u32(is) != 4) throw Error(ErrorCode::Format, "clip rank must be 4 in " + path.string());
  std::array<std::uint32_t, 4> ext{};
  for (auto& e : ext) e = read_u32(is);
  if (ext[1] != 3 || ext[0] == 0 || ext[2] == 0 || ext[3] == 0) throw Error(ErrorCode::Format, "bad clip extents");
  VideoClip clip;
  clip.frames = static_cast<int>(ext[0]);
  clip.height = static_cast<int>(ext[2]);
  clip.width = static_cast<int>(ext[3]);
  clip.pixels.resize(std::size_t{ext[0]} * ext[1] * ext[2] * ext[3]);
  is.read(reinterpret_cast<char*>(clip.pixels.data()), static_cast<std::streamsize>(clip.pixels.size() * 4));
  if (read_u32(is) != ext[0]) throw Error(ErrorCode::Format, "label count does not match frames in " + path.string());
  clip.frame_labels.resize(ext[0]);
  is.read(reinterpret_cast<char*>(clip.frame_labels.data()), static_cast<std::streamsize>(clip.frame_labels.size() * 4));
  if (!is) throw Error(ErrorCode::Format, "clip file truncated: " + path.string());
  return clip;
}

void save_corpus(const Corpus& corpus, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::Io, "cannot create " + dir.string() + ": " + ec.message());
  nlohmann::json manifest;
  manifest["version"] = kManifestVersion;
  manifest["seed"] = corpus.seed;
  manifest["config"] = config_to_json(corpus.config);
  auto& videos = manifest["videos"] = nlohmann::json::array();
  for (std::size_t i = 0; i < corpus.videos.size(); ++i) {
    const int id = static_cast<int>(i);
    const auto& clip = corpus.videos[i];
    const auto& f = clip.factors;
    nlohmann::json program = nlohmann::json::array();
    nlohmann::json phases = nlohmann::json::array();
    for (const auto& run : f.motion_program) {
      program.push_back({run.phase_id, run.duration});
      phases.push_back(phase_name(run.phase_id));
    }
    videos.push_back({{"id", id},
                      {"split", corpus.is_test(id) ? "test" : "train"},
                      {"file", clip_name(id)},
                      {"background_id", f.background_id},
                      {"shape_id", f.shape_id},
                      {"shape_color", f.shape_color},
                      {"start_position", f.start_position},
                      {"seed", f.seed},
                      {"motion_program", program},
                      {"phase_sequence", phases}});
    write_clip(clip, dir / clip_name(id));
  }
  std::ofstream os(dir / "manifest.json", std::ios::trunc);
  if (!os) throw Error(ErrorCode::Io, "cannot write manifest in " + dir.string());
  os << manifest.dump(1) << '\n';
}

Corpus load_corpus(const std::filesystem::path& dir) {
  std::ifstream is(dir / "manifest.json");
  if (!is) throw Error(ErrorCode::Io, "no manifest.json in " + dir.string());
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Format, std::string("manifest parse error: ") + e.what());
  }
  if (manifest.value("version", -1) != kManifestVersion) throw Error(ErrorCode::Format, "unsupported manifest version");
  Corpus corpus;
  try {
    corpus.config = config_from_json(manifest.at("config"));
    corpus.seed = manifest.at("seed");
    for (const auto& entry : manifest.at("videos")) {
      const int id = entry.at("id");
      if (id != static_cast<int>(corpus.videos.size())) throw Error(ErrorCode::Format, "manifest ids out of order");
      VideoClip clip = read_clip(dir / entry.at("file").get<std::string>());
      Factors& f = clip.factors;
      f.background_id = entry.at("background_id");
      f.shape_id = entry.at("shape_id");
      f.shape_color = entry.at("shape_color");
      f.start_position = entry.at("start_position");
      f.seed = entry.at("seed");
      for (const auto& run : entry.at("motion_program")) f.motion_program.push_back({run.at(0), run.at(1)});
      std::vector<int> expected;
      for (const auto& run : f.motion_program) expected.insert(expected.end(), run.duration, run.phase_id);
      if (expected != clip.frame_labels) {
        throw Error(ErrorCode::Format, "clip " + std::to_string(id) + " labels disagree with manifest");
      }
      clip.clamp_events = 0;
      for (const auto& s : shape_trajectory(f, corpus.config)) clip.clamp_events += s.clamped ? 1 : 0;
      const bool test = entry.at("split") == "test";
      (test ? corpus.test : corpus.train).push_back(id);
      corpus.videos.push_back(std::move(clip));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Format, std::string("manifest field error: ") + e.what());
  }
  if (static_cast<int>(corpus.train.size()) != corpus.config.n_train ||
      static_cast<int>(corpus.test.size()) != corpus.config.n_test) {
    throw Error(ErrorCode::Format, "manifest split sizes disagree with config");
  }
  return corpus;
}

}  // namespace lsfd
