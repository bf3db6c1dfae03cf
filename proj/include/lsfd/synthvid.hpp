#pragma once

#include "lsfd/rng.hpp"
#include "lsfd/tensor.hpp"

#include <array>
#include <filesystem>
#include <string>
#include <vector>

namespace lsfd {

/// Motion vocabulary. Phase ids index into this list; a corpus with P phases
/// uses the first P entries.
enum class Phase : int { MoveRight = 0, MoveDown, MoveLeft, MoveUp, Hold, Shrink, Grow };
inline constexpr int kMaxPhases = 7;
const char* phase_name(int phase_id);

struct SynthConfig {
  int backgrounds = 8;
  int shapes = 8;
  int colors = 0;  // 0: uniform RGB; otherwise one of the first `colors` shape palette entries
  int phases = 7;
  int frames = 48;
  int height = 32;
  int width = 32;
  int min_phase_len = 16;
  int max_phase_len = 32;
  int n_train = 512;
  int n_test = 128;
  double velocity = 0.5;     // pixels per frame
  double scale_rate = 0.02;  // relative size change per frame
  double base_radius = 5.0;

  void validate() const;
};

struct PhaseRun {
  int phase_id;
  int duration;
  bool operator==(const PhaseRun&) const = default;
};

struct Factors {
  int background_id = 0;
  int shape_id = 0;
  std::array<double, 3> shape_color{};
  std::vector<PhaseRun> motion_program;
  std::array<double, 2> start_position{};  // (row, col) of the shape centre
  std::uint64_t seed = 0;

  bool operator==(const Factors&) const = default;
};

/// Per-frame pose of the moving shape.
struct ShapeState {
  double row, col, scale;
  bool clamped;
};

struct VideoClip {
  int frames = 0, height = 0, width = 0;
  std::vector<float> pixels;  // [T,3,H,W] row-major, values in [0,1]
  std::vector<int> frame_labels;
  Factors factors;
  int clamp_events = 0;

  float at(int t, int c, int h, int w) const {
    return pixels[((static_cast<std::size_t>(t) * 3 + c) * height + h) * width + w];
  }
  Tensor frames_tensor() const;
  bool operator==(const VideoClip&) const = default;
};

Factors sample_factors(Rng& rng, const SynthConfig& config);
std::vector<ShapeState> shape_trajectory(const Factors& factors, const SynthConfig& config);
/// Background only, [3,H,W]; identical for every frame of a video.
std::vector<float> render_background(int background_id, int height, int width);
VideoClip render(const Factors& factors, const SynthConfig& config);

/// Key of the "dynamic" label task: the multiset of phase ids packed as
/// per-phase counts in base (frames / min_phase_len + 1). Order-free and
/// collision-free; evalkit maps keys to dense class ids.
std::int64_t motion_signature(const Factors& factors, const SynthConfig& config);

struct Corpus {
  SynthConfig config;
  std::uint64_t seed = 0;
  std::vector<VideoClip> videos;  // train first, then test
  std::vector<int> train;         // indices into videos
  std::vector<int> test;

  const VideoClip& video(int id) const { return videos.at(static_cast<std::size_t>(id)); }
  bool is_test(int id) const { return id >= config.n_train; }
};

Corpus build_corpus(const SynthConfig& config, std::uint64_t seed);
void save_corpus(const Corpus& corpus, const std::filesystem::path& dir);
Corpus load_corpus(const std::filesystem::path& dir);

void write_clip(const VideoClip& clip, const std::filesystem::path& path);
/// Reads pixels and labels; factors are filled from the manifest by load_corpus.
VideoClip read_clip(const std::filesystem::path& path);

}  // namespace lsfd
