#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "lsfd/synthvid.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

using namespace lsfd;

namespace {

SynthConfig small_config() {
  SynthConfig c;
  c.frames = 32;
  c.min_phase_len = 4;
  c.max_phase_len = 12;
  c.n_train = 6;
  c.n_test = 2;
  return c;
}

std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("lsfd_test_" + name);
  std::filesystem::remove_all(p);
  return p;
}

}  // namespace

TEST_CASE("sample_factors is deterministic") {
  Rng a(42), b(42);
  CHECK(sample_factors(a, SynthConfig{}) == sample_factors(b, SynthConfig{}));
}

TEST_CASE("durations partition T within bounds and adjacent phases differ") {
  const SynthConfig c = small_config();
  Rng root(1);
  for (int i = 0; i < 500; ++i) {
    Rng rng = root.split(static_cast<std::uint64_t>(i));
    const Factors f = sample_factors(rng, c);
    int total = 0;
    for (std::size_t k = 0; k < f.motion_program.size(); ++k) {
      const auto& run = f.motion_program[k];
      CHECK(run.duration >= 4);
      CHECK(run.duration <= 12);
      CHECK(run.phase_id >= 0);
      CHECK(run.phase_id < c.phases);
      if (k > 0) CHECK(run.phase_id != f.motion_program[k - 1].phase_id);
      total += run.duration;
    }
    CHECK(total == 32);
  }
}

TEST_CASE("background ids are uniform") {
  SynthConfig c = small_config();
  c.backgrounds = 4;
  std::array<int, 4> counts{};
  Rng root(11);
  for (int i = 0; i < 10000; ++i) {
    Rng rng = root.split(static_cast<std::uint64_t>(i));
    ++counts[static_cast<std::size_t>(sample_factors(rng, c).background_id)];
  }
  const double sigma = std::sqrt(10000 * 0.25 * 0.75);
  for (int n : counts) CHECK(std::abs(n - 2500) < 3 * sigma);
}

TEST_CASE("infeasible configurations are rejected") {
  SynthConfig c = small_config();
  c.frames = 3;
  Rng rng(1);
  CHECK_THROWS_AS(sample_factors(rng, c), Error);
  c = small_config();
  c.min_phase_len = 0;
  CHECK_THROWS_AS(c.validate(), Error);
}

TEST_CASE("hold-only program renders identical frames") {
  const SynthConfig c = small_config();
  Factors f;
  f.background_id = 3;
  f.shape_id = 2;
  f.shape_color = {0.9, 0.1, 0.2};
  f.motion_program = {{static_cast<int>(Phase::Hold), 32}};
  f.start_position = {15.0, 16.0};
  const VideoClip v = render(f, c);
  const std::size_t frame = static_cast<std::size_t>(3 * c.height * c.width);
  for (int t = 1; t < v.frames; ++t) {
    CHECK(std::equal(v.pixels.begin(), v.pixels.begin() + static_cast<std::ptrdiff_t>(frame),
                     v.pixels.begin() + static_cast<std::ptrdiff_t>(frame * static_cast<std::size_t>(t))));
  }
}

TEST_CASE("move-right advances the centre by the velocity until clamped") {
  const SynthConfig c = small_config();
  Factors f;
  f.motion_program = {{static_cast<int>(Phase::MoveRight), 32}};
  f.start_position = {16.0, 12.0};
  const auto states = shape_trajectory(f, c);
  const double limit = c.width - 1 - c.base_radius;
  for (std::size_t t = 1; t < states.size(); ++t) {
    const double expected = std::min(12.0 + c.velocity * static_cast<double>(t), limit);
    CHECK(states[t].col == doctest::Approx(expected).epsilon(1e-12));
    CHECK(states[t].row == 16.0);
  }
  Factors far = f;
  far.start_position = {16.0, 24.0};
  const VideoClip clip = render(far, c);
  CHECK(clip.clamp_events > 0);
}

TEST_CASE("frame labels follow the motion program") {
  SynthConfig c = small_config();
  Factors f;
  f.motion_program = {{0, 10}, {5, 22}};
  f.start_position = {16, 16};
  const VideoClip v = render(f, c);
  std::vector<int> expected(10, 0);
  expected.insert(expected.end(), 22, 5);
  CHECK(v.frame_labels == expected);
}

TEST_CASE("render is pure and backgrounds stay fixed away from the shape") {
  const SynthConfig c = SynthConfig{};
  Rng rng(5);
  const Factors f = sample_factors(rng, c);
  const VideoClip a = render(f, c), b = render(f, c);
  CHECK(a == b);
  const auto bg = render_background(f.background_id, c.height, c.width);
  const auto states = shape_trajectory(f, c);
  for (int t = 0; t < a.frames; ++t) {
    const auto& s = states[static_cast<std::size_t>(t)];
    const double reach = 1.5 * c.base_radius * s.scale + 1.0;
    for (int h = 0; h < c.height; ++h)
      for (int w = 0; w < c.width; ++w) {
        if (std::hypot(h - s.row, w - s.col) <= reach) continue;
        for (int ch = 0; ch < 3; ++ch) {
          REQUIRE(a.at(t, ch, h, w) == bg[static_cast<std::size_t>((ch * c.height + h) * c.width + w)]);
        }
      }
  }
}

TEST_CASE("pixels lie in [0,1]") {
  const Corpus corpus = build_corpus(small_config(), 3);
  for (const auto& v : corpus.videos)
    for (float p : v.pixels) REQUIRE((p >= 0.0f && p <= 1.0f));
}

TEST_CASE("corpus splits and disk round trip") {
  SynthConfig c = small_config();
  c.n_train = 6;
  c.n_test = 2;
  const Corpus corpus = build_corpus(c, 7);
  CHECK(corpus.train.size() == 6);
  CHECK(corpus.test.size() == 2);
  for (int id : corpus.test) CHECK(std::find(corpus.train.begin(), corpus.train.end(), id) == corpus.train.end());

  const auto dir = temp_dir("corpus");
  save_corpus(corpus, dir);
  const Corpus back = load_corpus(dir);
  CHECK(back.seed == 7);
  CHECK(back.train == corpus.train);
  CHECK(back.test == corpus.test);
  REQUIRE(back.videos.size() == corpus.videos.size());
  for (std::size_t i = 0; i < corpus.videos.size(); ++i) CHECK(back.videos[i] == corpus.videos[i]);
  std::filesystem::remove_all(dir);
}

TEST_CASE("clip files reject corruption") {
  const Corpus corpus = build_corpus(small_config(), 2);
  const auto dir = temp_dir("clip");
  std::filesystem::create_directories(dir);
  write_clip(corpus.videos[0], dir / "a.bin");
  CHECK(read_clip(dir / "a.bin").pixels == corpus.videos[0].pixels);
  {
    std::fstream f(dir / "a.bin", std::ios::in | std::ios::out | std::ios::binary);
    f.write("XXXX", 4);
  }
  CHECK_THROWS_AS(read_clip(dir / "a.bin"), Error);
  std::filesystem::resize_file(dir / "a.bin", 40);
  CHECK_THROWS_AS(read_clip(dir / "a.bin"), Error);
  std::filesystem::remove_all(dir);
}

TEST_CASE("motion signature ignores phase order") {
  SynthConfig c = SynthConfig{};
  Factors a, b;
  a.motion_program = {{0, 20}, {4, 28}};
  b.motion_program = {{4, 24}, {0, 24}};
  CHECK(motion_signature(a, c) == motion_signature(b, c));
  Factors d;
  d.motion_program = {{1, 20}, {4, 28}};
  CHECK(motion_signature(a, c) != motion_signature(d, c));
}
