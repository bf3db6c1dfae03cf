#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "lsfd/viewkit.hpp"

#include <cmath>
#include <numeric>

using namespace lsfd;

namespace {

VideoClip make_clip(int frames, std::uint64_t seed = 3) {
  SynthConfig c;
  c.frames = frames;
  c.min_phase_len = std::min(4, frames);
  c.max_phase_len = std::max(c.min_phase_len, frames / 2);
  Rng rng(seed);
  return render(sample_factors(rng, c), c);
}

Tensor constant_frames(Index t, Index h, Index w, double value) {
  return Tensor({t, 3, h, w}, Vector::Constant(t * 3 * h * w, value));
}

std::vector<int> iota_stride(int count, int start, int stride) {
  std::vector<int> v(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) v[static_cast<std::size_t>(i)] = start + i * stride;
  return v;
}

}  // namespace

TEST_CASE("long view over 46 frames starts at 0 and shorts split it") {
  const VideoClip clip = make_clip(46);
  Rng rng(1);
  const ViewSet v = sample_views(clip, 2, 8, 3, StartPolicy::Uniform, rng, AugConfig{});
  CHECK(v.long_a.source_indices == iota_stride(16, 0, 3));
  CHECK(v.long_b.source_indices == v.long_a.source_indices);
  REQUIRE(v.shorts.size() == 2);
  CHECK(v.shorts[0].source_indices == iota_stride(8, 0, 3));
  CHECK(v.shorts[1].source_indices == iota_stride(8, 24, 3));
  CHECK(v.long_a.clip.shape() == Shape{3, 16, 16, 16});
  CHECK(v.shorts[0].clip.shape() == Shape{3, 8, 16, 16});
}

TEST_CASE("N=1 short view covers the long view") {
  const VideoClip clip = make_clip(48);
  Rng rng(2);
  const ViewSet v = sample_views(clip, 1, 8, 3, StartPolicy::Uniform, rng, AugConfig{});
  REQUIRE(v.shorts.size() == 1);
  CHECK(v.shorts[0].source_indices == v.long_a.source_indices);
}

TEST_CASE("too-short videos are rejected") {
  const VideoClip clip = make_clip(16);
  Rng rng(3);
  CHECK_THROWS_AS(sample_views(clip, 2, 8, 3, StartPolicy::Uniform, rng, AugConfig{}), Error);
}

TEST_CASE("shorts partition the long view for random draws") {
  const VideoClip clip = make_clip(48);
  Rng root(4);
  for (int i = 0; i < 200; ++i) {
    Rng rng = root.split(static_cast<std::uint64_t>(i));
    const int n = 1 + static_cast<int>(rng.below(3));
    const int l = 1 + static_cast<int>(rng.below(8));
    const ViewSet v = sample_views(clip, n, l, 2, StartPolicy::Uniform, rng, AugConfig{});
    std::vector<int> joined;
    for (const auto& s : v.shorts) joined.insert(joined.end(), s.source_indices.begin(), s.source_indices.end());
    CHECK(joined == v.long_a.source_indices);
    const int start = v.long_a.source_indices.front();
    CHECK(v.long_a.source_indices == iota_stride(n * l, start, 2));
    CHECK(v.long_a.source_indices.back() < clip.frames);
  }
}

TEST_CASE("centered start sits in the middle of the slack") {
  Rng rng(5);
  const auto idx = long_view_indices(48, 2, 8, 3, StartPolicy::Centered, rng);
  CHECK(idx.front() == 1);
}

TEST_CASE("sample_views is deterministic given the rng state") {
  const VideoClip clip = make_clip(48);
  Rng a(9), b(9);
  const ViewSet x = sample_views(clip, 2, 8, 3, StartPolicy::Uniform, a, AugConfig{});
  const ViewSet y = sample_views(clip, 2, 8, 3, StartPolicy::Uniform, b, AugConfig{});
  CHECK(x.long_a.aug == y.long_a.aug);
  CHECK(x.long_b.aug == y.long_b.aug);
  CHECK(x.long_a.clip.data() == y.long_a.clip.data());
  CHECK(x.shorts[1].clip.data() == y.shorts[1].clip.data());
}

TEST_CASE("aug params respect the configured bounds and frequencies") {
  AugConfig cfg;
  cfg.brightness = 0.5;
  cfg.contrast = 0.5;
  cfg.saturation = 0.5;
  cfg.hue = 0.25;
  Rng root(6);
  int flips = 0, drops = 0;
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) {
    Rng rng = root.split(static_cast<std::uint64_t>(i));
    const AugParams p = sample_aug_params(rng, cfg, 32, 32);
    const double frac = p.height * p.width / 1024.0;
    const double aspect = static_cast<double>(p.width) / p.height;
    CHECK(frac >= 0.5);
    CHECK(frac <= 1.0);
    CHECK(aspect >= 0.75);
    CHECK(aspect <= 4.0 / 3.0);
    CHECK(p.top + p.height <= 32);
    CHECK(p.left + p.width <= 32);
    CHECK(std::abs(p.brightness) <= 0.5);
    CHECK(std::abs(p.contrast) <= 0.5);
    CHECK(std::abs(p.saturation) <= 0.5);
    CHECK(std::abs(p.hue) <= 0.25);
    flips += p.hflip;
    drops += p.color_drop;
  }
  const double sd_flip = std::sqrt(draws * 0.25), sd_drop = std::sqrt(draws * 0.1 * 0.9);
  CHECK(std::abs(flips - draws * 0.5) < 3 * sd_flip);
  CHECK(std::abs(drops - draws * 0.1) < 3 * sd_drop);
}

TEST_CASE("identity augmentation at the input size is bit-identical") {
  const VideoClip clip = make_clip(8);
  const Tensor frames = gather_frames(clip, {0, 1, 2, 3});
  const Tensor out = augment(frames, AugParams::identity(32, 32, 32, 32));
  CHECK(out.data() == frames.data());
}

TEST_CASE("flipping twice restores the frames") {
  const VideoClip clip = make_clip(8);
  const Tensor frames = gather_frames(clip, {0, 5});
  AugParams flip = AugParams::identity(32, 32, 32, 32);
  flip.hflip = true;
  const Tensor once = augment(frames, flip);
  CHECK(once.data() != frames.data());
  CHECK(augment(once, flip).data() == frames.data());
}

TEST_CASE("brightness +0.5 maps 0.25 to 0.75") {
  AugParams p = AugParams::identity(4, 4, 4, 4);
  p.brightness = 0.5;
  const Tensor out = augment(constant_frames(2, 4, 4, 0.25), p);
  for (double v : out.data()) CHECK(v == doctest::Approx(0.75).epsilon(1e-15));
}

TEST_CASE("colour drop replicates luma") {
  Tensor frames({1, 3, 1, 1}, Vector{{0.2, 0.6, 0.9}});
  AugParams p = AugParams::identity(1, 1, 1, 1);
  p.color_drop = true;
  const Tensor out = augment(frames, p);
  const double y = 0.299 * 0.2 + 0.587 * 0.6 + 0.114 * 0.9;
  for (double v : out.data()) CHECK(v == doctest::Approx(y).epsilon(1e-15));
}

TEST_CASE("hue rotation by a full turn is the identity") {
  Tensor frames({1, 3, 1, 1}, Vector{{0.2, 0.6, 0.9}});
  AugParams p = AugParams::identity(1, 1, 1, 1);
  p.hue = 1.0;
  const Tensor out = augment(frames, p);
  CHECK(out.data()[0] == doctest::Approx(0.2).epsilon(1e-12));
  CHECK(out.data()[1] == doctest::Approx(0.6).epsilon(1e-12));
  CHECK(out.data()[2] == doctest::Approx(0.9).epsilon(1e-12));
}

TEST_CASE("every frame of a view gets the same transform") {
  const VideoClip clip = make_clip(8);
  const Tensor one = gather_frames(clip, {2});
  const Tensor many = gather_frames(clip, {2, 2, 2, 2});
  Rng root(8);
  for (int i = 0; i < 50; ++i) {
    Rng rng = root.split(static_cast<std::uint64_t>(i));
    const AugParams p = sample_aug_params(rng, AugConfig{}, 32, 32);
    const Tensor a = augment(one, p), b = augment(many, p);
    const Index plane = a.size();
    for (Index t = 0; t < 4; ++t) CHECK(b.data().segment(t * plane, plane) == a.data());
    CHECK(b.data().minCoeff() >= 0.0);
    CHECK(b.data().maxCoeff() <= 1.0);
  }
}

TEST_CASE("crops outside the frame are rejected") {
  AugParams p = AugParams::identity(4, 4, 4, 4);
  p.top = 1;
  CHECK_THROWS_AS(augment(constant_frames(1, 4, 4, 0.5), p), Error);
}

TEST_CASE("channels-first layout") {
  Vector v(2 * 3);
  std::iota(v.begin(), v.end(), 0.0);
  const Tensor x = to_channels_first(Tensor({2, 3, 1, 1}, v));
  CHECK(x.shape() == Shape{3, 2, 1, 1});
  CHECK(x.data() == Vector{{0, 3, 1, 4, 2, 5}});
}
