#include "lsfd/viewkit.hpp"

#include <algorithm>
#include <cmath>

namespace lsfd {

namespace {

void rgb_to_hsv(double r, double g, double b, double& h, double& s, double& v) {
  const double mx = std::max({r, g, b}), mn = std::min({r, g, b});
  const double d = mx - mn;
  v = mx;
  s = mx > 0.0 ? d / mx : 0.0;
  if (d == 0.0) {
    h = 0.0;
  } else if (mx == r) {
    h = std::fmod((g - b) / d + 6.0, 6.0) / 6.0;
  } else if (mx == g) {
    h = ((b - r) / d + 2.0) / 6.0;
  } else {
    h = ((r - g) / d + 4.0) / 6.0;
  }
}

void hsv_to_rgb(double h, double s, double v, double& r, double& g, double& b) {
  const double h6 = (h - std::floor(h)) * 6.0;
  const int sector = static_cast<int>(h6) % 6;
  const double f = h6 - std::floor(h6);
  const double p = v * (1.0 - s), q = v * (1.0 - s * f), t = v * (1.0 - s * (1.0 - f));
  switch (sector) {
    case 0: r = v, g = t, b = p; break;
    case 1: r = q, g = v, b = p; break;
    case 2: r = p, g = v, b = t; break;
    case 3: r = p, g = q, b = v; break;
    case 4: r = t, g = p, b = v; break;
    default: r = v, g = p, b = q; break;
  }
}

constexpr double luma(double r, double g, double b) { return 0.299 * r + 0.587 * g + 0.114 * b; }

}  // namespace

AugParams AugParams::identity(int height, int width, int out_h, int out_w) {
  AugParams p;
  p.height = height;
  p.width = width;
  p.out_h = out_h;
  p.out_w = out_w;
  return p;
}

AugParams sample_aug_params(Rng& rng, const AugConfig& config, int frame_h, int frame_w) {
  AugParams p = AugParams::identity(frame_h, frame_w, config.out_h, config.out_w);
  const double frame_area = static_cast<double>(frame_h) * frame_w;
  for (int attempt = 0; attempt < 20; ++attempt) {
    const double area = rng.uniform(config.min_area, config.max_area) * frame_area;
    const double ratio = std::exp(rng.uniform(std::log(config.min_aspect), std::log(config.max_aspect)));
    const int w = static_cast<int>(std::lround(std::sqrt(area * ratio)));
    const int h = static_cast<int>(std::lround(std::sqrt(area / ratio)));
    if (w < 1 || h < 1 || w > frame_w || h > frame_h) continue;
    // Rounding can push the rectangle out of bounds; the bounds are hard.
    const double frac = static_cast<double>(w) * h / frame_area;
    const double aspect = static_cast<double>(w) / h;
    if (frac < config.min_area || frac > config.max_area || aspect < config.min_aspect || aspect > config.max_aspect) {
      continue;
    }
    p.height = h;
    p.width = w;
    p.top = static_cast<int>(rng.below(static_cast<std::uint64_t>(frame_h - h + 1)));
    p.left = static_cast<int>(rng.below(static_cast<std::uint64_t>(frame_w - w + 1)));
    break;
  }
  p.hflip = rng.bernoulli(config.hflip_p);
  p.color_drop = rng.bernoulli(config.color_drop_p);
  if (rng.bernoulli(config.jitter_p)) {
    p.brightness = rng.uniform(-config.brightness, config.brightness);
    p.contrast = rng.uniform(-config.contrast, config.contrast);
    p.saturation = rng.uniform(-config.saturation, config.saturation);
    p.hue = rng.uniform(-config.hue, config.hue);
  }
  return p;
}

Tensor augment(const Tensor& frames, const AugParams& p) {
  if (frames.rank() != 4 || frames.dim(1) != 3) {
    throw Error(ErrorCode::Shape, "augment: expected [T,3,H,W], got " + shape_str(frames.shape()));
  }
  const Index t_count = frames.dim(0), in_h = frames.dim(2), in_w = frames.dim(3);
  if (p.top < 0 || p.left < 0 || p.height < 1 || p.width < 1 || p.top + p.height > in_h || p.left + p.width > in_w) {
    throw Error(ErrorCode::Value, "augment: crop rectangle outside the frame");
  }
  if (p.out_h < 1 || p.out_w < 1) throw Error(ErrorCode::Value, "augment: output size must be positive");
  const Index oh = p.out_h, ow = p.out_w;
  const Vector& src = frames.data();
  Vector out(t_count * 3 * oh * ow);

  // Bilinear, half-pixel centres. Sample positions are shared by every frame.
  struct Tap {
    Index i0, i1;
    double w1;
  };
  auto taps = [](Index out_n, Index crop_n, Index offset) {
    std::vector<Tap> v(static_cast<std::size_t>(out_n));
    const double ratio = static_cast<double>(crop_n) / out_n;
    for (Index o = 0; o < out_n; ++o) {
      double pos = (o + 0.5) * ratio - 0.5;
      pos = std::clamp(pos, 0.0, static_cast<double>(crop_n - 1));
      const Index i0 = static_cast<Index>(std::floor(pos));
      const Index i1 = std::min(i0 + 1, crop_n - 1);
      v[static_cast<std::size_t>(o)] = {i0 + offset, i1 + offset, pos - i0};
    }
    return v;
  };
  const auto ty = taps(oh, p.height, p.top);
  const auto tx = taps(ow, p.width, p.left);
  for (Index t = 0; t < t_count; ++t) {
    for (Index c = 0; c < 3; ++c) {
      const Index in_base = (t * 3 + c) * in_h * in_w;
      const Index out_base = (t * 3 + c) * oh * ow;
      for (Index y = 0; y < oh; ++y) {
        const Tap& a = ty[static_cast<std::size_t>(y)];
        for (Index x = 0; x < ow; ++x) {
          const Tap& b = tx[static_cast<std::size_t>(x)];
          const Index xo = p.hflip ? ow - 1 - x : x;
          const double top = src[in_base + a.i0 * in_w + b.i0] * (1.0 - b.w1) + src[in_base + a.i0 * in_w + b.i1] * b.w1;
          const double bot = src[in_base + a.i1 * in_w + b.i0] * (1.0 - b.w1) + src[in_base + a.i1 * in_w + b.i1] * b.w1;
          out[out_base + y * ow + xo] = top * (1.0 - a.w1) + bot * a.w1;
        }
      }
    }
  }

  const Index plane = oh * ow;
  for (Index t = 0; t < t_count; ++t) {
    double* r = out.data() + (t * 3 + 0) * plane;
    double* g = out.data() + (t * 3 + 1) * plane;
    double* b = out.data() + (t * 3 + 2) * plane;
    if (p.color_drop) {
      for (Index i = 0; i < plane; ++i) r[i] = g[i] = b[i] = luma(r[i], g[i], b[i]);
    }
    if (p.brightness != 0.0) {
      for (double* ch : {r, g, b})
        for (Index i = 0; i < plane; ++i) ch[i] += p.brightness;
    }
    if (p.contrast != 0.0) {
      double mean = 0.0;
      for (Index i = 0; i < plane; ++i) mean += luma(r[i], g[i], b[i]);
      mean /= static_cast<double>(plane);
      for (double* ch : {r, g, b})
        for (Index i = 0; i < plane; ++i) ch[i] = mean + (ch[i] - mean) * (1.0 + p.contrast);
    }
    if (p.saturation != 0.0 || p.hue != 0.0) {
      for (Index i = 0; i < plane; ++i) {
        double h, s, v;
        // HSV is defined on [0,1]; clamp before converting.
        rgb_to_hsv(std::clamp(r[i], 0.0, 1.0), std::clamp(g[i], 0.0, 1.0), std::clamp(b[i], 0.0, 1.0), h, s, v);
        s = std::clamp(s * (1.0 + p.saturation), 0.0, 1.0);
        h += p.hue;
        hsv_to_rgb(h, s, v, r[i], g[i], b[i]);
      }
    }
  }
  out = out.cwiseMax(0.0).cwiseMin(1.0);
  return Tensor({t_count, 3, oh, ow}, std::move(out));
}

Tensor to_channels_first(const Tensor& frames) {
  if (frames.rank() != 4) throw Error(ErrorCode::Shape, "to_channels_first: expected rank 4");
  const Index t = frames.dim(0), c = frames.dim(1), plane = frames.dim(2) * frames.dim(3);
  Vector out(frames.size());
  for (Index ti = 0; ti < t; ++ti)
    for (Index ci = 0; ci < c; ++ci)
      out.segment((ci * t + ti) * plane, plane) = frames.data().segment((ti * c + ci) * plane, plane);
  return Tensor({c, t, frames.dim(2), frames.dim(3)}, std::move(out));
}

Tensor gather_frames(const VideoClip& clip, const std::vector<int>& indices) {
  const Index plane = static_cast<Index>(3) * clip.height * clip.width;
  Vector out(static_cast<Index>(indices.size()) * plane);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const int t = indices[i];
    if (t < 0 || t >= clip.frames) throw Error(ErrorCode::Value, "gather_frames: index out of range");
    const float* src = clip.pixels.data() + static_cast<std::size_t>(t) * static_cast<std::size_t>(plane);
    for (Index j = 0; j < plane; ++j) out[static_cast<Index>(i) * plane + j] = src[j];
  }
  return Tensor({static_cast<Index>(indices.size()), 3, clip.height, clip.width}, std::move(out));
}

std::vector<int> long_view_indices(int frames, int n, int l, int stride, StartPolicy policy, Rng& rng) {
  if (n < 1 || l < 1 || stride < 1) throw Error(ErrorCode::Value, "sample_views: n, l, stride must be >= 1");
  const int span = (n * l - 1) * stride + 1;
  if (span > frames) {
    throw Error(ErrorCode::Value, "video too short: " + std::to_string(frames) + " frames, views need " +
                                      std::to_string(span));
  }
  const int slack = frames - span;
  const int start = policy == StartPolicy::Centered ? slack / 2 : static_cast<int>(rng.below(static_cast<std::uint64_t>(slack + 1)));
  std::vector<int> idx(static_cast<std::size_t>(n * l));
  for (int i = 0; i < n * l; ++i) idx[static_cast<std::size_t>(i)] = start + i * stride;
  return idx;
}

ViewSet sample_views(const VideoClip& video, int n, int l, int stride, StartPolicy policy, Rng& rng,
                     const AugConfig& aug) {
  ViewSet vs;
  vs.n = n;
  vs.l = l;
  vs.stride = stride;
  const auto indices = long_view_indices(video.frames, n, l, stride, policy, rng);
  const Tensor long_frames = gather_frames(video, indices);
  auto make = [&](std::vector<int> src, const Tensor& frames) {
    View v;
    v.source_indices = std::move(src);
    v.aug = sample_aug_params(rng, aug, video.height, video.width);
    v.clip = to_channels_first(augment(frames, v.aug));
    return v;
  };
  vs.long_a = make(indices, long_frames);
  vs.long_b = make(indices, long_frames);
  for (int j = 0; j < n; ++j) {
    std::vector<int> part(indices.begin() + j * l, indices.begin() + (j + 1) * l);
    vs.shorts.push_back(make(part, gather_frames(video, part)));
  }
  return vs;
}

Tensor plain_view(const VideoClip& video, const std::vector<int>& indices, int out_h, int out_w) {
  const auto p = AugParams::identity(video.height, video.width, out_h, out_w);
  return to_channels_first(augment(gather_frames(video, indices), p));
}

}  // namespace lsfd
