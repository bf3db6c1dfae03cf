#pragma once

#include "lsfd/rng.hpp"
#include "lsfd/synthvid.hpp"
#include "lsfd/tensor.hpp"

#include <vector>

namespace lsfd {

struct AugConfig {
  double min_area = 0.5;
  double max_area = 1.0;
  double min_aspect = 3.0 / 4.0;
  double max_aspect = 4.0 / 3.0;
  int out_h = 16;
  int out_w = 16;
  double hflip_p = 0.5;
  double jitter_p = 1.0;
  double brightness = 0.0;
  double contrast = 0.0;
  double saturation = 0.0;
  double hue = 0.0;
  double color_drop_p = 0.1;
};

struct AugParams {
  int top = 0, left = 0, height = 0, width = 0;
  int out_h = 0, out_w = 0;
  bool hflip = false;
  double brightness = 0.0, contrast = 0.0, saturation = 0.0, hue = 0.0;
  bool color_drop = false;

  /// Full-frame crop resized to (out_h, out_w), no flip, no colour change.
  static AugParams identity(int height, int width, int out_h, int out_w);
  bool operator==(const AugParams&) const = default;
};

AugParams sample_aug_params(Rng& rng, const AugConfig& config, int frame_h, int frame_w);

/// frames [T,3,H,W] -> [T,3,out_h,out_w]. Order: crop+resize, flip, colour
/// drop, jitter (brightness, contrast, saturation, hue), clamp to [0,1].
Tensor augment(const Tensor& frames, const AugParams& params);

/// [T,C,H,W] -> [C,T,H,W], the encoder's layout.
Tensor to_channels_first(const Tensor& frames);
/// Frames at `indices` as [n,3,H,W].
Tensor gather_frames(const VideoClip& clip, const std::vector<int>& indices);

enum class StartPolicy { Uniform, Centered };

struct View {
  std::vector<int> source_indices;
  AugParams aug;
  Tensor clip;  // [3, frames, out_h, out_w]
};

struct ViewSet {
  View long_a;  // query side
  View long_b;  // key side
  std::vector<View> shorts;
  int n = 0, l = 0, stride = 0;
};

/// Source indices of the long view: start + i * stride, i < n * l.
std::vector<int> long_view_indices(int frames, int n, int l, int stride, StartPolicy policy, Rng& rng);

ViewSet sample_views(const VideoClip& video, int n, int l, int stride, StartPolicy policy, Rng& rng,
                     const AugConfig& aug);

/// Un-augmented view of the given frames at the configured output size.
Tensor plain_view(const VideoClip& video, const std::vector<int>& indices, int out_h, int out_w);

}  // namespace lsfd
