#pragma once

#include "lsfd/evalkit.hpp"

#include <vector>

namespace lsfd {

struct Segment {
  int label = 0;
  int start = 0;
  int end = 0;  // exclusive
  bool operator==(const Segment&) const = default;
};

/// Maximal constant runs in order.
std::vector<Segment> segments_from_frames(const std::vector<int>& frame_labels);
std::vector<int> frames_from_segments(const std::vector<Segment>& segments);

/// Percentage of frames with equal labels.
double framewise_accuracy(const std::vector<int>& pred, const std::vector<int>& gt);

/// 100 * (1 - Levenshtein(segment labels) / max segment count).
double edit_score(const std::vector<int>& pred, const std::vector<int>& gt);

/// Segmental F1 at an IoU threshold, in percent. Each predicted segment, in
/// order, takes the unmatched same-label ground-truth segment of highest IoU
/// and counts as a hit when that IoU reaches the threshold.
double f1_at(const std::vector<int>& pred, const std::vector<int>& gt, double threshold);

struct SegMetrics {
  double acc = 0, edit = 0, f1_10 = 0, f1_25 = 0, f1_50 = 0;
};

SegMetrics seg_metrics(const std::vector<int>& pred, const std::vector<int>& gt);
/// Unweighted mean over videos.
SegMetrics mean_metrics(const std::vector<SegMetrics>& rows);

struct TcnConfig {
  int hidden = 32;
  int layers = 6;  // dilations 1, 2, 4, ...
  int epochs = 300;
  int batch_size = 16;
  double lr = 5e-4;
  int plateau_patience = 10;
  double plateau_factor = 2.0;
  std::uint64_t seed = 1;
};

/// Single-stage dilated temporal convolution probe: 1x1 input conv, residual
/// dilated layers x + relu(conv_k3(x)), 1x1 output conv, per-frame softmax.
struct TcnProbe {
  Tensor in_w, in_b;
  std::vector<Tensor> layer_w, layer_b;
  Tensor out_w, out_b;
  Eigen::RowVectorXd mean, sd;  // input standardization
  int classes = 0;
  std::vector<double> loss_history;

  NamedTensors parameters() const;
};

/// Each sequence is [T, d] with T labels.
TcnProbe tcn_probe_train(const std::vector<RowMatrix>& features, const std::vector<std::vector<int>>& labels,
                         const TcnConfig& config = {});
std::vector<int> tcn_probe_predict(const TcnProbe& probe, const RowMatrix& features);

/// Per-frame ξ for one video: encoder applied to the `window`-frame clip
/// centered on each frame, shifted to stay inside the video.
RowMatrix frame_features(const Encoder& encoder, const VideoClip& video, int window = 16, int out_h = 16,
                         int out_w = 16);

/// Column block of per-frame ξ for a feature kind.
RowMatrix select_kind(const RowMatrix& xi, FeatureKind kind);

}  // namespace lsfd
