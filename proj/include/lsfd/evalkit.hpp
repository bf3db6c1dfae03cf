#pragma once

#include "lsfd/model.hpp"
#include "lsfd/synthvid.hpp"

#include <optional>
#include <string>
#include <vector>

namespace lsfd {

enum class FeatureKind { S, N, F };  // ψ, φ, ξ = ψ ⧺ φ

FeatureKind parse_feature_kind(const std::string& name);
std::string to_string(FeatureKind kind);

enum class LabelTask { Static, Dynamic };  // background id, motion class

std::string to_string(LabelTask task);

/// Geometry of the evaluation view: N*L frames at `stride`, centered, no augmentation.
struct ViewPolicy {
  int n = 2;
  int l = 8;
  int stride = 3;
  int out_h = 16;
  int out_w = 16;
};

/// Dense motion-class ids: distinct motion signatures over the whole corpus,
/// numbered in increasing signature order.
std::vector<int> dynamic_labels(const Corpus& corpus);

/// One row per corpus video, in video-id order (train rows first).
struct FeatureTable {
  std::vector<int> ids;
  std::vector<bool> is_test;
  std::vector<int> background;
  std::vector<int> dynamic;
  RowMatrix xi;  // [videos, D]

  Index rows() const { return xi.rows(); }
  Index half() const { return xi.cols() / 2; }
  RowMatrix features(FeatureKind kind) const;
  const std::vector<int>& labels(LabelTask task) const { return task == LabelTask::Static ? background : dynamic; }
  std::vector<int> train_rows() const;
  std::vector<int> test_rows() const;
};

FeatureTable extract_features(const Encoder& encoder, const Corpus& corpus, const ViewPolicy& policy);

/// Rows of `m` scaled to unit norm; throws E_NUMERIC on a zero row.
RowMatrix normalize_rows(const RowMatrix& m);

/// Gallery indices ordered by decreasing cosine similarity, ties by lower index.
std::vector<std::vector<int>> rank_gallery(const RowMatrix& queries, const RowMatrix& gallery);

/// Percentage of queries whose top-k gallery items contain a same-label item.
double recall_at_k(const RowMatrix& gallery, const std::vector<int>& gallery_labels, const RowMatrix& queries,
                   const std::vector<int>& query_labels, int k);
/// Test rows as queries against train rows.
double recall_at_k(const FeatureTable& table, LabelTask task, FeatureKind kind, int k);
std::vector<double> recall_at_ks(const FeatureTable& table, LabelTask task, FeatureKind kind, const std::vector<int>& ks);

struct PRPoint {
  int k = 0;
  double precision = 0;
  double recall = 0;
};

/// Micro-averaged over queries: precision(k) = sum TP / (Q k), recall(k) =
/// sum TP / sum relevant. Queries whose label is absent from the gallery add
/// nothing to recall and are counted in `absent_queries`.
struct PRCurve {
  std::vector<PRPoint> points;  // k = 1..|gallery|
  int absent_queries = 0;
};

PRCurve pr_curve(const RowMatrix& gallery, const std::vector<int>& gallery_labels, const RowMatrix& queries,
                 const std::vector<int>& query_labels);
PRCurve pr_curve(const FeatureTable& table, LabelTask task, FeatureKind kind);

struct ProbeConfig {
  int epochs = 200;
  double lr = 1e-2;
};

/// Full-batch softmax regression on standardized train features (statistics
/// from the train rows). Returns predicted test labels.
std::vector<int> linear_probe_predict(const RowMatrix& train_x, const std::vector<int>& train_y,
                                      const RowMatrix& test_x, const ProbeConfig& config = {});
/// Test accuracy in percent.
double linear_probe(const RowMatrix& train_x, const std::vector<int>& train_y, const RowMatrix& test_x,
                    const std::vector<int>& test_y, const ProbeConfig& config = {});
double linear_probe(const FeatureTable& table, LabelTask task, FeatureKind kind, const ProbeConfig& config = {});

struct Histogram {
  double lo = -1.0, hi = 1.0;
  std::vector<long> counts;
  long samples = 0;
  double mean = 0.0;

  double bin_left(std::size_t i) const;
  double bin_right(std::size_t i) const;
};

/// Values outside [lo, hi] land in the edge bins.
Histogram make_histogram(const std::vector<double>& values, int bins = 40, double lo = -1.0, double hi = 1.0);

/// Cosine of two vectors; throws E_NUMERIC when either is zero.
double cosine_value(const Vector& a, const Vector& b);

struct StabilityResult {
  Histogram psi, phi;
  int videos_used = 0;
  int videos_skipped = 0;
};

/// Consecutive non-overlapping clips of `clip_len` frames per video; cosine of
/// successive clips' ψ and φ. Features are centred on the mean clip feature
/// of `reference_ids` (no centring when empty).
StabilityResult temporal_stability_hist(const Encoder& encoder, const Corpus& corpus, const std::vector<int>& video_ids,
                                        const std::vector<int>& reference_ids, int clip_len = 16, int out_h = 16,
                                        int out_w = 16);

/// cos(ψ, φ) per listed table row, after centring ξ on the train-row mean
/// when `centered`.
Histogram sn_similarity_hist(const FeatureTable& table, const std::vector<int>& rows, bool centered = true);

struct FramesNeededResult {
  std::vector<int> frame_counts;
  std::vector<double> probe_accuracy;          // per count, percent
  std::vector<std::vector<int>> subsets;       // test video ids per count
  std::vector<std::optional<double>> r1_psi;   // empty subset -> nullopt
  std::vector<std::optional<double>> r1_phi;
};

/// Per frame count n: dynamic-label probe on ξ of the centered n-frame clip
/// (frames at `policy.stride`). subset(n) holds test videos correct at n and
/// wrong at every smaller count; R@1 on long-view ψ and φ within each subset.
FramesNeededResult frames_needed_partition(const Encoder& encoder, const Corpus& corpus, const FeatureTable& table,
                                           const ViewPolicy& policy, const std::vector<int>& frame_counts = {1, 2, 4, 8},
                                           const ProbeConfig& probe = {});

}  // namespace lsfd
