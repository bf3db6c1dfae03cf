#include "lsfd/segkit.hpp"

#include "lsfd/trainkit.hpp"
#include "lsfd/viewkit.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

namespace lsfd {

std::vector<Segment> segments_from_frames(const std::vector<int>& frame_labels) {
  std::vector<Segment> segs;
  for (std::size_t t = 0; t < frame_labels.size(); ++t) {
    const int label = frame_labels[t];
    if (segs.empty() || segs.back().label != label) segs.push_back({label, static_cast<int>(t), static_cast<int>(t)});
    segs.back().end = static_cast<int>(t) + 1;
  }
  return segs;
}

std::vector<int> frames_from_segments(const std::vector<Segment>& segments) {
  std::vector<int> out;
  for (const auto& s : segments) out.insert(out.end(), static_cast<std::size_t>(s.end - s.start), s.label);
  return out;
}

namespace {

void check_lengths(const std::vector<int>& pred, const std::vector<int>& gt, const char* what) {
  if (pred.size() != gt.size()) {
    throw Error(ErrorCode::Shape, std::string(what) + ": prediction has " + std::to_string(pred.size()) +
                                      " frames, ground truth " + std::to_string(gt.size()));
  }
  if (gt.empty()) throw Error(ErrorCode::Value, std::string(what) + ": empty input");
}

int levenshtein(const std::vector<int>& a, const std::vector<int>& b) {
  std::vector<int> prev(b.size() + 1), cur(b.size() + 1);
  std::iota(prev.begin(), prev.end(), 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = static_cast<int>(i);
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const int sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

std::vector<int> labels_of(const std::vector<Segment>& segs) {
  std::vector<int> out;
  for (const auto& s : segs) out.push_back(s.label);
  return out;
}

Tensor he_uniform(Shape shape, Index fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  Vector v(numel(shape));
  for (Index i = 0; i < v.size(); ++i) v[i] = rng.uniform(-bound, bound);
  return Tensor(std::move(shape), std::move(v), true);
}

// Standardized features of equal-length sequences packed as [d, B, 1, T].
Tensor pack(const std::vector<const RowMatrix*>& seqs, const TcnProbe& probe) {
  const Index b = static_cast<Index>(seqs.size()), t = seqs[0]->rows(), d = seqs[0]->cols();
  Vector out(d * b * t);
  for (Index s = 0; s < b; ++s) {
    const RowMatrix z = (seqs[static_cast<std::size_t>(s)]->rowwise() - probe.mean).array().rowwise() / probe.sd.array();
    for (Index c = 0; c < d; ++c)
      for (Index i = 0; i < t; ++i) out[(c * b + s) * t + i] = z(i, c);
  }
  return Tensor({d, b, 1, t}, std::move(out));
}

// Logits [B*T, C], rows ordered sequence-major.
Tensor tcn_forward(const TcnProbe& p, const Tensor& x) {
  Tensor h = add_channel_bias(conv3d(x, p.in_w), p.in_b);
  for (std::size_t i = 0; i < p.layer_w.size(); ++i) {
    const Index dil = Index{1} << i;
    Tensor c = conv3d(h, p.layer_w[i], {1, 1, 1}, {0, 0, dil}, {1, 1, dil});
    h = add(h, relu(add_channel_bias(c, p.layer_b[i])));
  }
  Tensor out = add_channel_bias(conv3d(h, p.out_w), p.out_b);
  const Index classes = out.dim(0);
  return transpose(reshape(out, {classes, out.size() / classes}));
}

}  // namespace

double framewise_accuracy(const std::vector<int>& pred, const std::vector<int>& gt) {
  check_lengths(pred, gt, "framewise_accuracy");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) hits += pred[i] == gt[i];
  return 100.0 * static_cast<double>(hits) / static_cast<double>(gt.size());
}

double edit_score(const std::vector<int>& pred, const std::vector<int>& gt) {
  if (pred.empty() || gt.empty()) throw Error(ErrorCode::Value, "edit_score: empty input");
  const auto p = labels_of(segments_from_frames(pred)), g = labels_of(segments_from_frames(gt));
  const double dist = levenshtein(p, g);
  return 100.0 * (1.0 - dist / static_cast<double>(std::max(p.size(), g.size())));
}

double f1_at(const std::vector<int>& pred, const std::vector<int>& gt, double threshold) {
  check_lengths(pred, gt, "f1_at");
  if (!(threshold > 0.0 && threshold < 1.0)) throw Error(ErrorCode::Value, "f1_at: threshold must lie in (0,1)");
  const auto ps = segments_from_frames(pred), gs = segments_from_frames(gt);
  std::vector<bool> used(gs.size(), false);
  double tp = 0, fp = 0;
  for (const auto& p : ps) {
    double best = -1.0;
    std::size_t best_j = 0;
    for (std::size_t j = 0; j < gs.size(); ++j) {
      if (used[j] || gs[j].label != p.label) continue;
      const double inter = std::max(0, std::min(p.end, gs[j].end) - std::max(p.start, gs[j].start));
      const double uni = std::max(p.end, gs[j].end) - std::min(p.start, gs[j].start);
      const double iou = inter / uni;
      if (iou > best) {
        best = iou;
        best_j = j;
      }
    }
    if (best >= threshold) {
      tp += 1;
      used[best_j] = true;
    } else {
      fp += 1;
    }
  }
  const double fn = static_cast<double>(gs.size()) - tp;
  const double precision = tp / (tp + fp), recall = tp / (tp + fn);
  if (precision + recall == 0.0) return 0.0;
  return 100.0 * 2.0 * precision * recall / (precision + recall);
}

SegMetrics seg_metrics(const std::vector<int>& pred, const std::vector<int>& gt) {
  return {framewise_accuracy(pred, gt), edit_score(pred, gt), f1_at(pred, gt, 0.10), f1_at(pred, gt, 0.25),
          f1_at(pred, gt, 0.50)};
}

SegMetrics mean_metrics(const std::vector<SegMetrics>& rows) {
  SegMetrics m;
  if (rows.empty()) return m;
  for (const auto& r : rows) {
    m.acc += r.acc;
    m.edit += r.edit;
    m.f1_10 += r.f1_10;
    m.f1_25 += r.f1_25;
    m.f1_50 += r.f1_50;
  }
  const double n = static_cast<double>(rows.size());
  m.acc /= n;
  m.edit /= n;
  m.f1_10 /= n;
  m.f1_25 /= n;
  m.f1_50 /= n;
  return m;
}

NamedTensors TcnProbe::parameters() const {
  NamedTensors out{{"in_w", in_w}, {"in_b", in_b}};
  for (std::size_t i = 0; i < layer_w.size(); ++i) {
    out.emplace_back("layer" + std::to_string(i) + "_w", layer_w[i]);
    out.emplace_back("layer" + std::to_string(i) + "_b", layer_b[i]);
  }
  out.emplace_back("out_w", out_w);
  out.emplace_back("out_b", out_b);
  return out;
}

TcnProbe tcn_probe_train(const std::vector<RowMatrix>& features, const std::vector<std::vector<int>>& labels,
                         const TcnConfig& config) {
  if (features.empty() || features.size() != labels.size()) {
    throw Error(ErrorCode::Shape, "tcn_probe_train: need one label sequence per feature sequence");
  }
  const Index d = features[0].cols();
  Index total = 0;
  int max_label = 0;
  for (std::size_t i = 0; i < features.size(); ++i) {
    if (features[i].rows() != static_cast<Index>(labels[i].size()) || features[i].rows() == 0) {
      throw Error(ErrorCode::Shape, "tcn_probe_train: sequence " + std::to_string(i) + " has " +
                                        std::to_string(features[i].rows()) + " feature rows and " +
                                        std::to_string(labels[i].size()) + " labels");
    }
    if (features[i].cols() != d) throw Error(ErrorCode::Shape, "tcn_probe_train: feature widths differ");
    total += features[i].rows();
    for (int y : labels[i]) {
      if (y < 0) throw Error(ErrorCode::Value, "tcn_probe_train: negative label");
      max_label = std::max(max_label, y);
    }
  }

  TcnProbe p;
  p.classes = max_label + 1;
  p.mean = Eigen::RowVectorXd::Zero(d);
  for (const auto& f : features) p.mean += f.colwise().sum();
  p.mean /= static_cast<double>(total);
  p.sd = Eigen::RowVectorXd::Zero(d);
  for (const auto& f : features) p.sd += (f.rowwise() - p.mean).array().square().matrix().colwise().sum();
  p.sd = (p.sd / static_cast<double>(total)).cwiseSqrt();
  for (Index j = 0; j < d; ++j)
    if (p.sd[j] < 1e-12) p.sd[j] = 1.0;

  Rng rng(config.seed);
  Rng init = rng.split(1);
  const Index h = config.hidden;
  p.in_w = he_uniform({h, d, 1, 1, 1}, d, init);
  p.in_b = Tensor::zeros({h}, true);
  for (int i = 0; i < config.layers; ++i) {
    p.layer_w.push_back(he_uniform({h, h, 1, 1, 3}, 3 * h, init));
    p.layer_b.push_back(Tensor::zeros({h}, true));
  }
  p.out_w = he_uniform({p.classes, h, 1, 1, 1}, h, init);
  p.out_b = Tensor::zeros({p.classes}, true);

  // Batches only mix sequences of equal length.
  std::map<Index, std::vector<int>> by_length;
  for (std::size_t i = 0; i < features.size(); ++i) by_length[features[i].rows()].push_back(static_cast<int>(i));

  const NamedTensors params = p.parameters();
  OptimState opt;
  opt.lr = config.lr;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    Rng shuffle = rng.split(100 + static_cast<std::uint64_t>(epoch));
    std::vector<std::vector<int>> batches;
    for (auto& [len, ids] : by_length) {
      std::vector<int> order = ids;
      for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle.below(i)]);
      for (std::size_t s = 0; s < order.size(); s += static_cast<std::size_t>(config.batch_size)) {
        const auto e = std::min(order.size(), s + static_cast<std::size_t>(config.batch_size));
        batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(s), order.begin() + static_cast<std::ptrdiff_t>(e));
      }
    }
    double epoch_loss = 0.0;
    for (const auto& batch : batches) {
      std::vector<const RowMatrix*> seqs;
      std::vector<int> y;
      for (int i : batch) {
        seqs.push_back(&features[static_cast<std::size_t>(i)]);
        const auto& l = labels[static_cast<std::size_t>(i)];
        y.insert(y.end(), l.begin(), l.end());
      }
      Tensor loss = softmax_cross_entropy(tcn_forward(p, pack(seqs, p)), y);
      epoch_loss += loss.item() * static_cast<double>(y.size());
      backward(loss);
      adam_step(params, opt);
      zero_grad(params);
    }
    p.loss_history.push_back(epoch_loss / static_cast<double>(total));
    opt.lr = plateau_schedule(p.loss_history, opt.lr, config.plateau_patience, config.plateau_factor);
  }
  return p;
}

std::vector<int> tcn_probe_predict(const TcnProbe& probe, const RowMatrix& features) {
  if (features.cols() != probe.mean.size()) {
    throw Error(ErrorCode::Shape, "tcn_probe_predict: feature width " + std::to_string(features.cols()) + " vs " +
                                      std::to_string(probe.mean.size()));
  }
  NoGradGuard guard;
  const Tensor logits = tcn_forward(probe, pack({&features}, probe));
  std::vector<int> pred;
  const Index c = probe.classes;
  for (Index t = 0; t < features.rows(); ++t) {
    Index best = 0;
    for (Index k = 1; k < c; ++k)
      if (logits.data()[t * c + k] > logits.data()[t * c + best]) best = k;
    pred.push_back(static_cast<int>(best));
  }
  return pred;
}

RowMatrix frame_features(const Encoder& encoder, const VideoClip& video, int window, int out_h, int out_w) {
  if (window < 1 || window > video.frames) {
    throw Error(ErrorCode::Value, "frame_features: window " + std::to_string(window) + " vs " +
                                      std::to_string(video.frames) + " frames");
  }
  NoGradGuard guard;
  RowMatrix out(video.frames, encoder.feature_dim());
  std::map<int, Vector> cache;  // by window start
  for (int t = 0; t < video.frames; ++t) {
    const int start = std::clamp(t - window / 2, 0, video.frames - window);
    auto it = cache.find(start);
    if (it == cache.end()) {
      std::vector<int> idx(static_cast<std::size_t>(window));
      std::iota(idx.begin(), idx.end(), start);
      it = cache.emplace(start, encoder.encode(plain_view(video, idx, out_h, out_w)).xi.data()).first;
    }
    out.row(t) = it->second.transpose();
  }
  return out;
}

RowMatrix select_kind(const RowMatrix& xi, FeatureKind kind) {
  const Index half = xi.cols() / 2;
  switch (kind) {
    case FeatureKind::S: return xi.leftCols(half);
    case FeatureKind::N: return xi.rightCols(half);
    case FeatureKind::F: return xi;
  }
  return xi;
}

}  // namespace lsfd
