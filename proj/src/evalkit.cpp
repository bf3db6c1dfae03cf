#include "lsfd/evalkit.hpp"

#include "lsfd/trainkit.hpp"
#include "lsfd/viewkit.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

namespace lsfd {

FeatureKind parse_feature_kind(const std::string& name) {
  if (name == "s" || name == "S") return FeatureKind::S;
  if (name == "n" || name == "N") return FeatureKind::N;
  if (name == "f" || name == "F") return FeatureKind::F;
  throw Error(ErrorCode::Config, "unknown feature kind '" + name + "' (expected s, n, f)");
}

std::string to_string(FeatureKind kind) {
  switch (kind) {
    case FeatureKind::S: return "s";
    case FeatureKind::N: return "n";
    case FeatureKind::F: return "f";
  }
  return "?";
}

std::string to_string(LabelTask task) { return task == LabelTask::Static ? "static" : "dynamic"; }

std::vector<int> dynamic_labels(const Corpus& corpus) {
  std::vector<std::int64_t> sig;
  for (const auto& v : corpus.videos) sig.push_back(motion_signature(v.factors, corpus.config));
  std::map<std::int64_t, int> dense;
  for (auto s : sig) dense.emplace(s, 0);
  int next = 0;
  for (auto& [s, id] : dense) id = next++;
  std::vector<int> out;
  for (auto s : sig) out.push_back(dense[s]);
  return out;
}

RowMatrix FeatureTable::features(FeatureKind kind) const {
  switch (kind) {
    case FeatureKind::S: return xi.leftCols(half());
    case FeatureKind::N: return xi.rightCols(half());
    case FeatureKind::F: return xi;
  }
  return xi;
}

std::vector<int> FeatureTable::train_rows() const {
  std::vector<int> r;
  for (std::size_t i = 0; i < is_test.size(); ++i)
    if (!is_test[i]) r.push_back(static_cast<int>(i));
  return r;
}

std::vector<int> FeatureTable::test_rows() const {
  std::vector<int> r;
  for (std::size_t i = 0; i < is_test.size(); ++i)
    if (is_test[i]) r.push_back(static_cast<int>(i));
  return r;
}

namespace {

RowMatrix take_rows(const RowMatrix& m, const std::vector<int>& rows) {
  RowMatrix out(static_cast<Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Index>(i)) = m.row(rows[i]);
  return out;
}

std::vector<int> take(const std::vector<int>& v, const std::vector<int>& rows) {
  std::vector<int> out;
  for (int r : rows) out.push_back(v[static_cast<std::size_t>(r)]);
  return out;
}

Vector encode_values(const Encoder& encoder, const Tensor& clip) {
  NoGradGuard guard;
  return encoder.encode(clip).xi.data();
}

std::vector<int> centered_indices(int frames, int count, int stride) {
  Rng unused(0);
  return long_view_indices(frames, 1, count, stride, StartPolicy::Centered, unused);
}

}  // namespace

FeatureTable extract_features(const Encoder& encoder, const Corpus& corpus, const ViewPolicy& policy) {
  FeatureTable t;
  const auto dyn = dynamic_labels(corpus);
  const Index n = static_cast<Index>(corpus.videos.size());
  t.xi.resize(n, encoder.feature_dim());
  Rng unused(0);
  for (Index i = 0; i < n; ++i) {
    const int id = static_cast<int>(i);
    const VideoClip& v = corpus.video(id);
    const auto idx = long_view_indices(v.frames, policy.n, policy.l, policy.stride, StartPolicy::Centered, unused);
    t.xi.row(i) = encode_values(encoder, plain_view(v, idx, policy.out_h, policy.out_w)).transpose();
    t.ids.push_back(id);
    t.is_test.push_back(corpus.is_test(id));
    t.background.push_back(v.factors.background_id);
    t.dynamic.push_back(dyn[static_cast<std::size_t>(i)]);
  }
  return t;
}

RowMatrix normalize_rows(const RowMatrix& m) {
  RowMatrix out = m;
  for (Index i = 0; i < m.rows(); ++i) {
    const double norm = m.row(i).norm();
    if (norm == 0.0) throw Error(ErrorCode::Numeric, "zero feature vector in row " + std::to_string(i));
    out.row(i) /= norm;
  }
  return out;
}

std::vector<std::vector<int>> rank_gallery(const RowMatrix& queries, const RowMatrix& gallery) {
  if (queries.rows() == 0 || gallery.rows() == 0) throw Error(ErrorCode::Value, "retrieval: empty split");
  if (queries.cols() != gallery.cols()) throw Error(ErrorCode::Shape, "retrieval: feature widths differ");
  const RowMatrix sims = normalize_rows(queries) * normalize_rows(gallery).transpose();
  std::vector<std::vector<int>> out(static_cast<std::size_t>(queries.rows()));
  for (Index q = 0; q < queries.rows(); ++q) {
    auto& order = out[static_cast<std::size_t>(q)];
    order.resize(static_cast<std::size_t>(gallery.rows()));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return sims(q, a) > sims(q, b); });
  }
  return out;
}

double recall_at_k(const RowMatrix& gallery, const std::vector<int>& gallery_labels, const RowMatrix& queries,
                   const std::vector<int>& query_labels, int k) {
  if (k < 1) throw Error(ErrorCode::Value, "recall_at_k: k must be >= 1");
  const auto ranks = rank_gallery(queries, gallery);
  int hits = 0;
  for (std::size_t q = 0; q < ranks.size(); ++q) {
    const auto& r = ranks[q];
    const std::size_t top = std::min(r.size(), static_cast<std::size_t>(k));
    for (std::size_t i = 0; i < top; ++i) {
      if (gallery_labels[static_cast<std::size_t>(r[i])] == query_labels[q]) {
        ++hits;
        break;
      }
    }
  }
  return 100.0 * hits / static_cast<double>(ranks.size());
}

std::vector<double> recall_at_ks(const FeatureTable& table, LabelTask task, FeatureKind kind,
                                 const std::vector<int>& ks) {
  const auto train = table.train_rows(), test = table.test_rows();
  const RowMatrix f = table.features(kind);
  const RowMatrix g = take_rows(f, train), q = take_rows(f, test);
  const auto gl = take(table.labels(task), train), ql = take(table.labels(task), test);
  const auto ranks = rank_gallery(q, g);
  std::vector<double> out;
  for (int k : ks) {
    if (k < 1) throw Error(ErrorCode::Value, "recall_at_k: k must be >= 1");
    int hits = 0;
    for (std::size_t i = 0; i < ranks.size(); ++i) {
      const std::size_t top = std::min(ranks[i].size(), static_cast<std::size_t>(k));
      for (std::size_t j = 0; j < top; ++j) {
        if (gl[static_cast<std::size_t>(ranks[i][j])] == ql[i]) {
          ++hits;
          break;
        }
      }
    }
    out.push_back(100.0 * hits / static_cast<double>(ranks.size()));
  }
  return out;
}

double recall_at_k(const FeatureTable& table, LabelTask task, FeatureKind kind, int k) {
  return recall_at_ks(table, task, kind, {k})[0];
}

PRCurve pr_curve(const RowMatrix& gallery, const std::vector<int>& gallery_labels, const RowMatrix& queries,
                 const std::vector<int>& query_labels) {
  const auto ranks = rank_gallery(queries, gallery);
  const std::size_t g = static_cast<std::size_t>(gallery.rows());
  std::vector<double> tp(g, 0.0);
  double relevant = 0.0;
  PRCurve curve;
  for (std::size_t q = 0; q < ranks.size(); ++q) {
    const auto rel = std::count(gallery_labels.begin(), gallery_labels.end(), query_labels[q]);
    if (rel == 0) ++curve.absent_queries;
    relevant += static_cast<double>(rel);
    double hits = 0.0;
    for (std::size_t i = 0; i < g; ++i) {
      if (gallery_labels[static_cast<std::size_t>(ranks[q][i])] == query_labels[q]) hits += 1.0;
      tp[i] += hits;
    }
  }
  const double nq = static_cast<double>(ranks.size());
  for (std::size_t i = 0; i < g; ++i) {
    const double k = static_cast<double>(i + 1);
    curve.points.push_back({static_cast<int>(i + 1), tp[i] / (nq * k), relevant > 0 ? tp[i] / relevant : 0.0});
  }
  return curve;
}

PRCurve pr_curve(const FeatureTable& table, LabelTask task, FeatureKind kind) {
  const auto train = table.train_rows(), test = table.test_rows();
  const RowMatrix f = table.features(kind);
  return pr_curve(take_rows(f, train), take(table.labels(task), train), take_rows(f, test),
                  take(table.labels(task), test));
}

std::vector<int> linear_probe_predict(const RowMatrix& train_x, const std::vector<int>& train_y,
                                      const RowMatrix& test_x, const ProbeConfig& config) {
  if (train_x.rows() != static_cast<Index>(train_y.size()) || train_x.rows() == 0) {
    throw Error(ErrorCode::Shape, "linear_probe: feature/label count mismatch");
  }
  if (test_x.cols() != train_x.cols()) throw Error(ErrorCode::Shape, "linear_probe: feature widths differ");
  const int classes = *std::max_element(train_y.begin(), train_y.end()) + 1;
  if (std::all_of(train_y.begin(), train_y.end(), [&](int y) { return y == train_y[0]; })) {
    throw Error(ErrorCode::Value, "linear_probe: train split has a single class");
  }

  const Eigen::RowVectorXd mean = train_x.colwise().mean();
  Eigen::RowVectorXd sd = ((train_x.rowwise() - mean).array().square().colwise().mean()).sqrt();
  for (Index j = 0; j < sd.size(); ++j)
    if (sd[j] < 1e-12) sd[j] = 1.0;
  auto standardize = [&](const RowMatrix& x) {
    RowMatrix z = (x.rowwise() - mean).array().rowwise() / sd.array();
    return Tensor({z.rows(), z.cols()}, Vector(Eigen::Map<const Vector>(z.data(), z.size())));
  };
  const Tensor x = standardize(train_x);
  const Index d = train_x.cols();
  Tensor w = Tensor::zeros({d, classes}, true);
  Tensor b = Tensor::zeros({classes}, true);
  const NamedTensors params{{"w", w}, {"b", b}};
  OptimState opt;
  opt.lr = config.lr;
  for (int e = 0; e < config.epochs; ++e) {
    backward(softmax_cross_entropy(add_row_bias(matmul(x, w), b), train_y));
    adam_step(params, opt);
    zero_grad(params);
  }

  NoGradGuard guard;
  const Tensor logits = add_row_bias(matmul(standardize(test_x), w), b);
  std::vector<int> pred;
  for (Index i = 0; i < test_x.rows(); ++i) {
    Index best = 0;
    for (Index c = 1; c < classes; ++c)
      if (logits.data()[i * classes + c] > logits.data()[i * classes + best]) best = c;
    pred.push_back(static_cast<int>(best));
  }
  return pred;
}

double linear_probe(const RowMatrix& train_x, const std::vector<int>& train_y, const RowMatrix& test_x,
                    const std::vector<int>& test_y, const ProbeConfig& config) {
  if (test_x.rows() != static_cast<Index>(test_y.size()) || test_y.empty()) {
    throw Error(ErrorCode::Shape, "linear_probe: test feature/label count mismatch");
  }
  const auto pred = linear_probe_predict(train_x, train_y, test_x, config);
  int correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == test_y[i];
  return 100.0 * correct / static_cast<double>(pred.size());
}

double linear_probe(const FeatureTable& table, LabelTask task, FeatureKind kind, const ProbeConfig& config) {
  const auto train = table.train_rows(), test = table.test_rows();
  const RowMatrix f = table.features(kind);
  return linear_probe(take_rows(f, train), take(table.labels(task), train), take_rows(f, test),
                      take(table.labels(task), test), config);
}

double Histogram::bin_left(std::size_t i) const {
  return lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(counts.size());
}

double Histogram::bin_right(std::size_t i) const { return bin_left(i + 1); }

Histogram make_histogram(const std::vector<double>& values, int bins, double lo, double hi) {
  if (bins < 1 || !(hi > lo)) throw Error(ErrorCode::Value, "histogram: need bins >= 1 and hi > lo");
  Histogram h;
  h.lo = lo;
  h.hi = hi;
  h.counts.assign(static_cast<std::size_t>(bins), 0);
  double sum = 0.0;
  for (double v : values) {
    auto b = static_cast<long>(std::floor((v - lo) / (hi - lo) * bins));
    b = std::clamp(b, 0L, static_cast<long>(bins - 1));
    ++h.counts[static_cast<std::size_t>(b)];
    sum += v;
  }
  h.samples = static_cast<long>(values.size());
  h.mean = values.empty() ? 0.0 : sum / static_cast<double>(values.size());
  return h;
}

double cosine_value(const Vector& a, const Vector& b) {
  const double na = a.norm(), nb = b.norm();
  if (na == 0.0 || nb == 0.0) throw Error(ErrorCode::Numeric, "cosine of a zero vector");
  return a.dot(b) / (na * nb);
}

StabilityResult temporal_stability_hist(const Encoder& encoder, const Corpus& corpus, const std::vector<int>& video_ids,
                                        const std::vector<int>& reference_ids, int clip_len, int out_h, int out_w) {
  if (clip_len < 1) throw Error(ErrorCode::Value, "temporal stability: clip_len must be >= 1");
  auto clip_features = [&](int id) {
    const VideoClip& v = corpus.video(id);
    std::vector<Vector> out;
    for (int c = 0; c < v.frames / clip_len; ++c) {
      std::vector<int> idx(static_cast<std::size_t>(clip_len));
      std::iota(idx.begin(), idx.end(), c * clip_len);
      out.push_back(encode_values(encoder, plain_view(v, idx, out_h, out_w)));
    }
    return out;
  };

  Vector center = Vector::Zero(encoder.feature_dim());
  long count = 0;
  for (int id : reference_ids) {
    for (const Vector& x : clip_features(id)) center += x, ++count;
  }
  if (count > 0) center /= static_cast<double>(count);

  StabilityResult r;
  std::vector<double> psi_sims, phi_sims;
  const Index half = encoder.feature_dim() / 2;
  for (int id : video_ids) {
    if (corpus.video(id).frames / clip_len < 2) {
      ++r.videos_skipped;
      continue;
    }
    ++r.videos_used;
    const auto feats = clip_features(id);
    for (std::size_t c = 1; c < feats.size(); ++c) {
      const Vector a = feats[c - 1] - center, b = feats[c] - center;
      psi_sims.push_back(cosine_value(a.head(half), b.head(half)));
      phi_sims.push_back(cosine_value(a.tail(half), b.tail(half)));
    }
  }
  r.psi = make_histogram(psi_sims);
  r.phi = make_histogram(phi_sims);
  return r;
}

Histogram sn_similarity_hist(const FeatureTable& table, const std::vector<int>& rows, bool centered) {
  if (rows.empty()) throw Error(ErrorCode::Value, "sn similarity: no rows");
  Vector center = Vector::Zero(table.xi.cols());
  const auto train = table.train_rows();
  if (centered && !train.empty()) {
    for (int r : train) center += table.xi.row(r).transpose();
    center /= static_cast<double>(train.size());
  }
  std::vector<double> sims;
  const Index h = table.half();
  for (int r : rows) {
    const Vector x = table.xi.row(r).transpose() - center;
    sims.push_back(cosine_value(x.head(h), x.tail(h)));
  }
  return make_histogram(sims);
}

FramesNeededResult frames_needed_partition(const Encoder& encoder, const Corpus& corpus, const FeatureTable& table,
                                           const ViewPolicy& policy, const std::vector<int>& frame_counts,
                                           const ProbeConfig& probe) {
  FramesNeededResult r;
  r.frame_counts = frame_counts;
  const auto train = table.train_rows(), test = table.test_rows();
  const auto train_y = take(table.dynamic, train), test_y = take(table.dynamic, test);
  std::vector<bool> solved(test.size(), false);

  const RowMatrix psi = table.features(FeatureKind::S), phi = table.features(FeatureKind::N);
  const RowMatrix psi_gallery = take_rows(psi, train), phi_gallery = take_rows(phi, train);

  for (int count : frame_counts) {
    RowMatrix x(table.rows(), encoder.feature_dim());
    for (Index i = 0; i < table.rows(); ++i) {
      const VideoClip& v = corpus.video(table.ids[static_cast<std::size_t>(i)]);
      const auto idx = centered_indices(v.frames, count, policy.stride);
      x.row(i) = encode_values(encoder, plain_view(v, idx, policy.out_h, policy.out_w)).transpose();
    }
    const auto pred = linear_probe_predict(take_rows(x, train), train_y, take_rows(x, test), probe);
    int correct = 0;
    std::vector<int> subset_rows;
    std::vector<int> subset;
    for (std::size_t i = 0; i < test.size(); ++i) {
      const bool ok = pred[i] == test_y[i];
      correct += ok;
      if (ok && !solved[i]) {
        subset_rows.push_back(test[i]);
        subset.push_back(table.ids[static_cast<std::size_t>(test[i])]);
        solved[i] = true;
      }
    }
    r.probe_accuracy.push_back(100.0 * correct / static_cast<double>(test.size()));
    r.subsets.push_back(subset);
    if (subset_rows.empty()) {
      r.r1_psi.emplace_back();
      r.r1_phi.emplace_back();
    } else {
      const auto labels = take(table.dynamic, subset_rows);
      r.r1_psi.emplace_back(recall_at_k(psi_gallery, train_y, take_rows(psi, subset_rows), labels, 1));
      r.r1_phi.emplace_back(recall_at_k(phi_gallery, train_y, take_rows(phi, subset_rows), labels, 1));
    }
  }
  return r;
}

}  // namespace lsfd
