#pragma once

// Independent oracles shared by the unit tests and the acceptance binary.

#include "lsfd/objective.hpp"
#include "lsfd/segkit.hpp"
#include "test_util.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

namespace lsfd::test {

struct SuiteResult {
  std::string name;
  double worst = 0.0;
  int instances = 0;
};

inline SuiteResult run_suite(const std::string& name, const std::function<double(Rng&)>& one, int instances = 20,
                             std::uint64_t seed = 1234) {
  Rng root(seed);
  SuiteResult r{name, 0.0, instances};
  for (int i = 0; i < instances; ++i) {
    Rng rng = root.split(static_cast<std::uint64_t>(i));
    r.worst = std::max(r.worst, one(rng));
  }
  return r;
}

// Values kept away from the ReLU kink so finite differences stay one-sided.
inline Tensor away_from_zero(Rng& rng, Shape shape) {
  Tensor t = random_tensor(rng, std::move(shape), 0.1, 1.0);
  Vector& v = t.mutable_data();
  for (Index i = 0; i < v.size(); ++i)
    if (rng.bernoulli(0.5)) v[i] = -v[i];
  return t;
}

/// grad_check of every differentiable primitive, 20 instances each.
inline std::vector<SuiteResult> op_grad_suites() {
  std::vector<SuiteResult> out;
  auto add_suite = [&](const char* name, const std::function<double(Rng&)>& one) { out.push_back(run_suite(name, one)); };

  add_suite("add", [](Rng& r) {
    const Tensor b = random_tensor(r, {7});
    return grad_check([&](const Tensor& x) { return probe(add(x, b)); }, random_tensor(r, {7}));
  });
  add_suite("sub", [](Rng& r) {
    const Tensor b = random_tensor(r, {7});
    return grad_check([&](const Tensor& x) { return probe(sub(b, x)); }, random_tensor(r, {7}));
  });
  add_suite("mul", [](Rng& r) {
    return grad_check([](const Tensor& x) { return probe(mul(x, x)); }, random_tensor(r, {7}));
  });
  add_suite("scale", [](Rng& r) {
    const double f = r.uniform(-3, 3);
    return grad_check([&](const Tensor& x) { return probe(scale(x, f)); }, random_tensor(r, {7}));
  });
  add_suite("relu", [](Rng& r) {
    return grad_check([](const Tensor& x) { return probe(relu(x)); }, away_from_zero(r, {9}));
  });
  add_suite("sigmoid", [](Rng& r) {
    return grad_check([](const Tensor& x) { return probe(sigmoid(x)); }, random_tensor(r, {9}, -4, 4));
  });
  add_suite("tanh", [](Rng& r) {
    return grad_check([](const Tensor& x) { return probe(tanh(x)); }, random_tensor(r, {9}, -3, 3));
  });
  add_suite("one_minus", [](Rng& r) {
    return grad_check([](const Tensor& x) { return probe(mul(one_minus(x), x)); }, random_tensor(r, {9}));
  });

  add_suite("matmul lhs", [](Rng& r) {
    const Tensor b = random_tensor(r, {4, 3});
    return grad_check([&](const Tensor& x) { return probe(matmul(x, b)); }, random_tensor(r, {2, 4}));
  });
  add_suite("matmul rhs", [](Rng& r) {
    const Tensor a = random_tensor(r, {2, 4});
    return grad_check([&](const Tensor& x) { return probe(matmul(a, x)); }, random_tensor(r, {4, 3}));
  });
  add_suite("transpose", [](Rng& r) {
    return grad_check([](const Tensor& x) { return probe(transpose(x)); }, random_tensor(r, {3, 5}));
  });
  add_suite("add_row_bias", [](Rng& r) {
    const Tensor m = random_tensor(r, {3, 4});
    return grad_check([&](const Tensor& x) { return probe(mul(add_row_bias(m, x), add_row_bias(m, x))); },
                      random_tensor(r, {4}));
  });

  add_suite("conv3d input", [](Rng& r) {
    const Tensor k = random_tensor(r, {2, 2, 3, 3, 3});
    return grad_check([&](const Tensor& x) { return probe(conv3d(x, k, {1, 1, 1}, {1, 1, 1})); },
                      random_tensor(r, {2, 3, 4, 4}));
  });
  add_suite("conv3d kernel", [](Rng& r) {
    const Tensor x = random_tensor(r, {1, 4, 4, 4});
    return grad_check([&](const Tensor& k) { return probe(conv3d(x, k, {2, 1, 1}, {0, 1, 0})); },
                      random_tensor(r, {2, 1, 2, 3, 3}));
  });
  add_suite("conv3d dilated", [](Rng& r) {
    const Tensor k = random_tensor(r, {2, 2, 1, 1, 3});
    return grad_check([&](const Tensor& x) { return probe(conv3d(x, k, {1, 1, 1}, {0, 0, 4}, {1, 1, 4})); },
                      random_tensor(r, {2, 3, 1, 9}));
  });
  add_suite("add_channel_bias", [](Rng& r) {
    const Tensor x = random_tensor(r, {3, 2, 2, 2});
    return grad_check([&](const Tensor& b) { return probe(tanh(add_channel_bias(x, b))); }, random_tensor(r, {3}));
  });
  add_suite("avg_pool3d", [](Rng& r) {
    return grad_check([](const Tensor& x) { return probe(avg_pool3d(x, {2, 2, 2}, {2, 2, 2})); },
                      random_tensor(r, {2, 4, 4, 4}));
  });
  add_suite("global_avg_pool", [](Rng& r) {
    return grad_check([](const Tensor& x) { return probe(global_avg_pool(x)); }, random_tensor(r, {3, 2, 3, 2}));
  });

  add_suite("concat", [](Rng& r) {
    const Tensor b = random_tensor(r, {3});
    return grad_check([&](const Tensor& x) { return probe(concat_lastdim({x, b, x})); }, random_tensor(r, {4}));
  });
  add_suite("concat rows", [](Rng& r) {
    const Tensor b = random_tensor(r, {2, 3});
    return grad_check([&](const Tensor& x) { return probe(concat_lastdim({x, b})); }, random_tensor(r, {2, 4}));
  });
  add_suite("slice", [](Rng& r) {
    return grad_check([](const Tensor& x) { return probe(slice_lastdim(x, 2, 5)); }, random_tensor(r, {2, 6}));
  });
  add_suite("reshape", [](Rng& r) {
    return grad_check([](const Tensor& x) { return probe(reshape(x, {3, 4})); }, random_tensor(r, {2, 6}));
  });
  add_suite("sum_all", [](Rng& r) {
    return grad_check([](const Tensor& x) { return sum_all(mul(x, x)); }, random_tensor(r, {5}));
  });

  add_suite("cosine", [](Rng& r) {
    const Tensor b = random_tensor(r, {6});
    return grad_check([&](const Tensor& x) { return cosine(x, b); }, random_tensor(r, {6}));
  });
  add_suite("cosine_rows anchor", [](Rng& r) {
    const Tensor rows = random_tensor(r, {5, 4});
    return grad_check([&](const Tensor& x) { return probe(cosine_rows(x, rows)); }, random_tensor(r, {4}));
  });
  add_suite("cosine_rows rows", [](Rng& r) {
    const Tensor a = random_tensor(r, {4});
    return grad_check([&](const Tensor& x) { return probe(cosine_rows(a, x)); }, random_tensor(r, {5, 4}));
  });
  add_suite("cross_entropy", [](Rng& r) {
    const Index target = static_cast<Index>(r.below(6));
    return grad_check([&](const Tensor& x) { return cross_entropy(x, target); }, random_tensor(r, {6}, -3, 3));
  });
  add_suite("softmax_cross_entropy", [](Rng& r) {
    std::vector<int> labels;
    for (int i = 0; i < 4; ++i) labels.push_back(static_cast<int>(r.below(3)));
    return grad_check([&](const Tensor& x) { return softmax_cross_entropy(x, labels); },
                      random_tensor(r, {4, 3}, -3, 3));
  });
  return out;
}

/// Encoder wrt clip and wrt each conv kernel, plus every parametric
/// aggregator wrt its input.
inline std::vector<SuiteResult> model_grad_suites() {
  const EncoderConfig tiny{2, 3, 4};
  SuiteResult input{"encoder wrt clip", 0.0, 0}, kernel{"encoder wrt kernels", 0.0, 0};
  Rng rng(8);
  for (int i = 0; i < 20; ++i) {
    Rng init(100 + static_cast<std::uint64_t>(i));
    const Encoder enc(tiny, init);
    Tensor clip = random_tensor(rng, {3, 2, 8, 8}, 0, 1);
    while (min_relu_margin(enc, clip) < 1e-4) clip = random_tensor(rng, {3, 2, 8, 8}, 0, 1);
    input.worst = std::max(input.worst, grad_check([&](const Tensor& x) { return probe(enc.encode(x).xi); }, clip));
    ++input.instances;
    const std::size_t block = static_cast<std::size_t>(i % 3);
    kernel.worst = std::max(kernel.worst, grad_check(
                                              [&](const Tensor& w) {
                                                Encoder e = enc;
                                                e.kernels[block] = w;
                                                return probe(e.encode(clip).xi);
                                              },
                                              enc.kernels[block]));
    ++kernel.instances;
  }
  std::vector<SuiteResult> out{input, kernel};
  Rng arng(13);
  for (AggregatorKind kind : {AggregatorKind::Linear, AggregatorKind::Mlp, AggregatorKind::Gru}) {
    SuiteResult r{"aggregator " + to_string(kind), 0.0, 0};
    for (int i = 0; i < 20; ++i) {
      const Aggregator agg(kind, 2, 3, arng);
      const Tensor b = random_tensor(arng, {3});
      r.worst = std::max(r.worst, grad_check([&](const Tensor& x) { return probe(agg.apply({x, b})); },
                                             random_tensor(arng, {3})));
      ++r.instances;
    }
    out.push_back(r);
  }
  return out;
}

inline Features features_of(const Tensor& psi, const Tensor& phi) { return split_features(concat_lastdim({psi, phi})); }

// Finite differences need every head ReLU clear of its kink and at least one
// live hidden unit, otherwise the true gradient is zero and the check only
// measures round-off.
inline bool head_clear(const Head& h, const Tensor& rows) {
  const Index d = h.dim();
  const Eigen::Map<const RowMatrix> x(rows.data().data(), rows.size() / d, d);
  const Eigen::Map<const RowMatrix> w(h.w1.data().data(), d, h.w1.dim(1));
  const RowMatrix pre = (x * w).rowwise() + h.b1.data().transpose();
  return pre.cwiseAbs().minCoeff() > 1e-4 && (pre.rowwise().maxCoeff().array() > 0.1).all();
}

/// The composed loss graph of a GRU model: total loss wrt a short-view
/// feature and wrt h_n, and the non-stationary term wrt three GRU weights
/// (the aggregator feeds only that term). Instances are drawn until each
/// target has 20 resolvable checks.
inline std::vector<SuiteResult> loss_grad_suites() {
  Rng rng(9);
  const ModelConfig config{EncoderConfig{2, 3, 4}, AggregatorKind::Gru, 2, 0.99};
  std::vector<SuiteResult> out{{"total loss wrt short feature", 0, 0},
                               {"total loss wrt h_n.w1", 0, 0},
                               {"non-stationary wrt gru W_xn", 0, 0},
                               {"non-stationary wrt gru W_hr", 0, 0},
                               {"non-stationary wrt gru b_hn", 0, 0}};
  auto done = [&] {
    return std::all_of(out.begin(), out.end(), [](const SuiteResult& r) { return r.instances >= 20; });
  };
  for (std::uint64_t seed = 100; seed < 4000 && !done(); ++seed) {
    MomentumPair pair = make_model(config, seed);
    MemoryBank bank(3, 2);
    for (int r = 0; r < 3; ++r) bank.push(random_tensor(rng, {2}), random_tensor(rng, {2}));
    const BankSnapshot snap = bank_snapshot(bank);
    const ProjectedNegatives negs = project_negatives(snap, pair.key);
    const Features key = features_of(random_tensor(rng, {2}), random_tensor(rng, {2}));
    const Tensor xa = random_tensor(rng, {2}), xb = random_tensor(rng, {2}), xl = random_tensor(rng, {4});
    if (!head_clear(pair.query.head_s, concat_lastdim({xa, key.psi, reshape(*snap.psi, {6})})) ||
        !head_clear(pair.query.head_n,
                    concat_lastdim({pair.aggregator.apply({xb, xa}), key.phi, reshape(*snap.phi, {6})})) ||
        !head_clear(pair.query.head_i, concat_lastdim({xl, key.xi, reshape(*snap.xi, {12})}))) {
      continue;
    }
    auto terms_with = [&](const Branch& q, const Aggregator& agg, const Tensor& phi0) {
      const std::vector<Features> shorts{features_of(xa, phi0), features_of(xb, xa)};
      return total_loss(q, agg, shorts, 0, split_features(xl), key, negs, LossConfig{});
    };
    auto with_agg = [&](std::size_t k) {
      return ScalarFn([&, k](const Tensor& w) {
        Aggregator agg = pair.aggregator;
        agg.weights[k] = w;
        return terms_with(pair.query, agg, xb).non_stationary;
      });
    };
    const std::vector<std::pair<ScalarFn, Tensor>> targets{
        {[&](const Tensor& x) { return terms_with(pair.query, pair.aggregator, x).total; }, xb},
        {[&](const Tensor& w) {
           Branch q = pair.query;
           q.head_n.w1 = w;
           return terms_with(q, pair.aggregator, xb).total;
         },
         pair.query.head_n.w1},
        {with_agg(2), pair.aggregator.weights[2]},
        {with_agg(3), pair.aggregator.weights[3]},
        {with_agg(11), pair.aggregator.weights[11]},
    };
    for (std::size_t t = 0; t < targets.size(); ++t) {
      if (out[t].instances >= 20 || !fd_resolvable(targets[t].first, targets[t].second)) continue;
      out[t].worst = std::max(out[t].worst, grad_check(targets[t].first, targets[t].second));
      ++out[t].instances;
    }
  }
  return out;
}

// -log(e^{s_pos} / sum_k e^{s_k}) straight from the definition, no log-sum-exp shift.
inline double brute_infonce(const Vector& a, const Vector& p, const std::vector<Vector>& negs, double tau) {
  auto s = [&](const Vector& x) { return a.dot(x) / (a.norm() * x.norm()) / tau; };
  double denom = std::exp(s(p));
  for (const auto& n : negs) denom += std::exp(s(n));
  return -std::log(std::exp(s(p)) / denom);
}

inline Vector brute_head(const Head& h, const Vector& z) {
  const Index d = h.dim(), hid = h.w1.dim(1);
  const Eigen::Map<const RowMatrix> w1(h.w1.data().data(), d, hid), w2(h.w2.data().data(), hid, d);
  const Vector hidden = ((z.transpose() * w1).transpose() + h.b1.data()).cwiseMax(0.0);
  return (hidden.transpose() * w2).transpose() + h.b2.data();
}

inline Tensor stack_rows(const std::vector<Vector>& rows) {
  const Index d = rows[0].size();
  Vector v(static_cast<Index>(rows.size()) * d);
  for (std::size_t r = 0; r < rows.size(); ++r) v.segment(static_cast<Index>(r) * d, d) = rows[r];
  return Tensor({static_cast<Index>(rows.size()), d}, v);
}

/// Largest |library - oracle| per loss term over random toy instances with
/// learned heads, D <= 8, 1..16 negatives and N in 1..3 (Sum aggregation).
struct LossOracleResult {
  double stationary = 0.0, non_stationary = 0.0, instance = 0.0;
  int instances = 0;
};

inline LossOracleResult loss_oracle(int instances = 100, std::uint64_t seed = 21) {
  LossOracleResult out;
  Rng rng(seed);
  for (int i = 0; i < instances; ++i) {
    const int half = 1 + static_cast<int>(rng.below(4));
    const int k = 1 + static_cast<int>(rng.below(16));
    const int n = 1 + static_cast<int>(rng.below(3));
    const double tau = rng.uniform(0.05, 1.0);
    const Head hs(half, half, rng), hn(half, half, rng), hi(2 * half, 2 * half, rng);
    const Aggregator sum(AggregatorKind::Sum, n, half, rng);

    std::vector<Features> shorts;
    for (int j = 0; j < n; ++j) shorts.push_back(features_of(random_tensor(rng, {half}), random_tensor(rng, {half})));
    const Features key = features_of(random_tensor(rng, {half}), random_tensor(rng, {half}));
    const Features query_long = features_of(random_tensor(rng, {half}), random_tensor(rng, {half}));
    std::vector<Vector> ps, pn, pi;
    for (int r = 0; r < k; ++r) {
      ps.push_back(random_tensor(rng, {half}).data());
      pn.push_back(random_tensor(rng, {half}).data());
      pi.push_back(random_tensor(rng, {2 * half}).data());
    }
    auto headed = [](const Head& h, const std::vector<Vector>& rows) {
      std::vector<Vector> out;
      for (const auto& r : rows) out.push_back(brute_head(h, r));
      return out;
    };
    const int j = static_cast<int>(rng.below(static_cast<std::uint64_t>(n)));

    const double s_lib = loss_stationary(hs, shorts, j, key.psi, hs.apply(stack_rows(ps)), tau).item();
    const double s_ref = brute_infonce(brute_head(hs, shorts[static_cast<std::size_t>(j)].psi.data()),
                                       brute_head(hs, key.psi.data()), headed(hs, ps), tau);
    Vector agg = Vector::Zero(half);
    for (const auto& f : shorts) agg += f.phi.data();
    const double n_lib = loss_non_stationary(hn, sum, shorts, key.phi, hn.apply(stack_rows(pn)), tau).item();
    const double n_ref = brute_infonce(brute_head(hn, agg), brute_head(hn, key.phi.data()), headed(hn, pn), tau);
    const double i_lib = loss_instance(hi, query_long.xi, key.xi, hi.apply(stack_rows(pi)), tau).item();
    const double i_ref = brute_infonce(brute_head(hi, query_long.xi.data()), brute_head(hi, key.xi.data()),
                                       headed(hi, pi), tau);
    out.stationary = std::max(out.stationary, std::abs(s_lib - s_ref));
    out.non_stationary = std::max(out.non_stationary, std::abs(n_lib - n_ref));
    out.instance = std::max(out.instance, std::abs(i_lib - i_ref));
    ++out.instances;
  }
  return out;
}

// Plain recursive Levenshtein, no memo.
inline int brute_levenshtein(const std::vector<int>& a, std::size_t i, const std::vector<int>& b, std::size_t j) {
  if (i == a.size()) return static_cast<int>(b.size() - j);
  if (j == b.size()) return static_cast<int>(a.size() - i);
  const int sub = brute_levenshtein(a, i + 1, b, j + 1) + (a[i] == b[j] ? 0 : 1);
  return std::min({sub, brute_levenshtein(a, i + 1, b, j) + 1, brute_levenshtein(a, i, b, j + 1) + 1});
}

// Every label sequence of length 1..max_len over {0,1,2} with no equal neighbours.
inline std::vector<std::vector<int>> segment_sequences(int max_len) {
  std::vector<std::vector<int>> out;
  std::function<void(std::vector<int>&)> grow = [&](std::vector<int>& cur) {
    if (!cur.empty()) out.push_back(cur);
    if (static_cast<int>(cur.size()) == max_len) return;
    for (int l = 0; l < 3; ++l) {
      if (!cur.empty() && cur.back() == l) continue;
      cur.push_back(l);
      grow(cur);
      cur.pop_back();
    }
  };
  std::vector<int> cur;
  grow(cur);
  return out;
}

/// Pairs of segment sequences where the edit DP disagrees with brute force.
/// One frame per segment, so frame sequences are the segment labels.
inline int edit_dp_mismatches(int max_len = 5) {
  const auto seqs = segment_sequences(max_len);
  int bad = 0;
  for (const auto& a : seqs) {
    for (const auto& b : seqs) {
      const double expect = 100.0 * (1.0 - static_cast<double>(brute_levenshtein(a, 0, b, 0)) /
                                               static_cast<double>(std::max(a.size(), b.size())));
      if (edit_score(a, b) != expect) ++bad;
    }
  }
  return bad;
}

inline std::vector<int> runs(std::initializer_list<std::pair<int, int>> label_len) {
  std::vector<int> out;
  for (const auto& [label, len] : label_len) out.insert(out.end(), static_cast<std::size_t>(len), label);
  return out;
}

}  // namespace lsfd::test
