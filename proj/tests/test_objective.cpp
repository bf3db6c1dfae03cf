#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "lsfd/grad_check.hpp"
#include "lsfd/objective.hpp"
#include "oracles.hpp"

#include <algorithm>
#include <cmath>

using namespace lsfd;
using lsfd::test::bit_equal;
using lsfd::test::brute_infonce;
using lsfd::test::random_tensor;

namespace {

Tensor stack(const std::vector<Vector>& rows) { return lsfd::test::stack_rows(rows); }

Features features(const Tensor& psi, const Tensor& phi) { return lsfd::test::features_of(psi, phi); }

}  // namespace

TEST_CASE("sim examples") {
  const Head id = Head::identity(2);
  CHECK(sim(id, Tensor::from({2}, {0.3, -2}), Tensor::from({2}, {0.3, -2}), 0.1).item() ==
        doctest::Approx(10.0).epsilon(1e-14));
  CHECK(sim(id, Tensor::from({2}, {1, 0}), Tensor::from({2}, {0, 1}), 0.1).item() == 0.0);
  CHECK(sim(id, Tensor::from({2}, {3, 4}), Tensor::from({2}, {4, 3}), 0.1).item() ==
        doctest::Approx(9.6).epsilon(1e-14));
  CHECK_THROWS_AS(sim(id, Tensor::zeros({2}), Tensor::from({2}, {1, 0}), 0.1), Error);
  CHECK_THROWS_AS(sim(id, Tensor::from({2}, {1, 0}), Tensor::from({2}, {1, 0}), 0.0), Error);
}

TEST_CASE("sim is symmetric and scale invariant") {
  Rng rng(1);
  const Head id = Head::identity(4);
  Head learned(4, 4, rng);
  for (int i = 0; i < 100; ++i) {
    const Tensor a = random_tensor(rng, {4}), b = random_tensor(rng, {4});
    const double c = rng.uniform(0.1, 10.0);
    CHECK(sim(learned, a, b, 0.1).item() == doctest::Approx(sim(learned, b, a, 0.1).item()).epsilon(1e-12));
    CHECK(sim(id, scale(a, c), b, 0.1).item() == doctest::Approx(sim(id, a, b, 0.1).item()).epsilon(1e-12));
    const Tensor ha = learned.apply(a), hb = learned.apply(b);
    CHECK(sim(id, scale(ha, c), hb, 0.1).item() == doctest::Approx(sim(learned, a, b, 0.1).item()).epsilon(1e-12));
  }
}

TEST_CASE("infonce closed forms") {
  const Head id = Head::identity(2);
  const Tensor a = Tensor::from({2}, {1, 0});
  CHECK(infonce(id, a, a, std::nullopt, 0.1).item() == 0.0);
  const double one_orth = infonce(id, a, a, Tensor::from({1, 2}, {0, 1}), 0.1).item();
  CHECK(one_orth == doctest::Approx(std::log1p(std::exp(-10.0))).epsilon(1e-12));
  CHECK(one_orth == doctest::Approx(4.5399e-5).epsilon(1e-4));
  for (int k : {1, 3, 10}) {
    const Tensor negs({k, 2}, Vector::Constant(2 * k, 0.0).unaryExpr([](double) { return 0.0; }));
    Vector rows(2 * k);
    for (int r = 0; r < k; ++r) rows.segment(2 * r, 2) = a.data();
    CHECK(infonce(id, a, a, Tensor({k, 2}, rows), 0.1).item() == doctest::Approx(std::log(k + 1.0)).epsilon(1e-12));
  }
  CHECK_THROWS_AS(infonce(id, a, Tensor::from({3}, {1, 0, 0}), std::nullopt, 0.1), Error);
  CHECK_THROWS_AS(infonce(id, a, a, Tensor::from({1, 2}, {0, 0}), 0.1), Error);
}

TEST_CASE("infonce matches a brute-force oracle") {
  Rng rng(2);
  const Head id = Head::identity(3);
  for (int i = 0; i < 200; ++i) {
    const int k = 1 + static_cast<int>(rng.below(6));
    const Tensor a = random_tensor(rng, {3}), p = random_tensor(rng, {3});
    std::vector<Vector> negs;
    for (int r = 0; r < k; ++r) negs.push_back(random_tensor(rng, {3}).data());
    const double got = infonce(id, a, p, stack(negs), 0.5).item();
    CHECK(std::abs(got - brute_infonce(a.data(), p.data(), negs, 0.5)) < 1e-12);
    CHECK(got >= 0.0);
  }
}

TEST_CASE("owner mask removes a video's own bank rows") {
  CHECK_FALSE(owner_mask({3, 4}, -1).has_value());
  CHECK_FALSE(owner_mask({3, 4}, 5).has_value());
  const auto m = owner_mask({3, 4, 3}, 3);
  REQUIRE(m.has_value());
  CHECK(m->data() == Vector{{0, -1e9, 0, -1e9}});

  // Masked rows drop out exactly: same value as the oracle without them.
  Rng rng(3);
  const Tensor a = random_tensor(rng, {3}), p = random_tensor(rng, {3});
  const Vector n0 = random_tensor(rng, {3}).data(), n1 = random_tensor(rng, {3}).data(),
               n2 = random_tensor(rng, {3}).data();
  const double masked = infonce_projected(a, p, stack({n0, n1, n2}), 0.1, owner_mask({7, 8, 7}, 7)).item();
  CHECK(masked == doctest::Approx(brute_infonce(a.data(), p.data(), {n1}, 0.1)).epsilon(1e-12));
  CHECK_THROWS_AS(infonce_projected(a, p, stack({n0}), 0.1, owner_mask({7, 7}, 7)), Error);
}

TEST_CASE("loss terms") {
  Rng rng(4);
  const Head id = Head::identity(2);
  Aggregator sum(AggregatorKind::Sum, 2, 2, rng);
  const Tensor psi_key = random_tensor(rng, {2}), phi_key = random_tensor(rng, {2});
  const Features s0 = features(random_tensor(rng, {2}), random_tensor(rng, {2}));
  const Features s1 = features(random_tensor(rng, {2}), random_tensor(rng, {2}));
  const Tensor negs = random_tensor(rng, {2, 2});

  SUBCASE("empty bank gives zero") {
    CHECK(loss_stationary(id, {s0, s1}, 1, psi_key, std::nullopt, 0.1).item() == 0.0);
    CHECK(loss_non_stationary(id, sum, {s0, s1}, phi_key, std::nullopt, 0.1).item() == 0.0);
    CHECK(loss_instance(Head::identity(4), s0.xi, s1.xi, std::nullopt, 0.1).item() == 0.0);
  }
  SUBCASE("stationary uses the selected short view") {
    const double l = loss_stationary(id, {s0, s1}, 1, psi_key, negs, 0.1).item();
    std::vector<Vector> rows{negs.data().head(2), negs.data().tail(2)};
    CHECK(std::abs(l - brute_infonce(s1.psi.data(), psi_key.data(), rows, 0.1)) < 1e-12);
    CHECK_THROWS_AS(loss_stationary(id, {s0, s1}, 2, psi_key, negs, 0.1), Error);
  }
  SUBCASE("non-stationary: hand 2-dim toy with 2 negatives") {
    const Features a = features(Tensor::from({2}, {0, 0}), Tensor::from({2}, {1, 2}));
    const Features b = features(Tensor::from({2}, {0, 0}), Tensor::from({2}, {0.5, -1}));
    const Tensor key = Tensor::from({2}, {2, 1});
    const Tensor toy = Tensor::from({2, 2}, {1, 0, -1, 1});
    // anchor (1.5, 1): cos with (2,1) = 4/sqrt(3.25*5), (1,0) = 1.5/sqrt(3.25), (-1,1) = -0.5/sqrt(6.5).
    const double sp = 4.0 / std::sqrt(3.25 * 5.0) / 0.1, s1n = 1.5 / std::sqrt(3.25) / 0.1,
                 s2n = -0.5 / std::sqrt(6.5) / 0.1;
    const double oracle = -std::log(std::exp(sp) / (std::exp(sp) + std::exp(s1n) + std::exp(s2n)));
    CHECK(std::abs(loss_non_stationary(id, sum, {a, b}, key, toy, 0.1).item() - oracle) < 1e-12);
    CHECK(loss_non_stationary(id, sum, {b, a}, key, toy, 0.1).item() ==
          loss_non_stationary(id, sum, {a, b}, key, toy, 0.1).item());
  }
  SUBCASE("N=1 with Sum reduces to plain infonce") {
    const double l = loss_non_stationary(id, sum, {s0}, phi_key, negs, 0.1).item();
    CHECK(l == infonce(id, s0.phi, phi_key, negs, 0.1).item());
  }
  SUBCASE("identical halves everywhere give ln(K+1)") {
    const Features f = features(Tensor::from({2}, {1, 1}), Tensor::from({2}, {1, 1}));
    const Tensor same = Tensor::from({3, 2}, {1, 1, 1, 1, 1, 1});
    CHECK(loss_stationary(id, {f}, 0, f.psi, same, 0.1).item() == doctest::Approx(std::log(4.0)).epsilon(1e-12));
  }
  SUBCASE("instance: identical views, one orthogonal negative") {
    const Tensor xi = Tensor::from({4}, {1, 0, 0, 0});
    const double l = loss_instance(Head::identity(4), xi, xi, Tensor::from({1, 4}, {0, 1, 0, 0}), 0.1).item();
    CHECK(l == doctest::Approx(std::log1p(std::exp(-10.0))).epsilon(1e-12));
  }
}

TEST_CASE("untrained model gives losses near ln(K+1)") {
  const ModelConfig config{EncoderConfig{4, 4, 8}, AggregatorKind::Sum, 2, 0.99};
  const MomentumPair pair = make_model(config, 5);
  Rng rng(6);
  const int k = 32;
  MemoryBank bank(k, 4);
  NoGradGuard guard;
  for (int i = 0; i < k; ++i) {
    const Features f = pair.key.encoder.encode(random_tensor(rng, {3, 4, 16, 16}, 0, 1));
    bank.push(f.psi, f.phi);
  }
  const ProjectedNegatives negs = project_negatives(bank_snapshot(bank), pair.key);
  const Tensor clip = random_tensor(rng, {3, 4, 16, 16}, 0, 1);
  const Features q = pair.query.encoder.encode(clip), key = pair.key.encoder.encode(clip);
  const std::vector<Features> shorts{q, q};
  const LossTerms t = total_loss(pair.query, pair.aggregator, shorts, 0, q, key, negs, LossConfig{});
  const double expect = std::log(k + 1.0);
  CHECK(std::abs(t.stationary.item() - expect) < 0.1 * expect);
  CHECK(std::abs(t.non_stationary.item() - expect) < 0.1 * expect);
  CHECK(std::abs(t.instance.item() - expect) < 0.1 * expect);
}

TEST_CASE("total loss and flags") {
  Rng rng(7);
  const MomentumPair pair = make_model(ModelConfig{EncoderConfig{2, 2, 4}, AggregatorKind::Sum, 2, 0.99}, 8);
  const Features s0 = features(random_tensor(rng, {2}), random_tensor(rng, {2}));
  const Features s1 = features(random_tensor(rng, {2}), random_tensor(rng, {2}));
  const Features key = features(random_tensor(rng, {2}), random_tensor(rng, {2}));
  MemoryBank bank(3, 2);
  for (int i = 0; i < 3; ++i) bank.push(random_tensor(rng, {2}), random_tensor(rng, {2}), i);
  const ProjectedNegatives negs = project_negatives(bank_snapshot(bank), pair.key);

  const LossTerms all = total_loss(pair.query, pair.aggregator, {s0, s1}, 0, s0, key, negs, LossConfig{});
  CHECK(all.total.item() == (all.stationary.item() + all.non_stationary.item()) + all.instance.item());

  LossConfig only_s;
  only_s.flags = parse_loss_flags("stationary");
  const LossTerms s = total_loss(pair.query, pair.aggregator, {s0, s1}, 0, s0, key, negs, only_s);
  CHECK(s.total.item() == all.stationary.item());
  CHECK(s.non_stationary.item() == 0.0);
  CHECK(s.instance.item() == 0.0);

  LossConfig none;
  none.flags = parse_loss_flags("none");
  CHECK(total_loss(pair.query, pair.aggregator, {s0, s1}, 0, s0, key, negs, none).total.item() == 0.0);

  LossConfig owned;
  owned.owner = 1;
  const LossTerms masked = total_loss(pair.query, pair.aggregator, {s0, s1}, 0, s0, key, negs, owned);
  CHECK(masked.stationary.item() < all.stationary.item());

  CHECK(to_string(parse_loss_flags("stationary,non-stationary")) == "stationary,non-stationary");
  CHECK(to_string(parse_loss_flags("all")) == "stationary,non-stationary,instance");
  CHECK_THROWS_AS(parse_loss_flags("stationary,bogus"), Error);
}

TEST_CASE("memory bank FIFO and snapshots") {
  MemoryBank bank(4, 1);
  for (int i = 0; i < 5; ++i) bank.push(Tensor::from({1}, {double(i)}), Tensor::from({1}, {double(10 + i)}), i);
  CHECK(bank.size() == 4);
  const BankSnapshot snap = bank_snapshot(bank);
  CHECK(snap.psi->data() == Vector{{1, 2, 3, 4}});
  CHECK(snap.xi->data() == Vector{{1, 11, 2, 12, 3, 13, 4, 14}});
  CHECK(snap.owners == std::vector<int>{1, 2, 3, 4});
  bank.push(Tensor::from({1}, {9}), Tensor::from({1}, {19}));
  CHECK(snap.psi->data() == Vector{{1, 2, 3, 4}});
  CHECK(bank_snapshot(bank).psi->data() == Vector{{2, 3, 4, 9}});
  CHECK(bank_snapshot(MemoryBank(2, 1)).size() == 0);
  CHECK_THROWS_AS(bank.push(Tensor::from({2}, {1, 2}), Tensor::from({1}, {1})), Error);
  CHECK_THROWS_AS(MemoryBank(0, 1), Error);
}

TEST_CASE("bank entries carry no gradient linkage") {
  Tensor psi = Tensor::from({2}, {1, 2}, true), phi = Tensor::from({2}, {3, 4}, true);
  MemoryBank bank(2, 2);
  bank.push(mul(psi, psi), phi);
  const BankSnapshot snap = bank_snapshot(bank);
  CHECK_FALSE(snap.psi->requires_grad());
  CHECK(snap.psi->is_leaf());
  Tensor loss = infonce_projected(psi, phi, *snap.psi, 0.1);
  backward(loss);
  CHECK(psi.has_grad());
  CHECK_FALSE(snap.psi->has_grad());
  CHECK(bank.entries()[0].psi == Vector{{1, 4}});
}

TEST_CASE("loss terms match the oracle with learned heads") {
  const auto r = lsfd::test::loss_oracle();
  CHECK(r.instances == 100);
  CHECK(r.stationary < 1e-12);
  CHECK(r.non_stationary < 1e-12);
  CHECK(r.instance < 1e-12);
}

TEST_CASE("loss gradients pass grad_check") {
  for (const auto& r : lsfd::test::loss_grad_suites()) {
    INFO(r.name << " worst relative error " << r.worst);
    CHECK(r.instances >= 20);
    CHECK(r.worst < 1e-4);
  }
}

TEST_CASE("loss backward leaves the key branch and the bank untouched") {
  Rng rng(9);
  MomentumPair pair = make_model(ModelConfig{EncoderConfig{2, 3, 4}, AggregatorKind::Gru, 2, 0.99}, 100);
  MemoryBank bank(3, 2);
  for (int r = 0; r < 3; ++r) bank.push(random_tensor(rng, {2}), random_tensor(rng, {2}));
  const BankSnapshot snap = bank_snapshot(bank);
  const ProjectedNegatives negs = project_negatives(snap, pair.key);
  const Features key = features(random_tensor(rng, {2}), random_tensor(rng, {2}));
  const std::vector<Features> shorts{features(random_tensor(rng, {2}, -1, 1, true), random_tensor(rng, {2})),
                                     features(random_tensor(rng, {2}), random_tensor(rng, {2}))};
  backward(total_loss(pair.query, pair.aggregator, shorts, 0, split_features(random_tensor(rng, {4})), key, negs,
                      LossConfig{})
               .total);
  for (const auto& [name, t] : pair.key.parameters("")) CHECK_FALSE(t.has_grad());
  CHECK_FALSE(snap.psi->has_grad());
  CHECK(pair.query.head_n.w1.has_grad());
}
