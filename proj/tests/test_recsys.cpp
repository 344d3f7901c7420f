#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <set>
#include <sstream>

#include "poisonrec/recsys.hpp"
#include "test_support.hpp"

using namespace poisonrec;

namespace {

// Independent recount: full stable sort of unrated items by (score desc, index asc).
double brute_force_hr(const ScoreMatrix& y, const InteractionMatrix& train, Index target, std::size_t k) {
  std::size_t eligible = 0, hits = 0;
  for (std::size_t u = 0; u < train.num_normal_users(); ++u) {
    if (train.has(u, target)) continue;
    ++eligible;
    std::vector<Index> items;
    for (Index i = 0; i < train.num_items(); ++i)
      if (!train.has(u, i)) items.push_back(i);
    std::stable_sort(items.begin(), items.end(), [&](Index a, Index b) { return y(u, a) > y(u, b); });
    items.resize(std::min(k, items.size()));
    if (std::find(items.begin(), items.end(), target) != items.end()) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(eligible);
}

}  // namespace

TEST_CASE("top_k on a single user") {
  const std::vector<Triplet> t{{0, 0, 1.0, kNoTimestamp}};
  const auto m = InteractionMatrix::from_triplets(1, 5, 1.0, DatasetKind::implicit, t);
  ScoreMatrix y(1, 5);
  const double s[] = {0.9, 0.8, 0.7, 0.6, 0.5};
  for (int i = 0; i < 5; ++i) y(0, i) = s[i];
  const auto lists = top_k(y, m, 3);
  REQUIRE(lists.size() == 1);
  CHECK(lists[0].items == std::vector<Index>{1, 2, 3});
  CHECK(lists[0].scores == std::vector<double>{0.8, 0.7, 0.6});
}

TEST_CASE("a user who rated everything gets an empty list") {
  std::vector<Triplet> t;
  for (Index i = 0; i < 4; ++i) t.push_back({0, i, 1.0, kNoTimestamp});
  t.push_back({1, 0, 1.0, kNoTimestamp});
  const auto m = InteractionMatrix::from_triplets(2, 4, 1.0, DatasetKind::implicit, t);
  const auto lists = top_k(ScoreMatrix(2, 4, 0.5), m, 2);
  CHECK(lists[0].items.empty());
  CHECK(lists[1].items == std::vector<Index>{1, 2});
}

TEST_CASE("hit ratio on a ten-user toy") {
  // Users 0 and 1 rated the target; of the other 8, users 2, 5 and 9 score it highest.
  const Index target = 3;
  std::vector<Triplet> t{{0, target, 1.0, kNoTimestamp}, {1, target, 1.0, kNoTimestamp}};
  for (Index u = 2; u < 10; ++u) t.push_back({u, 0, 1.0, kNoTimestamp});
  const auto m = InteractionMatrix::from_triplets(10, 6, 1.0, DatasetKind::implicit, t);
  ScoreMatrix y(10, 6, 0.1);
  for (Index u = 0; u < 10; ++u) {
    y(u, 1) = 0.8;
    y(u, 2) = 0.7;
    y(u, target) = (u == 2 || u == 5 || u == 9) ? 0.9 : 0.2;
  }
  const auto lists = top_k(y, m, 2);
  CHECK(hit_ratio(lists, target, m) == doctest::Approx(0.375));
  CHECK(hit_ratios(y, m, std::vector<Index>{target}, 2)[0] == doctest::Approx(0.375));

  ScoreMatrix all(10, 6, 0.1);
  for (Index u = 0; u < 10; ++u) all(u, target) = 1.0;
  CHECK(hit_ratio(top_k(all, m, 1), target, m) == 1.0);
  ScoreMatrix none(10, 6, 0.5);
  for (Index u = 0; u < 10; ++u) none(u, target) = 0.0;
  CHECK(hit_ratio(top_k(none, m, 2), target, m) == 0.0);
}

TEST_CASE("hit ratio throws when every normal user rated the target") {
  const std::vector<Triplet> t{{0, 1, 1.0, kNoTimestamp}, {1, 1, 1.0, kNoTimestamp}};
  const auto m = InteractionMatrix::from_triplets(2, 3, 1.0, DatasetKind::implicit, t);
  CHECK_THROWS(hit_ratio(top_k(ScoreMatrix(2, 3, 0.5), m, 1), 1, m));
}

TEST_CASE("lists exclude rated items, are prefixes in K, and HR matches a recount") {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    auto rng = make_rng(seed, 6);
    const std::size_t users = 2 + uniform_index(rng, 18), items = 5 + uniform_index(rng, 25);
    auto m = test::random_matrix(users, items, 0.25, DatasetKind::implicit, seed);
    if (seed % 3 == 0) m = m.with_appended_users({{{0, 1.0}}});
    ScoreMatrix y(m.num_users(), items);
    for (std::size_t u = 0; u < m.num_users(); ++u)
      for (std::size_t i = 0; i < items; ++i) y(u, i) = static_cast<double>(uniform_index(rng, 8)) / 7.0;

    const auto l3 = top_k(y, m, 3), l4 = top_k(y, m, 4);
    CHECK(l3.size() == m.num_normal_users());
    for (std::size_t u = 0; u < l3.size(); ++u) {
      for (Index i : l4[u].items) CHECK(!m.has(u, i));
      CHECK(std::equal(l3[u].items.begin(), l3[u].items.end(), l4[u].items.begin()));
    }
    for (Index target = 0; target < items; ++target) {
      bool eligible = false;
      for (std::size_t u = 0; u < m.num_normal_users(); ++u) eligible |= !m.has(u, target);
      if (!eligible) continue;
      double prev = 0.0;
      for (std::size_t k = 1; k <= 5; ++k) {
        const double hr = hit_ratio(top_k(y, m, k), target, m);
        CHECK(hr == doctest::Approx(brute_force_hr(y, m, target, k)));
        CHECK(hr >= prev);
        prev = hr;
      }
    }
  }
}

TEST_CASE("evaluate_hr run statistics and purity") {
  const auto m = test::random_matrix(20, 15, 0.3, DatasetKind::implicit, 4);
  NeumfConfig cfg;
  cfg.mlp_dims = {8, 4};
  cfg.epochs = 2;
  cfg.seed = 5;
  const std::vector<Index> targets{3, 3, 7};
  const auto one = evaluate_hr(m, cfg, targets, 5, 1);
  CHECK(one.runs == 1);
  CHECK(one.per_target[0] == one.per_target[1]);
  for (double s : one.per_target_run_std) CHECK(s == 0.0);

  const auto three = evaluate_hr(m, cfg, targets, 5, 3);
  CHECK(three.per_run.size() == 3);
  CHECK(three.per_target[0] == three.per_target[1]);
  const double mean = (three.per_target[0] + three.per_target[1] + three.per_target[2]) / 3.0;
  CHECK(three.mean_hr == doctest::Approx(mean));
  CHECK(evaluate_hr(m, cfg, targets, 5, 3).per_run == three.per_run);
}

TEST_CASE("hit-ratio CSV rows") {
  HitRatioReport r;
  r.targets = {4, 9};
  r.per_target = {0.1, 0.3};
  r.per_target_run_std = {0.0, 0.0};
  r.mean_hr = 0.2;
  r.std_hr = 0.1;
  r.runs = 2;
  const auto rows = report_rows(r, "toy", "none", 0.0, 10, "random");
  REQUIRE(rows.size() == 3);
  CHECK(rows.back().target_id == -1);
  CHECK(rows.back().mean_hr == 0.2);
  std::ostringstream out;
  write_hit_ratio_csv(out, rows);
  CHECK(out.str().rfind("dataset,attack,attack_size,K,target_kind,target_id,mean_hr,std_hr,runs\n", 0) == 0);
}
