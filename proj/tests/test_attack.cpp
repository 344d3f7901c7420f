#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <sstream>

#include "poisonrec/attack.hpp"
#include "poisonrec/recsys.hpp"
#include "test_support.hpp"

using namespace poisonrec;

namespace {

NeumfConfig small_neumf(std::uint64_t seed, std::size_t epochs = 5) {
  NeumfConfig cfg;
  cfg.mf_dim = 4;
  cfg.mlp_dims = {8, 4};
  cfg.epochs = epochs;
  cfg.batch_size = 32;
  cfg.learning_rate = 0.01;
  cfg.seed = seed;
  return cfg;
}

std::vector<Interaction> as_row(std::initializer_list<Index> items) {
  std::vector<Interaction> row;
  for (Index i : items) row.push_back({i, 1.0, kNoTimestamp});
  return row;
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

// E[round(clamp(X, 1, r_max))] for X ~ Normal(mu, sigma).
double rounded_clamped_mean(double mu, double sigma, int r_max) {
  double e = 0.0;
  for (int k = 1; k <= r_max; ++k) {
    const double lo = k == 1 ? 0.0 : normal_cdf((k - 0.5 - mu) / sigma);
    const double hi = k == r_max ? 1.0 : normal_cdf((k + 0.5 - mu) / sigma);
    e += k * (hi - lo);
  }
  return e;
}

void check_profiles(const std::vector<FakeUserProfile>& fakes, const InteractionMatrix& m, const AttackConfig& cfg) {
  REQUIRE(fakes.size() == cfg.m);
  for (std::size_t j = 0; j < fakes.size(); ++j) {
    const auto& f = fakes[j];
    CHECK(f.user == m.num_users() + j);
    CHECK(f.ratings.size() == cfg.n + 1);
    CHECK(std::is_sorted(f.ratings.begin(), f.ratings.end(),
                         [](const Interaction& a, const Interaction& b) { return a.item < b.item; }));
    std::set<Index> items;
    bool has_target = false;
    for (const auto& e : f.ratings) {
      items.insert(e.item);
      CHECK(e.item < m.num_items());
      if (m.kind() == DatasetKind::implicit) {
        CHECK(e.score == 1.0);
      } else {
        CHECK(e.score >= 1.0);
        CHECK(e.score <= m.r_max());
        CHECK(e.score == std::round(e.score));
      }
      if (e.item == cfg.target) {
        has_target = true;
        if (cfg.include_target_by_default) CHECK(e.score == (m.kind() == DatasetKind::implicit ? 1.0 : m.r_max()));
      }
    }
    CHECK(items.size() == f.ratings.size());
    if (cfg.include_target_by_default) CHECK(has_target);
  }
}

}  // namespace

// ---- losses ------------------------------------------------------------------------

TEST_CASE("per-user margin loss") {
  const std::vector<double> y{0.6, 0.5, 0.4, 0.1};
  CHECK(loss_user(y, {}, 3, 2, 1.0) == doctest::Approx(std::log(0.5) - std::log(0.1)).epsilon(1e-12));
  CHECK(loss_user(y, {}, 3, 2, 1.0) == doctest::Approx(1.609).epsilon(1e-3));

  // Target already at the list minimum.
  const std::vector<double> tied{0.6, 0.5, 0.4, 0.5};
  const auto rated = as_row({1});
  CHECK(loss_user(tied, rated, 3, 2, 0.0) == doctest::Approx(0.0));
  const std::vector<double> top{0.6, 0.5, 0.4, 0.9};
  CHECK(loss_user(top, {}, 3, 2, 0.0) <= 0.0);
  CHECK(loss_user(top, {}, 3, 2, 0.2) == doctest::Approx(-0.2));
}

TEST_CASE("margin loss never drops below -kappa") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    auto rng = make_rng(seed, 2);
    const std::size_t n = 3 + uniform_index(rng, 20);
    std::vector<double> y(n);
    for (auto& v : y) v = 0.01 + 0.98 * uniform_real(rng);
    const double kappa = uniform_real(rng) * 2.0;
    const Index t = static_cast<Index>(uniform_index(rng, n));
    const std::size_t k = 1 + uniform_index(rng, n - 1);
    const double l = loss_user(y, {}, t, k, kappa);
    CHECK(l >= -kappa);
    std::vector<double> others;
    for (std::size_t i = 0; i < n; ++i)
      if (i != t) others.push_back(y[i]);
    std::sort(others.rbegin(), others.rend());
    std::vector<double> list(y);
    std::sort(list.rbegin(), list.rend());
    const double inner = std::log(list[k - 1]) - std::log(y[t]);
    CHECK(l == doctest::Approx(std::max(inner, -kappa)).epsilon(1e-12));
  }
}

TEST_CASE("loss_all sums eligible users") {
  const std::vector<Triplet> t{{0, 0, 1.0, kNoTimestamp}, {1, 2, 1.0, kNoTimestamp}, {2, 3, 1.0, kNoTimestamp},
                               {3, 1, 1.0, kNoTimestamp}};
  const auto m = InteractionMatrix::from_triplets(4, 4, 1.0, DatasetKind::implicit, t, 3);
  ScoreMatrix y(4, 4);
  const double rows[4][4] = {{0.9, 0.2, 0.7, 0.3}, {0.6, 0.5, 0.8, 0.1}, {0.3, 0.4, 0.35, 0.2}, {0.5, 0.5, 0.5, 0.5}};
  for (int u = 0; u < 4; ++u)
    for (int i = 0; i < 4; ++i) y(u, i) = rows[u][i];
  const Index target = 3;
  // User 2 rated the target; user 3 is injected.
  const double l0 = loss_user(y.row(0), m.row(0), target, 1, 1.0);
  const double l1 = loss_user(y.row(1), m.row(1), target, 1, 1.0);
  CHECK(l0 == doctest::Approx(std::max(std::log(0.7) - std::log(0.3), -1.0)));
  CHECK(l1 == doctest::Approx(std::max(std::log(0.6) - std::log(0.1), -1.0)));
  CHECK(loss_all(y, m, target, 1, 1.0) == doctest::Approx(l0 + l1).epsilon(1e-12));

  const std::vector<Triplet> single{{0, 0, 1.0, kNoTimestamp}, {1, 3, 1.0, kNoTimestamp}};
  const auto s = InteractionMatrix::from_triplets(2, 4, 1.0, DatasetKind::implicit, single);
  CHECK(loss_all(y, s, target, 2, 1.0) == doctest::Approx(loss_user(y.row(0), s.row(0), target, 2, 1.0)));
}

TEST_CASE("attack objective") {
  CHECK(attack_objective(std::vector<double>(5, 0.0), 2.0, 100.0) == 200.0);
  CHECK(attack_objective(std::vector<double>(4, 0.5), 0.0, 100.0) == doctest::Approx(1.0));
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto rng = make_rng(seed, 3);
    std::vector<double> row(1 + uniform_index(rng, 30));
    double sq = 0.0;
    for (auto& v : row) {
      v = uniform_real(rng);
      sq += v * v;
    }
    const double lp = 10.0 * uniform_real(rng) - 5.0, eta = 1.0 + 100.0 * uniform_real(rng);
    CHECK(std::abs(attack_objective(row, lp, eta) - (sq + eta * lp)) < 1e-12 * std::max(1.0, std::abs(sq + eta * lp)));
  }
}

// ---- poison loss -----------------------------------------------------------------

TEST_CASE("poison loss composes BCE and the promotion objective") {
  const std::vector<Triplet> t{{0, 0, 1.0, kNoTimestamp}, {0, 1, 1.0, kNoTimestamp}, {1, 2, 1.0, kNoTimestamp},
                               {2, 3, 1.0, kNoTimestamp}, {2, 1, 1.0, kNoTimestamp}};
  const auto m = InteractionMatrix::from_triplets(3, 5, 1.0, DatasetKind::implicit, t, 2);
  PoisonModelState st{NeumfModel::initialized(3, 5, small_neumf(1), 1), m};
  auto rng = make_rng(4);
  for (auto& p : st.model.params()) p += 0.3 * standard_normal(rng);
  AttackConfig cfg;
  cfg.target = 4;
  cfg.n = 2;
  cfg.k = 2;
  cfg.eta = 3.0;
  const std::vector<Index> fakes{2};
  const std::vector<Example> batch{{0, 0, 1.0}, {1, 3, 0.0}, {2, 4, 1.0}};

  CHECK(poison_loss(st, fakes, cfg, batch, 0.0) == bce_loss(st.model, batch));

  const auto y = predict_matrix(st.model);
  double sq = 0.0;
  for (double v : y.row(2)) sq += v * v;
  const double g = attack_objective(y.row(2), loss_all(y, m, cfg.target, cfg.k, cfg.kappa), cfg.eta);
  CHECK(g == doctest::Approx(sq + cfg.eta * loss_all(y, m, cfg.target, cfg.k, cfg.kappa)));
  CHECK(poison_loss(st, fakes, cfg, batch, 0.01) == doctest::Approx(bce_loss(st.model, batch) + 0.01 * g).epsilon(1e-12));

  const auto objective = exact_objective(st, fakes, cfg);
  const LossSpec spec{batch, &objective, 0.01};
  const auto grad = gradient(st.model, spec);
  const double err = test::max_relative_gradient_error(
      st.model, grad.values, [&](const NeumfModel& mm) { return evaluate_loss(mm, spec); }, 1e-4, 1e-6);
  CHECK(err < 1e-3);
}

TEST_CASE("sampled objective gradient matches central differences") {
  const auto m = test::random_matrix(6, 7, 0.4, DatasetKind::implicit, 3).with_appended_users({as_row({0, 6})});
  auto model = NeumfModel::initialized(7, 7, small_neumf(3), 3);
  auto rng = make_rng(3, 9);
  for (auto& p : model.params()) p += 0.3 * standard_normal(rng);
  const std::vector<Index> fakes{6}, items{1, 2, 5};
  const auto y = predict_matrix(model);
  const auto anchors = list_anchors(y, m, 6, 2);
  REQUIRE(!anchors.empty());
  const PromotionObjective obj(fakes, items, 7.0 / 3.0, anchors, 2.0, 6, 0.5, 10.0);
  const LossSpec spec{{}, &obj, 1.0};
  const auto grad = gradient(model, spec);
  const double err = test::max_relative_gradient_error(
      model, grad.values, [&](const NeumfModel& mm) { return evaluate_loss(mm, spec); }, 1e-4, 1e-6);
  CHECK(err < 1e-3);
}

// ---- poison model ---------------------------------------------------------------

TEST_CASE("pretraining warm starts and grows the user table") {
  const auto base = test::random_matrix(12, 10, 0.35, DatasetKind::implicit, 2);
  const auto cfg = small_neumf(2, 4);
  const auto first = pretrain_poison_model(base, cfg, std::nullopt, 0);
  CHECK(first.model.num_users() == 12);

  const auto grown = base.with_appended_users({as_row({1, 2}), as_row({3})});
  const auto same = pretrain_poison_model(grown, cfg, first.model, 0);
  CHECK(same.model.num_users() == 14);
  for (std::size_t u = 0; u < 12; ++u)
    for (std::size_t i = 0; i < 10; ++i) CHECK(forward(same.model, u, i) == forward(first.model, u, i));
  const auto unchanged = pretrain_poison_model(base, cfg, first.model, 0);
  CHECK(unchanged.model == first.model);
  CHECK_THROWS(pretrain_poison_model(base, cfg, same.model, 1));
}

TEST_CASE("warm-started pretraining matches a from-scratch model on held-out positives") {
  const auto full = test::random_matrix(60, 40, 0.2, DatasetKind::implicit, 8);
  const auto split = split_validation(full, 1, 20, 8);
  auto cfg = small_neumf(8, 20);
  const auto scratch = train(split.train, cfg).model;
  const auto warm_base = train(split.train, small_neumf(9, 17)).model;
  const auto warm = pretrain_poison_model(split.train, cfg, warm_base, 3).model;
  const double hr_scratch = validation_hit_ratio(scratch, split.validation, 10);
  const double hr_warm = validation_hit_ratio(warm, split.validation, 10);
  CHECK(std::abs(hr_warm - hr_scratch) <= 0.2 * hr_scratch);
}

TEST_CASE("lambda zero reduces poison training to plain training") {
  const auto m = test::random_matrix(10, 9, 0.3, DatasetKind::implicit, 5).with_appended_users({as_row({0, 4})});
  const auto cfg = small_neumf(5, 2);
  const PoisonModelState st{NeumfModel::initialized(11, 9, cfg, 5), m};
  AttackConfig attack;
  attack.target = 4;
  attack.n = 2;
  attack.k = 3;
  attack.lambda = 0.0;
  const std::vector<Index> fakes{10};
  NeumfConfig plain = cfg;
  plain.epochs = attack.poison_epochs;
  CHECK(poison_train(st, fakes, attack, cfg).model == train(m, plain, st.model).model);
  CHECK(effective_lambda(st, fakes, attack, cfg) == 0.0);

  attack.lambda = 0.5;
  attack.poison_epochs = 0;
  CHECK(poison_train(st, fakes, attack, cfg).model == st.model);
}

TEST_CASE("poison training lowers the promotion loss") {
  std::size_t improved = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto m = test::random_matrix(6, 8, 0.4, DatasetKind::implicit, 20 + seed);
    AttackConfig attack;
    attack.target = 7;
    m = m.filter_entries([](std::size_t, const Interaction& e) { return e.item != 7; });
    m = m.with_appended_users({as_row({0, 3, 7})});
    attack.n = 2;
    attack.k = 2;
    attack.poison_epochs = 10;
    attack.lambda = 1.0;
    attack.objective_user_sample = 0;
    attack.objective_item_sample = 0;
    const auto cfg = small_neumf(seed, 10);
    const auto st = pretrain_poison_model(m, cfg, std::nullopt, 0);
    const std::vector<Index> fakes{6};
    const auto after = poison_train(st, fakes, attack, cfg);
    const double before_l = loss_all(predict_matrix(st.model), m, 7, 2, attack.kappa);
    const double after_l = loss_all(predict_matrix(after.model), m, 7, 2, attack.kappa);
    if (after_l < before_l) ++improved;
  }
  CHECK(improved >= 4);
}

// ---- selection --------------------------------------------------------------------

TEST_CASE("uniform weights select the plain top-n") {
  AttackConfig cfg;
  cfg.target = 1;
  cfg.n = 3;
  SelectionProbabilities p(6);
  const std::vector<double> y{0.2, 0.99, 0.5, 0.7, 0.1, 0.6};
  CHECK(select_fillers(y, p, cfg) == std::vector<Index>{3, 5, 2});
  CHECK(p.p == std::vector<double>{1.0, 1.0, 0.9, 0.9, 1.0, 0.9});
}

TEST_CASE("attenuated weights shift later picks") {
  AttackConfig cfg;
  cfg.target = 4;
  cfg.n = 2;
  cfg.delta = 0.5;
  SelectionProbabilities p(5);
  const std::vector<double> y{0.9, 0.8, 0.6, 0.5, 0.1};
  CHECK(select_fillers(y, p, cfg) == std::vector<Index>{0, 1});
  CHECK(select_fillers(y, p, cfg) == std::vector<Index>{2, 3});
  CHECK(select_fillers(y, p, cfg) == std::vector<Index>{0, 1});
  CHECK(p.p == std::vector<double>{0.25, 0.25, 0.5, 0.5, 1.0});
}

TEST_CASE("weights reset once every item has decayed") {
  AttackConfig cfg;
  cfg.target = 0;
  cfg.n = 2;
  cfg.delta = 0.5;
  cfg.include_target_by_default = false;
  SelectionProbabilities p(3);
  const std::vector<double> y{0.3, 0.2, 0.1};
  CHECK(select_fillers(y, p, cfg).size() == 3);
  CHECK(p.p == std::vector<double>{1.0, 1.0, 1.0});
}

TEST_CASE("selection weights never increase except on reset") {
  auto rng = make_rng(6);
  AttackConfig cfg;
  cfg.target = 3;
  cfg.n = 4;
  cfg.delta = 0.7;
  SelectionProbabilities p(15);
  std::vector<double> y(15);
  for (int step = 0; step < 200; ++step) {
    for (auto& v : y) v = uniform_real(rng);
    const auto before = p.p;
    select_fillers(y, p, cfg);
    const bool reset = std::all_of(p.p.begin(), p.p.end(), [](double x) { return x == 1.0; });
    if (reset) continue;
    for (std::size_t i = 0; i < 15; ++i) CHECK(p.p[i] <= before[i]);
  }
}

// ---- filler scores ----------------------------------------------------------------

TEST_CASE("filler score distributions") {
  std::vector<Triplet> t;
  for (Index u = 0; u < 10; ++u) t.push_back({u, 0, 5.0, kNoTimestamp});
  const auto m = InteractionMatrix::from_triplets(10, 3, 5.0, DatasetKind::explicit_ratings, t);
  const auto stats = compute_item_stats(m);
  CHECK(stats.mean[0] == 5.0);
  CHECK(stats.std[0] == 0.0);
  auto rng = make_rng(1);
  const std::vector<Index> one{0};
  for (int k = 0; k < 20; ++k) CHECK(generate_filler_scores(one, stats, 5.0, m.kind(), rng)[0].score == 5.0);
  const std::vector<Index> three{2, 0, 1};
  for (const auto& e : generate_filler_scores(three, stats, 1.0, DatasetKind::implicit, rng)) CHECK(e.score == 1.0);
  const auto sorted = generate_filler_scores(three, stats, 5.0, m.kind(), rng);
  CHECK(sorted[0].item == 0);
  CHECK(sorted[2].item == 2);

  ItemRatingStats synthetic;
  synthetic.mean = {3.5};
  synthetic.std = {1.0};
  synthetic.count = {10};
  double sum = 0.0;
  for (int k = 0; k < 10000; ++k) {
    const double s = generate_filler_scores(one, synthetic, 5.0, DatasetKind::explicit_ratings, rng)[0].score;
    CHECK(s >= 1.0);
    CHECK(s <= 5.0);
    sum += s;
  }
  CHECK(std::abs(sum / 10000.0 - rounded_clamped_mean(3.5, 1.0, 5)) < 0.1);
}

// ---- attacks ------------------------------------------------------------------------

TEST_CASE("our attack produces well-formed profiles") {
  const auto m = test::random_matrix(6, 8, 0.4, DatasetKind::explicit_ratings, 11);
  AttackConfig cfg;
  cfg.target = 5;
  cfg.m = 1;
  cfg.n = 2;
  cfg.k = 3;
  cfg.seed = 11;
  const auto fakes = run_our_attack(m, small_neumf(11, 3), cfg);
  check_profiles(fakes, m, cfg);

  cfg.include_target_by_default = false;
  cfg.m = 3;
  cfg.s = 2;
  std::vector<AttackProgress> seen;
  const auto variant = run_our_attack(m, small_neumf(11, 3), cfg, [&](const AttackProgress& p) { seen.push_back(p); });
  check_profiles(variant, m, cfg);
  REQUIRE(seen.size() == 2);
  CHECK(seen.back().produced == 3);
  CHECK(run_our_attack(m, small_neumf(11, 3), cfg)[2].ratings == variant[2].ratings);
}

TEST_CASE("random attack") {
  const auto m = test::random_matrix(10, 5, 0.5, DatasetKind::explicit_ratings, 2);
  AttackConfig cfg;
  cfg.target = 2;
  cfg.n = 4;
  cfg.m = 3;
  cfg.k = 2;
  const auto fakes = run_random_attack(m, cfg, 7);
  check_profiles(fakes, m, cfg);
  for (const auto& f : fakes) {
    std::set<Index> items;
    for (const auto& e : f.ratings) items.insert(e.item);
    CHECK(items == std::set<Index>{0, 1, 2, 3, 4});
  }
  const auto again = run_random_attack(m, cfg, 7);
  for (std::size_t j = 0; j < 3; ++j) CHECK(again[j].ratings == fakes[j].ratings);
}

TEST_CASE("random fillers are uniform") {
  const auto m = test::random_matrix(30, 20, 0.3, DatasetKind::implicit, 3);
  AttackConfig cfg;
  cfg.target = 0;
  cfg.n = 5;
  cfg.m = 1000;
  const auto fakes = run_random_attack(m, cfg, 3);
  std::vector<double> count(20, 0.0);
  for (const auto& f : fakes)
    for (const auto& e : f.ratings)
      if (e.item != 0) count[e.item] += 1.0;
  const double expected = 1000.0 * 5.0 / 19.0;
  const double sigma = std::sqrt(1000.0 * (5.0 / 19.0) * (14.0 / 19.0));
  double chi2 = 0.0;
  for (Index i = 1; i < 20; ++i) {
    CHECK(std::abs(count[i] - expected) < 3.0 * sigma + 1e-9);
    chi2 += (count[i] - expected) * (count[i] - expected) / expected;
  }
  // 18 degrees of freedom: mean 18, sd 6.
  CHECK(chi2 < 18.0 + 3.0 * 6.0);
}

TEST_CASE("bandwagon splits fillers between popular and other items") {
  std::vector<Triplet> t;
  for (Index i = 0; i < 100; ++i) {
    for (Index u = 0; u < 5; ++u) t.push_back({u, i, 1.0 + static_cast<double>((i * 7 + u) % 5), kNoTimestamp});
  }
  // Item i gets a distinct mean through one extra rating pattern.
  for (Index i = 0; i < 100; ++i) t.push_back({5, i, i % 10 == 0 ? 5.0 : 1.0, kNoTimestamp});
  for (Index i = 0; i < 100; ++i) t.push_back({static_cast<Index>(6 + (i % 3)), i, 1.0 + (i % 5), kNoTimestamp});
  const auto m = InteractionMatrix::from_triplets(9, 100, 5.0, DatasetKind::explicit_ratings, t);
  const auto stats = compute_item_stats(m);

  AttackConfig cfg;
  cfg.target = 99;
  cfg.m = 20;
  for (std::size_t n : {30, 10}) {
    cfg.n = n;
    const auto fakes = run_bandwagon_attack(m, cfg, 4);
    check_profiles(fakes, m, cfg);
    // Top decile by mean score over non-target items; ties broken toward the lower index.
    std::vector<Index> order;
    for (Index i = 0; i < 99; ++i) order.push_back(i);
    std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return stats.mean[a] > stats.mean[b]; });
    const std::set<Index> top(order.begin(), order.begin() + 10);
    for (const auto& f : fakes) {
      std::size_t popular = 0;
      for (const auto& e : f.ratings)
        if (top.count(e.item)) ++popular;
      CHECK(popular >= (n == 30 ? 3u : 1u));
    }
  }
}

TEST_CASE("bandwagon on implicit data uses rating counts") {
  std::vector<Triplet> t;
  for (Index i = 0; i < 20; ++i)
    for (Index u = 0; u <= i; ++u) t.push_back({u, i, 1.0, kNoTimestamp});
  const auto m = InteractionMatrix::from_triplets(20, 20, 1.0, DatasetKind::implicit, t);
  AttackConfig cfg;
  cfg.target = 0;
  cfg.n = 10;
  cfg.m = 30;
  const auto fakes = run_bandwagon_attack(m, cfg, 1);
  check_profiles(fakes, m, cfg);
  for (const auto& f : fakes) {
    const bool has_popular = std::any_of(f.ratings.begin(), f.ratings.end(),
                                         [](const Interaction& e) { return e.item == 18 || e.item == 19; });
    CHECK(has_popular);
  }
}

TEST_CASE("MF attack profiles") {
  const auto m = test::random_matrix(30, 25, 0.25, DatasetKind::explicit_ratings, 6);
  AttackConfig cfg;
  cfg.target = 4;
  cfg.n = 6;
  cfg.m = 4;
  MfAttackConfig mf;
  mf.seed = 6;
  check_profiles(run_mf_attack(m, cfg, mf), m, cfg);

  cfg.include_target_by_default = false;
  check_profiles(run_mf_attack(m, cfg, mf), m, cfg);
}

TEST_CASE("MF attack without ascent ignores the target") {
  const auto m = test::random_matrix(30, 25, 0.25, DatasetKind::explicit_ratings, 7);
  MfAttackConfig mf;
  mf.seed = 7;
  mf.ascent_steps = 0;
  AttackConfig a;
  a.n = 6;
  a.m = 3;
  a.target = 2;
  AttackConfig b = a;
  b.target = 11;
  const auto fa = run_mf_attack(m, a, mf), fb = run_mf_attack(m, b, mf);
  for (std::size_t j = 0; j < 3; ++j) {
    std::set<Index> sa, sb;
    for (const auto& e : fa[j].ratings)
      if (e.item != a.target && e.item != b.target) sa.insert(e.item);
    for (const auto& e : fb[j].ratings)
      if (e.item != a.target && e.item != b.target) sb.insert(e.item);
    std::vector<Index> common;
    std::set_intersection(sa.begin(), sa.end(), sb.begin(), sb.end(), std::back_inserter(common));
    CHECK(common.size() + 1 >= a.n);
  }
}

TEST_CASE("lower delta spreads fillers over more items") {
  const auto m = test::random_matrix(15, 30, 0.3, DatasetKind::explicit_ratings, 12);
  const auto cfg_nn = small_neumf(12, 3);
  auto max_frequency = [&](double delta) {
    AttackConfig cfg;
    cfg.target = 9;
    cfg.n = 4;
    cfg.m = 50;
    cfg.s = 10;
    cfg.delta = delta;
    cfg.pretrain_epochs = 1;
    cfg.poison_epochs = 1;
    cfg.seed = 12;
    std::map<Index, int> freq;
    for (const auto& f : run_our_attack(m, cfg_nn, cfg))
      for (const auto& e : f.ratings)
        if (e.item != cfg.target) ++freq[e.item];
    int best = 0;
    for (const auto& [item, c] : freq) best = std::max(best, c);
    return best;
  };
  CHECK(max_frequency(0.3) <= max_frequency(1.0));
}

TEST_CASE("injected attacks lift the target on a toy") {
  const auto m = test::random_matrix(40, 30, 0.15, DatasetKind::implicit, 13)
                     .filter_entries([](std::size_t, const Interaction& e) { return e.item != 29; });
  auto cfg_nn = small_neumf(13, 10);
  AttackConfig cfg;
  cfg.target = 29;
  cfg.n = 5;
  cfg.m = 6;
  cfg.s = 3;
  cfg.k = 5;
  cfg.seed = 13;
  const std::vector<Index> targets{29};
  const double none = evaluate_hr(m, cfg_nn, targets, 5, 5).mean_hr;
  const double ours = evaluate_hr(inject(m, run_our_attack(m, cfg_nn, cfg)), cfg_nn, targets, 5, 5).mean_hr;
  MfAttackConfig mf;
  mf.seed = 13;
  const double mf_hr = evaluate_hr(inject(m, run_mf_attack(m, cfg, mf)), cfg_nn, targets, 5, 5).mean_hr;
  CHECK(ours > none);
  CHECK(mf_hr > none);
}

// ---- I/O ------------------------------------------------------------------------

TEST_CASE("attack config files") {
  std::istringstream in("# comment\nkappa = 0.5\nn=12\nK = 20\ninclude_target_by_default = false\nseed = 9\n");
  const auto cfg = parse_attack_config(in);
  CHECK(cfg.kappa == 0.5);
  CHECK(cfg.n == 12);
  CHECK(cfg.k == 20);
  CHECK(!cfg.include_target_by_default);
  CHECK(cfg.seed == 9);
  CHECK(cfg.eta == 100.0);
  std::istringstream bad("kapa = 1\n");
  CHECK_THROWS_AS(parse_attack_config(bad), ParseError);
  std::istringstream junk("n = twelve\n");
  CHECK_THROWS_AS(parse_attack_config(junk), ParseError);
}

TEST_CASE("config validation rejects impossible settings") {
  AttackConfig cfg;
  cfg.target = 3;
  cfg.n = 3;
  cfg.k = 2;
  CHECK_NOTHROW(cfg.validate(4));
  cfg.n = 4;
  CHECK_THROWS(cfg.validate(4));
  cfg.n = 2;
  cfg.delta = 1.5;
  CHECK_THROWS(cfg.validate(4));
  cfg.delta = 0.9;
  cfg.target = 4;
  CHECK_THROWS(cfg.validate(4));
}

TEST_CASE("profiles round-trip through the text format") {
  const auto m = test::random_matrix(8, 6, 0.4, DatasetKind::explicit_ratings, 3);
  AttackConfig cfg;
  cfg.target = 1;
  cfg.n = 3;
  cfg.m = 2;
  cfg.k = 3;
  const auto fakes = run_random_attack(m, cfg, 3);
  std::stringstream buf;
  write_profiles(buf, m, fakes);
  const auto back = read_profiles(buf, m);
  REQUIRE(back.size() == 2);
  for (std::size_t j = 0; j < 2; ++j) {
    CHECK(back[j].user == fakes[j].user);
    CHECK(back[j].ratings.size() == fakes[j].ratings.size());
    for (std::size_t k = 0; k < back[j].ratings.size(); ++k) {
      CHECK(back[j].ratings[k].item == fakes[j].ratings[k].item);
      CHECK(back[j].ratings[k].score == fakes[j].ratings[k].score);
    }
  }
  const auto injected = inject(m, fakes);
  CHECK(injected.num_users() == 10);
  CHECK(injected.num_normal_users() == 8);
  std::istringstream low("3 1 4\n");
  CHECK_THROWS(read_profiles(low, m));
}
