#include <doctest.h>

#include <filesystem>
#include <numeric>
#include <set>
#include <sstream>

#include "poisonrec/dataset.hpp"
#include "test_support.hpp"

using namespace poisonrec;

TEST_CASE("parse_movielens maps tab-separated fields") {
  std::istringstream in("196\t242\t3\t881250949\n186\t302\t3\t891717742\n");
  const auto r = parse_movielens(in);
  REQUIRE(r.size() == 2);
  CHECK(r[0].user == "196");
  CHECK(r[0].item == "242");
  CHECK(r[0].score == 3.0);
  CHECK(r[0].timestamp == 881250949);
}

TEST_CASE("parse_movielens accepts the double-colon format") {
  std::istringstream in("1::1193::5::978300760\n1::661::3::978302109\n");
  const auto r = parse_movielens(in);
  REQUIRE(r.size() == 2);
  CHECK(r[1].item == "661");
  CHECK(r[1].score == 3.0);
}

TEST_CASE("parse_movielens reports the failing line") {
  std::istringstream in("1\t2\n");
  try {
    parse_movielens(in);
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 1);
  }
  std::istringstream later("1\t2\t3\t4\n\n5\tx\n");
  CHECK_THROWS_AS(parse_movielens(later), ParseError);
  std::istringstream empty("");
  CHECK_THROWS_AS(parse_movielens(empty), EmptyDatasetError);
}

TEST_CASE("parse_lastfm_tags keeps duplicates and skips the header") {
  std::istringstream in("userID\ttagID\tartistID\ttimestamp\n2\t51\t13\t1238536800000\n2\t51\t15\t1238536800000\n");
  const auto r = parse_lastfm_tags(in);
  REQUIRE(r.size() == 2);
  CHECK(r[0].user == "2");
  CHECK(r[0].item == "51");
  CHECK(r[0].score == 1.0);
  CHECK(r[1].score == 1.0);
  std::istringstream empty("");
  CHECK(parse_lastfm_tags(empty).empty());
  std::istringstream dated("2 52 13 1 4 2009\n");
  CHECK(parse_lastfm_tags(dated).at(0).timestamp.has_value());
  std::istringstream bad("2 52\n");
  CHECK_THROWS_AS(parse_lastfm_tags(bad), ParseError);
}

TEST_CASE("preprocess leaves a 3-core untouched") {
  std::vector<RawRating> raw;
  for (int u = 0; u < 3; ++u)
    for (int i = 0; i < 3; ++i) raw.push_back({std::to_string(u), std::to_string(i), 1.0 + u, std::nullopt});
  const auto m = preprocess(raw, DatasetKind::explicit_ratings, 3);
  CHECK(m.num_users() == 3);
  CHECK(m.num_items() == 3);
  CHECK(m.nnz() == 9);
  CHECK(m.r_max() == 3.0);
}

TEST_CASE("preprocess peels a star graph to nothing") {
  std::vector<RawRating> raw;
  for (int i = 0; i < 20; ++i) raw.push_back({"hub", "item" + std::to_string(i), 1.0, std::nullopt});
  CHECK_THROWS_AS(preprocess(raw, DatasetKind::implicit, 2), EmptyDatasetError);
}

TEST_CASE("preprocess deduplicates, binarizes and re-indexes numerically") {
  std::vector<RawRating> raw{{"10", "7", 4.0, {}}, {"10", "7", 2.0, {}}, {"2", "7", 5.0, {}}, {"2", "30", 3.0, {}}};
  const auto m = preprocess(raw, DatasetKind::implicit, 1);
  CHECK(m.num_users() == 2);
  CHECK(m.num_items() == 2);
  CHECK(m.nnz() == 3);
  CHECK(m.user_ids() == std::vector<std::string>{"2", "10"});
  CHECK(m.item_ids() == std::vector<std::string>{"7", "30"});
  for (const auto& t : m.triplets()) CHECK(t.score == 1.0);
  const auto e = preprocess(raw, DatasetKind::explicit_ratings, 1);
  CHECK(e.score(1, 0) == 4.0);
}

TEST_CASE("k-core fixpoint and idempotence on random data") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto rng = make_rng(seed);
    std::vector<RawRating> raw;
    const std::size_t n = 50 + uniform_index(rng, 400);
    for (std::size_t k = 0; k < n; ++k) {
      raw.push_back({std::to_string(uniform_index(rng, 40)), std::to_string(uniform_index(rng, 60)),
                     1.0 + static_cast<double>(uniform_index(rng, 5)), std::nullopt});
    }
    const std::size_t core = 2 + uniform_index(rng, 4);
    InteractionMatrix m;
    try {
      m = preprocess(raw, DatasetKind::explicit_ratings, core);
    } catch (const EmptyDatasetError&) {
      continue;
    }
    for (std::size_t u = 0; u < m.num_users(); ++u) CHECK(m.row(u).size() >= core);
    for (auto c : m.item_counts()) CHECK(c >= core);

    std::vector<RawRating> again;
    for (const auto& t : m.triplets()) again.push_back({m.user_ids()[t.user], m.item_ids()[t.item], t.score, {}});
    const auto m2 = preprocess(again, DatasetKind::explicit_ratings, core);
    CHECK(m2 == m);
    CHECK(std::set<std::string>(m.user_ids().begin(), m.user_ids().end()).size() == m.num_users());
  }
}

TEST_CASE("split_validation holds out the most recent item") {
  std::vector<Triplet> t;
  for (Index i = 0; i < 20; ++i) t.push_back({0, i, 3.0, 1000 + i});
  for (Index i = 0; i < 5; ++i) t.push_back({1, i, 4.0, 50 - i});
  t.push_back({2, 3, 1.0, 1});
  const auto m = InteractionMatrix::from_triplets(3, 40, 5.0, DatasetKind::explicit_ratings, t);
  const auto s = split_validation(m, 1, 5, 9);
  CHECK(s.train.row(0).size() == 19);
  CHECK(s.train.row(1).size() == 4);
  CHECK(s.train.row(2).size() == 1);
  CHECK(s.warnings.size() == 1);
  REQUIRE(s.validation.size() == 2);
  CHECK(s.validation[0].positive == 19);
  CHECK(s.validation[1].positive == 0);
  for (const auto& vc : s.validation) {
    CHECK(!s.train.has(vc.user, vc.positive));
    CHECK(vc.negatives.size() == 5);
  }
  const auto again = split_validation(m, 1, 5, 9);
  CHECK(again.train == s.train);
  CHECK(again.validation.size() == s.validation.size());
  CHECK(again.validation[0].negatives == s.validation[0].negatives);
}

TEST_CASE("split_validation negatives are unrated and distinct") {
  auto rng = make_rng(4);
  std::vector<Triplet> t;
  for (Index u = 0; u < 5; ++u) {
    for (Index i = 0; i < 200; ++i) {
      if (uniform_real(rng) < 0.3) t.push_back({u, i, 1.0, kNoTimestamp});
    }
  }
  const auto m = InteractionMatrix::from_triplets(5, 200, 1.0, DatasetKind::implicit, t);
  const auto s = split_validation(m, 1, 99, 3);
  for (const auto& vc : s.validation) {
    CHECK(vc.negatives.size() == 99);
    CHECK(std::set<Index>(vc.negatives.begin(), vc.negatives.end()).size() == 99);
    for (Index j : vc.negatives) CHECK(!m.has(vc.user, j));
  }
}

TEST_CASE("canonical format round-trips, fake boundary included") {
  const auto m = test::random_matrix(12, 9, 0.4, DatasetKind::explicit_ratings, 5);
  const auto with_fakes = m.with_appended_users({{{2, 5.0}, {4, 3.0}}});
  std::stringstream buf;
  write_matrix(buf, with_fakes);
  const auto back = read_matrix(buf);
  CHECK(back == with_fakes);
  CHECK(back.num_normal_users() == 12);
  CHECK(back.num_users() == 13);
}

TEST_CASE("matrix editing helpers") {
  const auto m = test::random_matrix(10, 8, 0.5, DatasetKind::explicit_ratings, 7);
  const std::vector<Index> drop{1, 4};
  const auto kept = m.without_users(drop);
  CHECK(kept.num_users() == 8);
  std::size_t k = 0;
  for (std::size_t u = 0; u < m.num_users(); ++u) {
    if (u == 1 || u == 4) continue;
    CHECK(std::vector<Interaction>(kept.row(k).begin(), kept.row(k).end()) ==
          std::vector<Interaction>(m.row(u).begin(), m.row(u).end()));
    ++k;
  }
  std::vector<Index> all(m.num_users());
  std::iota(all.begin(), all.end(), Index{0});
  CHECK_THROWS_AS(m.without_users(all), EmptyDatasetError);
  CHECK(m.without_users({}) == m);
  CHECK_THROWS(m.with_appended_users({{{99, 1.0}}}));
}

TEST_CASE("ML-100K file has the published shape" * doctest::skip(!test::has_ml100k())) {
  const auto raw = parse_movielens(test::ml100k_path());
  CHECK(raw.size() == 100000);
  const auto m = preprocess(raw, DatasetKind::explicit_ratings, 1);
  CHECK(m.num_users() == 943);
  CHECK(m.num_items() == 1682);
  CHECK(m.nnz() == 100000);
  CHECK(m.r_max() == 5.0);
}
