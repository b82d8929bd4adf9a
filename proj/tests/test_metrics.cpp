#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <random>
#include <sstream>
#include <string>

#include "distil/errors.hpp"
#include "distil/ioutil.hpp"
#include "distil/metrics.hpp"
#include "distil/rng.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace distil;

namespace {
constexpr double kMapTenThirds = 0.56666666666666665;  // (1 + 1/2 + 1/5) / 3
}

TEST_CASE("ap_at_k truncated reciprocal ranks") {
  const ProbDist p = {0.5, 0.3, 0.1, 0.07, 0.03};
  CHECK(ap_at_k(p, 0, 3) == 1.0);
  CHECK(ap_at_k(p, 1, 3) == 0.5);
  CHECK(ap_at_k(p, 2, 3) == doctest::Approx(1.0 / 3).epsilon(1e-12));
  CHECK(ap_at_k(p, 3, 3) == 0.0);
  CHECK(ap_at_k(p, 3, 5) == 0.25);
  CHECK(ap_at_k(p, 4, 3) == 0.0);
  CHECK(ap_at_k(p, 4, 5) == 0.2);
  CHECK_THROWS_AS(ap_at_k(p, 0, 0), ConfigError);
  CHECK_THROWS_AS(ap_at_k(p, 0, 6), ConfigError);
}

TEST_CASE("map_at_k means and truncation at C") {
  const ProbDist r1 = {0.5, 0.3, 0.1, 0.06, 0.04};
  const ProbDist r2 = {0.3, 0.5, 0.1, 0.06, 0.04};
  ProbDist r5 = {0.3, 0.25, 0.2, 0.15, 0.1};
  // label 0 at rank 5
  r5 = {0.05, 0.3, 0.25, 0.2, 0.2};
  const std::vector<ProbDist> preds = {r1, r2, r5};
  const std::vector<int> labels = {0, 0, 0};
  CHECK(rank_of_label(r5, 0) == 5);
  CHECK(map_at_k(preds, labels, 3) == doctest::Approx(0.5).epsilon(1e-12));
  // k = 10 exceeds C = 5 and truncates per sample
  CHECK(map_at_k(preds, labels, 10) == doctest::Approx(kMapTenThirds).epsilon(1e-12));
  CHECK(map_at_k(preds, labels, 1) == doctest::Approx(1.0 / 3).epsilon(1e-12));
  CHECK_THROWS_AS(map_at_k({}, {}, 3), DataError);
  CHECK_THROWS_AS(map_at_k(preds, {0}, 3), DataError);
}

TEST_CASE("f1_at_3 hits at half and caps there") {
  const ProbDist hit = {0.5, 0.3, 0.2, 0.0};
  const ProbDist miss = {0.4, 0.3, 0.2, 0.1};
  CHECK(f1_at_3({hit, hit, hit}, {0, 1, 2}) == 0.5);
  CHECK(f1_at_3({miss}, {3}) == 0.0);
  CHECK(f1_at_3({hit, hit, miss}, {0, 1, 3}) == doctest::Approx(1.0 / 3).epsilon(1e-12));
}

TEST_CASE("error_report on the ten-sample fixture") {
  const auto f = fixtures::ten_sample_fixture();
  const MetricsReport r = error_report(f.preds, f.labels);
  CHECK(r.n == 10);
  CHECK(r.accuracy == doctest::Approx(0.3).epsilon(1e-12));
  CHECK(r.map_at_3 == doctest::Approx(14.0 / 30.0).epsilon(1e-12));
  CHECK(r.map_at_10 == doctest::Approx(0.525).epsilon(1e-12));
  CHECK(r.f1_at_3 == doctest::Approx(0.35).epsilon(1e-12));

  REQUIRE(r.per_class_errors.size() == 4);
  CHECK(r.per_class_errors.at(0) == 2);
  CHECK(r.per_class_errors.at(3) == 2);
  CHECK(r.per_class_errors.at(4) == 1);
  CHECK(r.per_class_errors.at(5) == 2);

  // seven singleton confusions, ascending pair order
  const std::vector<std::pair<std::pair<int, int>, int>> want = {
      {{0, 4}, 1}, {{0, 5}, 1}, {{3, 1}, 1}, {{3, 2}, 1},
      {{4, 1}, 1}, {{5, 0}, 1}, {{5, 3}, 1}};
  CHECK(r.top_confused_pairs == want);
}

TEST_CASE("error_report totals tie out with accuracy") {
  auto rng = make_stream(3, "metrics", 0);
  std::uniform_int_distribution<int> classes(4, 12);
  for (int trial = 0; trial < 50; ++trial) {
    const int c = classes(rng);
    std::uniform_int_distribution<int> label(0, c - 1);
    std::vector<ProbDist> preds;
    std::vector<int> labels;
    for (int i = 0; i < 40; ++i) {
      preds.push_back(i % 4 == 0 ? oracle::random_tied_dist(c, rng)
                                 : oracle::random_dist(c, rng));
      labels.push_back(label(rng));
    }
    const MetricsReport r = error_report(preds, labels);
    int errors = 0;
    for (const auto& [cls, count] : r.per_class_errors) {
      CHECK(count > 0);
      errors += count;
    }
    CHECK(errors == r.n - static_cast<int>(r.accuracy * r.n + 0.5));
    CHECK(r.accuracy <= r.map_at_3 + 1e-12);
    CHECK(r.map_at_3 <= r.map_at_10 + 1e-12);
    CHECK(r.f1_at_3 <= 0.5);
    CHECK(r.accuracy == doctest::Approx(oracle::accuracy_ref(preds, labels)).epsilon(1e-12));
    CHECK(r.map_at_3 == doctest::Approx(oracle::map_ref(preds, labels, 3)).epsilon(1e-12));
    CHECK(r.map_at_10 == doctest::Approx(oracle::map_ref(preds, labels, 10)).epsilon(1e-12));
    CHECK(r.f1_at_3 == doctest::Approx(oracle::f1_ref(preds, labels)).epsilon(1e-12));
    CHECK(r.per_class_errors == oracle::per_class_errors_ref(preds, labels));
    CHECK(r.top_confused_pairs == oracle::confused_ref(preds, labels));
  }
}

TEST_CASE("map_at_k never decreases in k") {
  auto rng = make_stream(5, "metrics", 1);
  const int c = 8;
  std::uniform_int_distribution<int> label(0, c - 1);
  std::vector<ProbDist> preds;
  std::vector<int> labels;
  for (int i = 0; i < 60; ++i) {
    preds.push_back(oracle::random_dist(c, rng));
    labels.push_back(label(rng));
  }
  double last = 0.0;
  for (int k = 1; k <= c; ++k) {
    const double v = map_at_k(preds, labels, k);
    CHECK(v >= last - 1e-12);
    last = v;
  }
}

TEST_CASE("confused pairs sort by count then pair and cap at ten") {
  // class 2i is always read as class 2i+1; pair frequency falls with i
  std::vector<ProbDist> preds;
  std::vector<int> labels;
  const int c = 26;
  for (int i = 0; i < 13; ++i) {
    ProbDist p(static_cast<std::size_t>(c), 0.0);
    p[static_cast<std::size_t>(2 * i + 1)] = 1.0;
    const int copies = 13 - i;
    for (int r = 0; r < copies; ++r) {
      preds.push_back(p);
      labels.push_back(2 * i);
    }
  }
  const MetricsReport r = error_report(preds, labels);
  REQUIRE(r.top_confused_pairs.size() == kTopConfusedPairs);
  for (int i = 0; i < kTopConfusedPairs; ++i) {
    CHECK(r.top_confused_pairs[static_cast<std::size_t>(i)].first ==
          std::make_pair(2 * i, 2 * i + 1));
    CHECK(r.top_confused_pairs[static_cast<std::size_t>(i)].second == 13 - i);
  }
}

TEST_CASE("perfect predictions give a clean report") {
  std::vector<ProbDist> preds;
  std::vector<int> labels;
  for (int i = 0; i < 8; ++i) {
    ProbDist p(6, 0.02);
    p[static_cast<std::size_t>(i % 6)] = 0.9;
    preds.push_back(p);
    labels.push_back(i % 6);
  }
  const MetricsReport r = error_report(preds, labels);
  CHECK(r.accuracy == 1.0);
  CHECK(r.map_at_3 == 1.0);
  CHECK(r.map_at_10 == 1.0);
  CHECK(r.f1_at_3 == 0.5);
  CHECK(r.per_class_errors.empty());
  CHECK(r.top_confused_pairs.empty());
}

TEST_CASE("metrics JSON round trip") {
  const auto f = fixtures::ten_sample_fixture();
  const MetricsReport r = error_report(f.preds, f.labels);
  const MetricsReport q = metrics_from_json(metrics_to_json(r));
  CHECK(q.map_at_3 == r.map_at_3);
  CHECK(q.map_at_10 == r.map_at_10);
  CHECK(q.accuracy == r.accuracy);
  CHECK(q.f1_at_3 == r.f1_at_3);
  CHECK(q.n == r.n);
  CHECK(q.per_class_errors == r.per_class_errors);
  CHECK(q.top_confused_pairs == r.top_confused_pairs);
  CHECK_THROWS_AS(metrics_from_json("nope"), DataError);
}

TEST_CASE("metrics CSV row shape") {
  const auto f = fixtures::ten_sample_fixture();
  const MetricsReport r = error_report(f.preds, f.labels);
  CHECK(metrics_csv_header() == "map_at_3,map_at_10,accuracy,f1_at_3,n");
  const std::string row = metrics_to_csv_row(r);
  int commas = 0;
  for (char ch : row) {
    if (ch == ',') {
      ++commas;
    }
  }
  CHECK(commas == 4);
  std::istringstream parts(row);
  std::string field;
  std::getline(parts, field, ',');
  CHECK(parse_double(field) == r.map_at_3);
}
