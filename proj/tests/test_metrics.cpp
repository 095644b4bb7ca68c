#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "fairgc/metrics.hpp"
#include "json.hpp"
#include "test_util.hpp"

using namespace fairgc;
using testutil::make_rng;

TEST_CASE("accuracy, delta_sp, delta_eo: hand-checked cases") {
  //             idx:  0  1  2  3  4  5  6  7
  const std::vector<int> pred = {1, 0, 1, 1, 0, 1, 0, 0};
  const std::vector<int> actual = {1, 0, 0, 1, 1, 1, 0, 1};
  const std::vector<int> group = {0, 0, 0, 0, 1, 1, 1, 1};

  CHECK(metrics::accuracy(pred, actual) == real_t(5) / 8);
  // P(pred=1|g=0) = 3/4, P(pred=1|g=1) = 1/4.
  CHECK(metrics::delta_sp(pred, group, 1) == real_t(3) / 4 - real_t(1) / 4);
  // Positives: g=0 has {0,3} both hit (TPR 1), g=1 has {4,5,7} one hit.
  CHECK(std::abs(metrics::delta_eo(pred, actual, group, 1) -
                 (1.0 - 1.0 / 3.0)) < 1e-15);

  // Flipping the positive class changes both metrics' base rates.
  CHECK(metrics::delta_sp(pred, group, 0) == real_t(3) / 4 - real_t(1) / 4);
  // Negative-class "positives": g=0 has {1,2} with pred0 {1}, g=1 has {6}.
  CHECK(std::abs(metrics::delta_eo(pred, actual, group, 0) - 0.5) < 1e-15);
}

TEST_CASE("undefined metrics raise rather than report zero") {
  const std::vector<int> pred = {1, 0, 1};
  const std::vector<int> actual = {1, 0, 1};
  CHECK(testutil::throws_with<DataError>(
      [&] { metrics::delta_sp(pred, {0, 0, 0}, 1); }, "group 1"));
  // Group 1 present but contains no positive-label node.
  CHECK(testutil::throws_with<DataError>(
      [&] { metrics::delta_eo(pred, {1, 1, 0}, {0, 0, 1}, 1); }, "group 1"));
  CHECK_THROWS_AS(metrics::delta_sp({}, {}, 1), DataError);
  CHECK_THROWS_AS(metrics::accuracy({1}, {1, 0}), DataError);
  CHECK_THROWS_AS(metrics::delta_sp(pred, {0, 2, 1}, 1), DataError);
}

TEST_CASE("fairness metrics agree with brute-force oracles on random data") {
  auto rng = make_rng(91);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 500;
    std::vector<int> pred(n), actual(n), group(n);
    for (std::size_t i = 0; i < n; ++i) {
      pred[i] = static_cast<int>(rng() % 3);
      actual[i] = static_cast<int>(rng() % 3);
      group[i] = static_cast<int>(rng() % 2);
    }
    const int positive = static_cast<int>(rng() % 3);
    // Guarantee both groups hold a positive-label node.
    actual[0] = positive;
    group[0] = 0;
    actual[1] = positive;
    group[1] = 1;

    CHECK(metrics::accuracy(pred, actual) ==
          testutil::oracle_accuracy(pred, actual));
    CHECK(metrics::delta_sp(pred, group, positive) ==
          testutil::oracle_delta_sp(pred, group, positive));
    CHECK(metrics::delta_eo(pred, actual, group, positive) ==
          testutil::oracle_delta_eo(pred, actual, group, positive));
  }
}

TEST_CASE("binarize_groups: identity and partition mapping") {
  CHECK(metrics::binarize_groups({0, 1, 1, 0}, {}) ==
        std::vector<int>{0, 1, 1, 0});
  // Values {0,1,2,3} folded into {0,1} by the partition table.
  CHECK(metrics::binarize_groups({0, 1, 2, 3}, {0, 0, 1, 1}) ==
        std::vector<int>{0, 0, 1, 1});
  CHECK(testutil::throws_with<ConfigError>(
      [&] { metrics::binarize_groups({0, 2}, {}); }, "partition must be configured"));
  CHECK_THROWS_AS(metrics::binarize_groups({0, 4}, {0, 1, 0}), ConfigError);
  CHECK_THROWS_AS(metrics::binarize_groups({0, 1}, {0, 2}), ConfigError);
  CHECK_THROWS_AS(metrics::binarize_groups({-1}, {}), DataError);
}

TEST_CASE("evaluate_predictions: fields, group tables, JSON") {
  auto rng = make_rng(92);
  const std::size_t n = 300;
  std::vector<int> pred(n), actual(n), sensitive(n);
  for (std::size_t i = 0; i < n; ++i) {
    pred[i] = static_cast<int>(rng() % 2);
    actual[i] = static_cast<int>(rng() % 2);
    sensitive[i] = static_cast<int>(rng() % 4);
  }
  actual[0] = 1;
  sensitive[0] = 0;
  actual[1] = 1;
  sensitive[1] = 2;
  const std::vector<int> partition = {0, 0, 1, 1};
  const metrics::FairnessReport rep =
      metrics::evaluate_predictions(pred, actual, sensitive, 1, partition);

  const std::vector<int> groups = metrics::binarize_groups(sensitive, partition);
  CHECK(rep.accuracy == testutil::oracle_accuracy(pred, actual));
  CHECK(rep.delta_sp == testutil::oracle_delta_sp(pred, groups, 1));
  CHECK(rep.delta_eo == testutil::oracle_delta_eo(pred, actual, groups, 1));
  CHECK(rep.sample_count == n);
  CHECK(rep.positive_class == 1);

  std::array<std::size_t, 2> counts{0, 0};
  for (int g : groups) ++counts[static_cast<std::size_t>(g)];
  CHECK(rep.group_counts == counts);

  REQUIRE(rep.group_tables.size() == 2);
  for (int g = 0; g < 2; ++g) {
    const num::Tensor2& t = rep.group_tables[static_cast<std::size_t>(g)];
    for (std::size_t a = 0; a < t.rows; ++a)
      for (std::size_t p = 0; p < t.cols; ++p) {
        std::size_t want = 0;
        for (std::size_t i = 0; i < n; ++i)
          if (groups[i] == g && actual[i] == static_cast<int>(a) &&
              pred[i] == static_cast<int>(p))
            ++want;
        CHECK(t(a, p) == static_cast<real_t>(want));
      }
  }

  const nlohmann::json j = nlohmann::json::parse(rep.to_json());
  CHECK(j.at("accuracy").get<real_t>() == rep.accuracy);
  CHECK(j.at("delta_sp").get<real_t>() == rep.delta_sp);
  CHECK(j.at("delta_eo").get<real_t>() == rep.delta_eo);
  CHECK(j.at("sample_count").get<std::size_t>() == n);
}

namespace {

condense::CondensedGraph tiny_condensed(const graph::Graph& g,
                                        const std::vector<int>& labels,
                                        const std::vector<int>& sensitive) {
  condense::CondensedGraph cg;
  cg.num_syn = labels.size();
  cg.num_classes = 2;
  cg.num_groups = 2;
  cg.labels = labels;
  cg.sensitive = sensitive;
  cg.source_stats = graph::empirical_stats(g);
  return cg;
}

}  // namespace

TEST_CASE("audit_condensation flags marginal drift beyond 1/n_syn") {
  auto rng = make_rng(93);
  const graph::Graph g = testutil::random_graph(rng, 400, 2, 2, 4);
  const auto stats = graph::empirical_stats(g);

  // A faithful allocation stays inside the bound.
  const auto alloc = condense::allocate_attributes(stats, 40, 7, true);
  condense::CondensedGraph good = tiny_condensed(g, alloc.labels, alloc.sensitive);
  const metrics::DriftTable ok = metrics::audit_condensation(g, good);
  CHECK(ok.violations.empty());
  CHECK(ok.bound == real_t(1) / 40);
  CHECK(ok.max_marginal_gap <= ok.bound + 1e-12);

  // Independent gap computation.
  std::size_t c0 = 0;
  for (int y : alloc.labels)
    if (y == 0) ++c0;
  const real_t want_gap =
      std::abs(static_cast<real_t>(c0) / 40 - stats.class_props[0]);
  CHECK(std::abs(ok.class_gaps[0] - want_gap) < 1e-15);

  // An all-one-class condensation violates the label marginal.
  condense::CondensedGraph bad =
      tiny_condensed(g, std::vector<int>(40, 1), alloc.sensitive);
  const metrics::DriftTable flagged = metrics::audit_condensation(g, bad);
  CHECK_FALSE(flagged.violations.empty());
  bool mentions_label = false;
  for (const std::string& v : flagged.violations)
    if (v.find("label marginal") != std::string::npos) mentions_label = true;
  CHECK(mentions_label);
  CHECK(flagged.render().find("VIOLATION") != std::string::npos);
  CHECK(ok.render().find("VIOLATION") == std::string::npos);

  const nlohmann::json j = nlohmann::json::parse(flagged.to_json());
  CHECK(j.at("bound").get<real_t>() == flagged.bound);
  CHECK(j.at("violations").size() == flagged.violations.size());

  // Cardinality mismatch is a data error, not a silent pass.
  condense::CondensedGraph mism = good;
  mism.num_classes = 3;
  CHECK(testutil::throws_with<DataError>(
      [&] { metrics::audit_condensation(g, mism); }, "cardinality mismatch"));
  condense::CondensedGraph empty = good;
  empty.labels.clear();
  CHECK_THROWS_AS(metrics::audit_condensation(g, empty), DataError);
}
