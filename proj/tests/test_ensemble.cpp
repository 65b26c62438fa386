#include <random>

#include "citta/ensemble.hpp"
#include "doctest.h"
#include "support/oracles.hpp"

using namespace citta;

namespace {

Eigen::VectorXd vec(std::initializer_list<double> v) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

ScoredPrediction pred(std::initializer_list<double> p, int source) {
  ScoredPrediction s;
  s.probs = vec(p);
  s.confidence = confidence(s.probs);
  s.source_index = source;
  return s;
}

std::vector<ScoredPrediction> random_preds(std::mt19937_64& rng, int n, int k) {
  std::normal_distribution<double> g(0, 2.0);
  std::vector<ScoredPrediction> out;
  for (int j = 0; j < n; ++j) {
    LogitVector z(k);
    for (int i = 0; i < k; ++i) z(i) = g(rng);
    out.push_back(score(z, j));
  }
  return out;
}

}  // namespace

TEST_CASE("softmax") {
  const auto u = softmax(vec({0, 0, 0}));
  for (int k = 0; k < 3; ++k) CHECK(u(k) == doctest::Approx(1.0 / 3).epsilon(1e-15));
  const auto s = softmax(vec({1000, 0}));
  CHECK(std::abs(s(0) - 1.0) < 1e-12);
  CHECK(std::abs(s(1)) < 1e-12);
  // 30-digit reference values.
  const auto p = softmax(vec({1, 2, 3}));
  CHECK(std::abs(p(0) - 0.090030573170380457998) < 1e-12);
  CHECK(std::abs(p(1) - 0.24472847105479765247) < 1e-12);
  CHECK(std::abs(p(2) - 0.66524095577482188953) < 1e-12);
  CHECK_THROWS_AS(softmax(vec({1, std::nan("")})), InvalidArgument);
  CHECK_THROWS_AS(softmax(vec({1, INFINITY})), InvalidArgument);

  SUBCASE("shift invariance and simplex") {
    std::mt19937_64 rng(43);
    std::uniform_real_distribution<double> c(-500, 500);
    std::normal_distribution<double> g(0, 5);
    for (int t = 0; t < 200; ++t) {
      LogitVector z(2 + t % 6);
      for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = g(rng);
      const auto a = softmax(z);
      const auto b = softmax((z.array() + c(rng)).matrix());
      CHECK((a - b).cwiseAbs().maxCoeff() < 1e-9);
      CHECK(std::abs(a.sum() - 1.0) < 1e-9);
      CHECK(a.minCoeff() >= 0.0);
    }
  }
}

TEST_CASE("confidence and argmax") {
  CHECK(confidence(vec({0.2, 0.5, 0.3})) == 0.5);
  CHECK(confidence(vec({0.25, 0.25, 0.25, 0.25})) == 0.25);
  CHECK(confidence(vec({0, 1, 0})) == 1.0);
  CHECK(argmax(vec({0.4, 0.4, 0.2})) == 0);
  CHECK(argmax(vec({0.1, 0.45, 0.45})) == 1);
}

TEST_CASE("filter_by_confidence") {
  const std::vector<ScoredPrediction> preds{pred({0.9, 0.1}, 0), pred({0.35, 0.65}, 1), pred({0.3, 0.3, 0.4}, 2)};
  const auto kept = filter_by_confidence(preds, 0.7);
  REQUIRE(kept.size() == 1);
  CHECK(kept[0].source_index == 0);
  CHECK(filter_by_confidence(preds, 0.0).size() == 3);
  CHECK(filter_by_confidence(preds, 0.95).empty());
  CHECK(filter_by_confidence(preds, 0.65).size() == 2);  // >= keeps the boundary
  CHECK_THROWS_AS(filter_by_confidence(preds, -0.01), InvalidArgument);
  CHECK_THROWS_AS(filter_by_confidence(preds, 1.01), InvalidArgument);

  const std::vector<ScoredPrediction> onehot{pred({1, 0}, 0), pred({0.999, 0.001}, 1)};
  const auto top = filter_by_confidence(onehot, 1.0);
  REQUIRE(top.size() == 1);
  CHECK(top[0].source_index == 0);

  SUBCASE("subset monotone in tau, order preserved") {
    std::mt19937_64 rng(47);
    for (int t = 0; t < 100; ++t) {
      const auto ps = random_preds(rng, 12, 4);
      const auto idx = [](const std::vector<ScoredPrediction>& v) {
        std::vector<int> out;
        for (const auto& p : v) out.push_back(p.source_index);
        return out;
      };
      std::vector<int> prev = idx(ps);
      for (double tau = 0.0; tau <= 1.0; tau += 0.05) {
        const auto cur = idx(filter_by_confidence(ps, tau));
        CHECK(std::is_sorted(cur.begin(), cur.end()));
        CHECK(std::includes(prev.begin(), prev.end(), cur.begin(), cur.end()));
        prev = cur;
      }
    }
  }
}

TEST_CASE("aggregate") {
  SUBCASE("symmetric pair ties to class 0") {
    const auto d = aggregate({pred({0.6, 0.4}, 1), pred({0.4, 0.6}, 2)}, pred({0.6, 0.4}, 0));
    CHECK(d.final_probs(0) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(d.predicted_class == 0);
    CHECK(d.retained_count == 2);
    CHECK_FALSE(d.fallback_used);
  }
  SUBCASE("fallback to the original distribution") {
    const auto original = pred({0.1, 0.9}, 0);
    const auto d = aggregate({}, original);
    CHECK(d.final_probs == original.probs);
    CHECK(d.predicted_class == 1);
    CHECK(d.fallback_used);
    CHECK(d.retained_count == 0);
  }
  SUBCASE("plain mean") {
    const auto d = aggregate({pred({1, 0}, 0), pred({1, 0}, 1), pred({0, 1}, 2)}, pred({1, 0}, 0));
    CHECK(d.final_probs(0) == doctest::Approx(2.0 / 3).epsilon(1e-15));
    CHECK(d.final_probs(1) == doctest::Approx(1.0 / 3).epsilon(1e-15));
    CHECK(d.predicted_class == 0);
  }
  SUBCASE("filter + aggregate matches a one-pass reference") {
    std::mt19937_64 rng(53);
    std::uniform_int_distribution<int> n(1, 8), k(2, 5);
    std::uniform_real_distribution<double> tau(0, 1);
    for (int t = 0; t < 500; ++t) {
      const auto ps = random_preds(rng, n(rng), k(rng));
      const double th = tau(rng);
      std::vector<std::vector<double>> raw;
      for (const auto& p : ps) raw.emplace_back(p.probs.data(), p.probs.data() + p.probs.size());
      const auto ref = oracle::filter_aggregate(raw, th);
      const auto d = aggregate(filter_by_confidence(ps, th), ps.front());
      CHECK(d.retained_count == ref.retained);
      CHECK(d.fallback_used == ref.fallback);
      CHECK(d.fallback_used == (d.retained_count == 0));
      CHECK(d.predicted_class == ref.cls);
      for (std::size_t i = 0; i < ref.probs.size(); ++i) CHECK(d.final_probs(i) == ref.probs[i]);
      CHECK(std::abs(d.final_probs.sum() - 1.0) < 1e-9);
      CHECK(d.final_probs.minCoeff() >= 0.0);
    }
  }
}
