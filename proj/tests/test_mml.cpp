#include <catch_amalgamated.hpp>

#include <cmath>

#include "irtforge/dataset.hpp"
#include "irtforge/error.hpp"
#include "irtforge/mml.hpp"
#include "irtforge/rng.hpp"
#include "oracles.hpp"

using namespace irtforge;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

constexpr ModelKind kKinds[] = {ModelKind::OneParam, ModelKind::TwoParam, ModelKind::ThreeParam,
                                ModelKind::FourParamFeasibility};

// Brute-force marginal log-likelihood and posterior in extended precision.
struct NaiveEStep {
  std::vector<long double> posterior;
  long double log_likelihood = 0.0L;
};

NaiveEStep naive_e_step(const ResponsePatternDataset& ds, const ItemParams& items, const QuadratureRule& rule,
                        ModelKind kind) {
  NaiveEStep out;
  const std::size_t K = rule.nodes.size();
  for (std::size_t j = 0; j < ds.subject_count(); ++j) {
    std::vector<long double> joint(K);
    long double total = 0.0L;
    for (std::size_t k = 0; k < K; ++k) {
      long double p = rule.weights[k];
      for (const Observation& o : ds.subject_observations(j)) {
        const long double pr = oracle::naive_icc(kind, rule.nodes[k], items.at(o.item));
        p *= o.response ? pr : 1.0L - pr;
      }
      joint[k] = p;
      total += p;
    }
    for (std::size_t k = 0; k < K; ++k) out.posterior.push_back(joint[k] / total);
    out.log_likelihood += std::log(total);
  }
  return out;
}

ItemParams random_items(ModelKind kind, std::size_t n, Rng& rng) {
  std::vector<double> b, a, c, l;
  for (std::size_t i = 0; i < n; ++i) {
    b.push_back(rng.normal());
    a.push_back(std::exp(0.3 * rng.normal()));
    c.push_back(0.3 * rng.uniform());
    l.push_back(0.7 + 0.3 * rng.uniform());
  }
  const ParameterSchema s = schema_of(kind);
  return ItemParams(kind, b, s.discrimination ? a : std::vector<double>{}, s.guessing ? c : std::vector<double>{},
                    s.feasibility ? l : std::vector<double>{});
}

}  // namespace

TEST_CASE("make_quadrature") {
  const QuadratureRule three = make_quadrature(3);
  REQUIRE(three.nodes.size() == 3);
  CHECK(three.nodes[1] == 0.0);
  CHECK_THAT(three.nodes[0], WithinAbs(-three.nodes[2], 1e-15));
  CHECK_THAT(three.nodes[2], WithinRel(std::sqrt(3.0), 1e-14));
  CHECK_THAT(three.weights[1], WithinRel(2.0 / 3.0, 1e-14));

  for (std::size_t n : {3u, 4u, 5u, 8u, 21u, 41u, 81u, 150u}) {
    const QuadratureRule rule = make_quadrature(n);
    REQUIRE(rule.nodes.size() == n);
    double sum = 0, m1 = 0, m2 = 0, m4 = 0;
    for (std::size_t k = 0; k < n; ++k) {
      CHECK(rule.weights[k] > 0.0);
      if (k > 0) CHECK(rule.nodes[k] > rule.nodes[k - 1]);
      sum += rule.weights[k];
      m1 += rule.weights[k] * rule.nodes[k];
      m2 += rule.weights[k] * rule.nodes[k] * rule.nodes[k];
      m4 += rule.weights[k] * std::pow(rule.nodes[k], 4);
    }
    CHECK_THAT(sum, WithinAbs(1.0, 1e-12));
    CHECK_THAT(m1, WithinAbs(0.0, 1e-12));
    if (n >= 5) {
      CHECK_THAT(m2, WithinAbs(1.0, 1e-10));
      CHECK_THAT(m4, WithinAbs(3.0, 1e-9));
    }
  }
  CHECK_THROWS_AS(make_quadrature(2), ContractError);
}

TEST_CASE("make_quadrature agrees with Golub-Welsch") {
  for (std::size_t n : {5u, 20u, 41u, 60u}) {
    const QuadratureRule rule = make_quadrature(n);
    const oracle::Rule gw = oracle::normal_rule(n);
    for (std::size_t k = 0; k < n; ++k) {
      CHECK_THAT(rule.nodes[k], WithinAbs(gw.nodes[k], 1e-10 * std::max(1.0, std::abs(gw.nodes[k]))));
      CHECK_THAT(rule.weights[k], WithinAbs(gw.weights[k], 1e-12 + 1e-8 * gw.weights[k]));
    }
  }
}

TEST_CASE("e_step") {
  const QuadratureRule rule = make_quadrature(21);
  SECTION("subject without observations keeps the prior") {
    const ResponsePatternDataset ds({"a", "b"}, {"x"}, {{1, 0, 1}});
    const EStepResult r = e_step(ds, ItemParams(ModelKind::OneParam, {0.0}), rule);
    for (std::size_t k = 0; k < 21; ++k) CHECK_THAT(r.posterior[k], WithinAbs(rule.weights[k], 1e-15));
  }
  SECTION("a hard item answered correctly moves mass up") {
    const ResponsePatternDataset ds({"a"}, {"x"}, {{0, 0, 1}});
    const EStepResult r = e_step(ds, ItemParams(ModelKind::OneParam, {40.0}), rule);
    double m = 0;
    for (std::size_t k = 0; k < 21; ++k) m += r.posterior[k] * rule.nodes[k];
    CHECK(m > 0.0);
    CHECK(r.posterior[20] > rule.weights[20]);
    CHECK(std::isfinite(r.marginal_log_likelihood));
  }
  SECTION("matches the naive extended-precision oracle") {
    Rng rng(5);
    for (ModelKind kind : kKinds) {
      const ResponsePatternDataset ds({"a", "b"}, {"x", "y"}, {{0, 0, 1}, {0, 1, 0}, {1, 0, 1}, {1, 1, 1}});
      const ItemParams items = random_items(kind, 2, rng);
      const EStepResult r = e_step(ds, items, rule);
      const NaiveEStep naive = naive_e_step(ds, items, rule, kind);
      for (std::size_t k = 0; k < r.posterior.size(); ++k)
        CHECK_THAT(r.posterior[k], WithinRel(static_cast<double>(naive.posterior[k]), 1e-8));
      CHECK_THAT(r.marginal_log_likelihood, WithinRel(static_cast<double>(naive.log_likelihood), 1e-8));
    }
  }
  SECTION("expected counts") {
    const SimulationResult sim = simulate({ModelKind::TwoParam, 300, 7, std::nullopt, 0.3, 2});
    const EStepResult r = e_step(sim.dataset, sim.items, rule);
    const auto exposure = sim.dataset.item_exposure();
    for (std::size_t i = 0; i < 7; ++i) {
      double total = 0, correct = 0, observed_correct = 0;
      for (std::size_t k = 0; k < 21; ++k) {
        total += r.counts.exposure_at(i, k);
        correct += r.counts.correct_at(i, k);
        CHECK(r.counts.correct_at(i, k) <= r.counts.exposure_at(i, k) + 1e-12);
      }
      for (const Observation& o : sim.dataset.observations())
        if (o.item == i) observed_correct += o.response;
      CHECK_THAT(total, WithinRel(static_cast<double>(exposure[i]), 1e-12));
      CHECK_THAT(correct, WithinRel(observed_correct, 1e-12));
    }
    for (std::size_t j = 0; j < 300; ++j) {
      double s = 0;
      for (std::size_t k = 0; k < 21; ++k) s += r.posterior[j * 21 + k];
      CHECK_THAT(s, WithinAbs(1.0, 1e-12));
    }
  }
  SECTION("extreme patterns stay finite") {
    std::vector<Observation> obs;
    std::vector<std::string> items;
    for (std::uint32_t i = 0; i < 400; ++i) {
      obs.push_back({0, i, 1});
      items.push_back("q" + std::to_string(i));
    }
    const ResponsePatternDataset ds({"s"}, items, obs);
    const EStepResult r = e_step(ds, ItemParams(ModelKind::OneParam, std::vector<double>(400, 5.0)), rule);
    CHECK(std::isfinite(r.marginal_log_likelihood));
    CHECK(r.posterior[20] > 0.99);
  }
}

TEST_CASE("m_step") {
  SECTION("balanced counts on symmetric nodes give b = 0") {
    const QuadratureRule rule = make_quadrature(21);
    ExpectedCounts counts{1, 21, std::vector<double>(21), std::vector<double>(21)};
    for (std::size_t k = 0; k < 21; ++k) {
      counts.exposure[k] = 100.0 * rule.weights[k];
      counts.correct[k] = 0.5 * counts.exposure[k];
    }
    const ItemParams updated = m_step(counts, rule.nodes, ItemParams(ModelKind::OneParam, {1.3}));
    CHECK_THAT(updated.difficulty()[0], WithinAbs(0.0, 1e-8));
  }
  SECTION("single node at zero solves sigma(-b) = p") {
    for (double p : {0.1, 0.35, 0.5, 0.8, 0.97}) {
      const ExpectedCounts counts{1, 1, {p * 40.0}, {40.0}};
      const std::vector<double> nodes{0.0};
      const ItemParams updated = m_step(counts, nodes, ItemParams(ModelKind::OneParam, {0.0}));
      CHECK_THAT(updated.difficulty()[0], WithinAbs(-std::log(p / (1 - p)), 1e-8));
    }
  }
  SECTION("never decreases the objective") {
    const QuadratureRule rule = make_quadrature(15);
    Rng rng(8);
    for (ModelKind kind : kKinds) {
      for (int rep = 0; rep < 40; ++rep) {
        const std::size_t items = 3;
        ExpectedCounts counts{items, 15, std::vector<double>(items * 15), std::vector<double>(items * 15)};
        for (std::size_t c = 0; c < counts.exposure.size(); ++c) {
          counts.exposure[c] = 50.0 * rng.uniform();
          counts.correct[c] = counts.exposure[c] * rng.uniform();
        }
        const ItemParams current = random_items(kind, items, rng);
        const ItemParams updated = m_step(counts, rule.nodes, current);
        for (std::size_t i = 0; i < items; ++i) {
          const double before = expected_complete_log_likelihood(counts, rule.nodes, i, kind, current.at(i));
          const double after = expected_complete_log_likelihood(counts, rule.nodes, i, kind, updated.at(i));
          CHECK(after >= before - 1e-10);
          const ItemPoint u = updated.at(i);
          CHECK(u.difficulty >= -6.0);
          CHECK(u.difficulty <= 6.0);
          if (kind == ModelKind::ThreeParam) CHECK(u.guessing <= 0.5);
          if (kind == ModelKind::FourParamFeasibility) CHECK(u.feasibility >= 0.01);
          if (kind != ModelKind::OneParam) {
            CHECK(u.discrimination >= 0.05);
            CHECK(u.discrimination <= 10.0);
          }
        }
      }
    }
  }
}

TEST_CASE("fit_mml EM trace is nondecreasing in marginal likelihood") {
  for (ModelKind kind : kKinds) {
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      const SimulationResult sim = simulate({kind, 200, 20, std::nullopt, 0.0, seed});
      MmlConfig config;
      config.max_iters = 60;
      const FitReport report = fit_mml(sim.dataset, kind, config);
      for (std::size_t t = 1; t < report.trace.size(); ++t)
        CHECK(report.trace[t].loss <= report.trace[t - 1].loss + 1e-8);
    }
  }
}

TEST_CASE("fit_mml small instance matches a brute-force marginal likelihood") {
  const ResponsePatternDataset ds({"a", "b"}, {"x", "y"}, {{0, 0, 1}, {0, 1, 0}, {1, 0, 1}, {1, 1, 0}});
  const FitReport report = fit_mml(ds, ModelKind::OneParam);
  const oracle::Rule gw = oracle::normal_rule(41);
  const QuadratureRule rule{gw.nodes, gw.weights};
  const NaiveEStep naive = naive_e_step(ds, report.items, rule, ModelKind::OneParam);
  CHECK_THAT(-report.final_loss(), WithinRel(static_cast<double>(naive.log_likelihood), 1e-8));
}

TEST_CASE("fit_mml recovers simulated 1PL difficulties") {
  const SimulationResult sim = simulate({ModelKind::OneParam, 2000, 50, std::nullopt, 0.0, 99});
  const FitReport report = fit_mml(sim.dataset, ModelKind::OneParam);
  CHECK(report.converged);
  CHECK(report.estimator == Estimator::Mml);
  CHECK(oracle::pearson(sim.items.difficulty(), report.items.difficulty()) >= 0.95);
  CHECK(oracle::pearson(sim.abilities.theta, report.abilities.theta) >= 0.85);

  MmlConfig fine;
  fine.quad_points = 81;
  const FitReport finer = fit_mml(sim.dataset, ModelKind::OneParam, fine);
  double sq = 0;
  for (std::size_t i = 0; i < 50; ++i) {
    const double d = finer.items.difficulty()[i] - report.items.difficulty()[i];
    sq += d * d;
  }
  CHECK(std::sqrt(sq / 50) < 1e-3);
}

TEST_CASE("fit_mml handles degenerate inputs") {
  SECTION("item without responses is rejected") {
    const ResponsePatternDataset ds({"a"}, {"x", "y"}, {{0, 0, 1}});
    CHECK_THROWS_AS(fit_mml(ds, ModelKind::OneParam), ContractError);
  }
  SECTION("all-identical items are flagged and clamped") {
    const SimulationResult sim = simulate({ModelKind::OneParam, 60, 4, std::nullopt, 0.0, 3});
    std::vector<Observation> obs(sim.dataset.observations().begin(), sim.dataset.observations().end());
    std::vector<std::string> items = sim.dataset.item_ids();
    items.push_back("easy");
    items.push_back("impossible");
    for (std::uint32_t j = 0; j < 60; ++j) {
      obs.push_back({j, 4, 1});
      obs.push_back({j, 5, 0});
    }
    const ResponsePatternDataset ds(sim.dataset.subject_ids(), items, obs);
    const FitReport report = fit_mml(ds, ModelKind::OneParam);
    CHECK(report.flagged_items == std::vector<std::size_t>{4, 5});
    CHECK(report.items.difficulty()[4] == -6.0);
    CHECK(report.items.difficulty()[5] == 6.0);
    for (double t : report.abilities.theta) CHECK(std::isfinite(t));
  }
  SECTION("iteration budget") {
    const SimulationResult sim = simulate({ModelKind::TwoParam, 100, 10, std::nullopt, 0.0, 3});
    MmlConfig config;
    config.max_iters = 3;
    config.tolerance = 0.0;
    std::size_t calls = 0;
    config.on_iteration = [&](const EpochRecord&) { ++calls; };
    const FitReport report = fit_mml(sim.dataset, ModelKind::TwoParam, config);
    CHECK(report.trace.size() == 3);
    CHECK(calls == 3);
    CHECK_FALSE(report.converged);
  }
}

TEST_CASE("map_ability") {
  const ItemParams one(ModelKind::OneParam, {0.0});
  CHECK(map_ability({}, one) == 0.0);

  // Stationarity 1 - sigma(theta) = theta.
  const std::vector<Observation> correct{{0, 0, 1}};
  CHECK_THAT(map_ability(correct, one), WithinAbs(0.4010581375415470, 1e-8));

  const double d = 1.3;
  const ItemParams pair(ModelKind::OneParam, {d, -d, d, -d});
  const std::vector<Observation> symmetric{{0, 0, 1}, {0, 1, 0}, {0, 2, 1}, {0, 3, 0}};
  CHECK_THAT(map_ability(symmetric, pair), WithinAbs(0.0, 1e-8));

  Rng rng(4);
  for (ModelKind kind : {ModelKind::OneParam, ModelKind::TwoParam}) {
    const ItemParams items = random_items(kind, 12, rng);
    std::vector<Observation> obs;
    for (std::uint32_t i = 0; i < 12; ++i) obs.push_back({0, i, static_cast<std::uint8_t>(rng.uniform() < 0.6)});
    const double reference = map_ability(obs, items, 0.0);
    for (double start = -6.0; start <= 6.0; start += 0.5)
      CHECK_THAT(map_ability(obs, items, start), WithinAbs(reference, 1e-8));
  }

  std::vector<Observation> all_right;
  for (std::uint32_t i = 0; i < 4; ++i) all_right.push_back({0, i, 1});
  const double top = map_ability(all_right, pair);
  CHECK(std::isfinite(top));
  CHECK(top > 0.0);
}
