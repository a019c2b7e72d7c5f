#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "irtforge/dataset.hpp"
#include "irtforge/models.hpp"
#include "irtforge/report.hpp"

namespace irtforge {

/// Discretization of the standard Normal ability prior.
struct QuadratureRule {
  std::vector<double> nodes;    // strictly increasing
  std::vector<double> weights;  // positive, sum to 1
};

/// Gauss-Hermite rule with `points` nodes (>= 3), rescaled to integrate
/// against Normal(0, 1): node x*sqrt(2), weight w/sqrt(pi), then normalized.
QuadratureRule make_quadrature(std::size_t points);

/// Expected response counts per (item, node), stored item-major.
struct ExpectedCounts {
  std::size_t items = 0;
  std::size_t nodes = 0;
  std::vector<double> correct;   // sum_j r_jk * y_ji
  std::vector<double> exposure;  // sum_j r_jk over subjects who answered i

  double correct_at(std::size_t item, std::size_t node) const { return correct[item * nodes + node]; }
  double exposure_at(std::size_t item, std::size_t node) const { return exposure[item * nodes + node]; }
};

struct EStepResult {
  /// Posterior node weights r_jk, subject-major (J x K); each row sums to 1.
  std::vector<double> posterior;
  ExpectedCounts counts;
  double marginal_log_likelihood = 0.0;
};

/// Posterior over quadrature nodes for every subject, computed in log space.
EStepResult e_step(const ResponsePatternDataset& dataset, const ItemParams& items, const QuadratureRule& rule);

/// sum_k [n1_ik log icc(x_k) + (n_ik - n1_ik) log(1 - icc(x_k))] for one item.
double expected_complete_log_likelihood(const ExpectedCounts& counts, std::span<const double> nodes,
                                        std::size_t item, ModelKind kind, const ItemPoint& point);

/// Box constraints applied by the M-step.
struct ItemBounds {
  double difficulty_min = -6.0;
  double difficulty_max = 6.0;
  double discrimination_min = 0.05;
  double discrimination_max = 10.0;
  double guessing_min = 0.0;
  double guessing_max = 0.5;
  double feasibility_min = 0.01;
  double feasibility_max = 1.0;
};

/// Maximizes each item's expected complete-data log-likelihood by projected
/// Newton with a monotone backtracking line search. Never decreases the
/// objective. Throws TrainingError naming the item after 50 steps without
/// convergence.
ItemParams m_step(const ExpectedCounts& counts, std::span<const double> nodes, const ItemParams& current,
                  const ItemBounds& bounds = {});

struct MmlConfig {
  std::size_t quad_points = 41;
  std::size_t max_iters = 200;
  /// Relative change of the marginal log-likelihood that ends EM. Zero or
  /// negative runs the full iteration budget.
  double tolerance = 1e-6;
  ItemBounds bounds;
  std::function<void(const EpochRecord&)> on_iteration;
};

/// Bock-Aitkin EM for the item parameters followed by MAP abilities. The
/// trace stores the negative marginal log-likelihood of each E-step, and the
/// returned items are those that E-step was evaluated at.
FitReport fit_mml(const ResponsePatternDataset& dataset, ModelKind kind, const MmlConfig& config = {});

/// MAP estimate of one subject's ability under a Normal(0, 1) prior, by
/// safeguarded Newton from `start`.
double map_ability(std::span<const Observation> responses, const ItemParams& items, double start = 0.0);

/// map_ability for every subject.
AbilityParams map_abilities(const ResponsePatternDataset& dataset, const ItemParams& items);

}  // namespace irtforge
