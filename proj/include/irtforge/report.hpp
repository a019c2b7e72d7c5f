#pragma once

#include <cstddef>
#include <optional>
#include <string_view>
#include <vector>

#include "irtforge/models.hpp"

namespace irtforge {

enum class Estimator { Svi, Mml };

std::string_view to_string(Estimator estimator);
/// "svi" or "mml"; throws FormatError otherwise.
Estimator parse_estimator(std::string_view name);

/// Posterior standard deviations from the variational guide, in the
/// unconstrained space each latent is optimized in: theta and b directly,
/// log a, logit c and logit lambda. Arrays for unused parameters are empty.
struct PosteriorScales {
  std::vector<double> ability;
  std::vector<double> difficulty;
  std::vector<double> discrimination;
  std::vector<double> guessing;
  std::vector<double> feasibility;

  friend bool operator==(const PosteriorScales&, const PosteriorScales&) = default;
};

/// One row of the training log. For SVI the loss is the negative ELBO of an
/// epoch; for MML it is the negative marginal log-likelihood of an EM
/// iteration. `seconds` is cumulative wall-clock time.
struct EpochRecord {
  std::size_t epoch = 0;
  double loss = 0.0;
  double seconds = 0.0;
};

struct FitReport {
  ModelKind kind = ModelKind::OneParam;
  Estimator estimator = Estimator::Svi;
  ItemParams items;
  AbilityParams abilities;
  std::optional<PosteriorScales> scales;
  std::vector<EpochRecord> trace;
  double seconds = 0.0;
  bool converged = false;
  std::size_t best_epoch = 0;
  /// Items whose responses were all identical (MML clamps their difficulty).
  std::vector<std::size_t> flagged_items;

  double final_loss() const;
  std::vector<double> losses() const;
};

}  // namespace irtforge
