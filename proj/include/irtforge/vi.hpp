#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "irtforge/dataset.hpp"
#include "irtforge/models.hpp"
#include "irtforge/report.hpp"
#include "irtforge/rng.hpp"

namespace irtforge {

// ---------------------------------------------------------------------------
// Optimizer

struct AdamConfig {
  double learning_rate = 0.1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  std::vector<double> first_moment;
  std::vector<double> second_moment;
  std::size_t step = 0;

  explicit AdamState(std::size_t parameter_count = 0)
      : first_moment(parameter_count, 0.0), second_moment(parameter_count, 0.0) {}
};

/// One bias-corrected Adam update. Descends: `grads` must be the gradient of
/// the loss (the negative ELBO during training). Increments `state.step`.
void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state, const AdamConfig& config);

// ---------------------------------------------------------------------------
// Priors and configuration

/// Generative priors of the variational model.
///
/// Hierarchical mode: theta_j ~ Normal(mu, 1/sqrt(tau)), mu ~ Normal(0, ability_mean_sd),
/// tau ~ Gamma(precision_shape, precision_rate). Otherwise theta_j ~ Normal(0, ability_sd).
/// Items: b ~ Normal(0, difficulty_sd), log a ~ Normal(0, log_discrimination_sd),
/// logit c ~ Normal(0, logit_guessing_sd), logit lambda ~ Normal(0, logit_feasibility_sd).
struct PriorSpec {
  bool hierarchical = true;
  double ability_sd = 1.0;
  double ability_mean_sd = 1.0;
  double precision_shape = 1.0;
  double precision_rate = 1.0;
  double difficulty_sd = 1.0;
  double log_discrimination_sd = 0.25;
  double logit_guessing_sd = 1.0;
  double logit_feasibility_sd = 1.0;
};

struct TrainConfig {
  ModelKind kind = ModelKind::OneParam;
  std::size_t epochs = 500;
  std::size_t batch_size = 4096;
  AdamConfig optimizer;
  std::size_t mc_samples = 1;
  std::uint64_t seed = 0;
  PriorSpec priors;
  /// Stop once the 10-epoch mean loss improves by less than this fraction
  /// on the preceding 10-epoch mean. Zero or negative disables early stopping.
  double convergence_tolerance = 1e-4;
  std::size_t convergence_window = 10;
  /// Initial posterior standard deviation of every Normal latent.
  double initial_scale = 0.1;
  /// Called after every epoch; may be empty.
  std::function<void(const EpochRecord&)> on_epoch;
};

// ---------------------------------------------------------------------------
// Constraint transforms between the optimizer's unconstrained space and
// model space: a = exp(raw), c = sigmoid(raw), lambda = sigmoid(raw).

double constrain_discrimination(double raw) noexcept;
double unconstrain_discrimination(double a) noexcept;
double constrain_unit(double raw) noexcept;
double unconstrain_unit(double p) noexcept;

/// Maps the raw item latents of `kind` to model space; difficulty passes through.
ItemPoint constrain(ModelKind kind, const ItemPoint& raw) noexcept;
ItemPoint unconstrain(ModelKind kind, const ItemPoint& model) noexcept;

/// loc + scale * eps; d/d loc = 1, d/d scale = eps.
double reparam_sample_normal(double loc, double scale, double eps) noexcept;

// ---------------------------------------------------------------------------
// Mean-field guide

enum class Latent { Ability, Difficulty, Discrimination, Guessing, Feasibility };

/// Variational parameters stored in one flat vector.
///
/// Every Normal latent block contributes `loc[n]` followed by `log_scale[n]`
/// (ability has n = J, item blocks n = I; item blocks for parameters the
/// kind does not use are absent). In hierarchical mode four trailing values
/// hold mu's (loc, log_scale) and tau's (log concentration, log rate).
class VariationalPosterior {
 public:
  VariationalPosterior(ModelKind kind, std::size_t subjects, std::size_t items, bool hierarchical,
                       double initial_scale = 0.1);

  ModelKind kind() const noexcept { return kind_; }
  std::size_t subject_count() const noexcept { return subjects_; }
  std::size_t item_count() const noexcept { return items_; }
  bool hierarchical() const noexcept { return hierarchical_; }

  bool has(Latent latent) const noexcept;
  std::size_t block_size(Latent latent) const noexcept;
  std::size_t loc_offset(Latent latent) const;
  std::size_t log_scale_offset(Latent latent) const;

  std::span<double> loc(Latent latent);
  std::span<const double> loc(Latent latent) const;
  std::span<double> log_scale(Latent latent);
  std::span<const double> log_scale(Latent latent) const;

  // Hyper-latents; throw ContractError when not hierarchical.
  std::size_t mu_loc_offset() const;
  std::size_t mu_log_scale_offset() const { return mu_loc_offset() + 1; }
  std::size_t tau_log_concentration_offset() const { return mu_loc_offset() + 2; }
  std::size_t tau_log_rate_offset() const { return mu_loc_offset() + 3; }

  std::span<double> parameters() noexcept { return params_; }
  std::span<const double> parameters() const noexcept { return params_; }

  /// Back-transformed posterior locations.
  ItemParams point_items() const;
  AbilityParams point_abilities() const;
  PosteriorScales scales() const;

  friend bool operator==(const VariationalPosterior&, const VariationalPosterior&) = default;

 private:
  static constexpr std::size_t kAbsent = static_cast<std::size_t>(-1);

  ModelKind kind_;
  std::size_t subjects_;
  std::size_t items_;
  bool hierarchical_;
  std::array<std::size_t, 5> offsets_;
  std::size_t hyper_offset_ = kAbsent;
  std::vector<double> params_;
};

struct ElboEstimate {
  double value = 0.0;
  /// Monte Carlo estimate of E_q[log p(Z_batch | latents)] * N / |batch|.
  double expected_log_likelihood = 0.0;
  /// E_q[log p(latents)], closed form.
  double expected_log_prior = 0.0;
  /// Entropy of q, closed form.
  double entropy = 0.0;
  /// d value / d parameters, laid out like VariationalPosterior::parameters().
  std::vector<double> gradient;
};

/// Unbiased reparameterized ELBO estimate over a batch of observation
/// indices, averaged over `mc_samples` joint draws of the item and ability
/// latents. Prior and entropy terms, including those of mu and tau, are
/// exact expectations.
ElboEstimate elbo_estimate(const ResponsePatternDataset& dataset, std::span<const std::uint32_t> batch,
                           const VariationalPosterior& posterior, const PriorSpec& priors, Rng& rng,
                           std::size_t mc_samples = 1);

/// Same, reusing `out` (and its gradient buffer) to avoid reallocation.
void elbo_estimate(const ResponsePatternDataset& dataset, std::span<const std::uint32_t> batch,
                   const VariationalPosterior& posterior, const PriorSpec& priors, Rng& rng, std::size_t mc_samples,
                   ElboEstimate& out);

/// Indices 0 .. N-1 of every observation.
std::vector<std::uint32_t> all_observations(const ResponsePatternDataset& dataset);

struct SviResult {
  VariationalPosterior posterior;
  FitReport report;
};

/// Epochs of shuffled mini-batch SVI with Adam. Returns the snapshot with the
/// best smoothed (10-epoch mean) loss, later epochs winning ties. Throws
/// TrainingError on the first non-finite ELBO.
SviResult fit_svi(const ResponsePatternDataset& dataset, const TrainConfig& config);

}  // namespace irtforge
