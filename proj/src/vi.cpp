#include "irtforge/vi.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <string>

#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/trigamma.hpp>

#include "irtforge/error.hpp"

namespace irtforge {

namespace {

// Non-finite results propagate to the divergence check instead of throwing.
using QuietPolicy = boost::math::policies::policy<boost::math::policies::domain_error<boost::math::policies::ignore_error>,
                                                  boost::math::policies::pole_error<boost::math::policies::ignore_error>,
                                                  boost::math::policies::overflow_error<boost::math::policies::ignore_error>,
                                                  boost::math::policies::evaluation_error<boost::math::policies::ignore_error>>;

constexpr std::array<Latent, 5> kAllLatents = {Latent::Ability, Latent::Difficulty, Latent::Discrimination,
                                               Latent::Guessing, Latent::Feasibility};
constexpr double kLog2Pi = 1.8378770664093453;  // log(2 pi)

std::size_t index_of(Latent latent) { return static_cast<std::size_t>(latent); }

// E_q[log Normal(x; 0, sd)] for q = Normal(loc, scale), with its gradient
// accumulated into (loc, log_scale).
double normal_prior_term(double loc, double scale, double sd, double& d_loc, double& d_log_scale) {
  const double var = sd * sd;
  d_loc += -loc / var;
  d_log_scale += -scale * scale / var;
  return -0.5 * (kLog2Pi + std::log(var)) - (loc * loc + scale * scale) / (2.0 * var);
}

// Entropy of Normal(loc, exp(log_scale)).
double normal_entropy(double log_scale, double& d_log_scale) {
  d_log_scale += 1.0;
  return log_scale + 0.5 * (1.0 + kLog2Pi);
}

struct Scratch {
  std::array<std::vector<double>, 5> eps;
  std::array<std::vector<double>, 5> draw;
  std::array<std::vector<double>, 5> dz;
};

thread_local Scratch scratch;

}  // namespace

// ---------------------------------------------------------------------------
// Optimizer

void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state, const AdamConfig& config) {
  if (grads.size() != params.size() || state.first_moment.size() != params.size() ||
      state.second_moment.size() != params.size())
    throw ContractError("adam_step: parameter, gradient and state sizes differ");

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(config.beta1, t);
  const double correction2 = 1.0 - std::pow(config.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    const double g = grads[k];
    double& m = state.first_moment[k];
    double& v = state.second_moment[k];
    m = config.beta1 * m + (1.0 - config.beta1) * g;
    v = config.beta2 * v + (1.0 - config.beta2) * g * g;
    const double m_hat = m / correction1;
    const double v_hat = v / correction2;
    params[k] -= config.learning_rate * m_hat / (std::sqrt(v_hat) + config.epsilon);
  }
}

// ---------------------------------------------------------------------------
// Transforms

double constrain_discrimination(double raw) noexcept { return std::exp(raw); }
double unconstrain_discrimination(double a) noexcept { return std::log(a); }
double constrain_unit(double raw) noexcept { return logistic(raw); }
double unconstrain_unit(double p) noexcept { return logit(p); }

ItemPoint constrain(ModelKind kind, const ItemPoint& raw) noexcept {
  const ParameterSchema schema = schema_of(kind);
  ItemPoint out;
  out.difficulty = raw.difficulty;
  if (schema.discrimination) out.discrimination = constrain_discrimination(raw.discrimination);
  if (schema.guessing) out.guessing = constrain_unit(raw.guessing);
  if (schema.feasibility) out.feasibility = constrain_unit(raw.feasibility);
  return out;
}

ItemPoint unconstrain(ModelKind kind, const ItemPoint& model) noexcept {
  const ParameterSchema schema = schema_of(kind);
  ItemPoint out;
  out.difficulty = model.difficulty;
  out.discrimination = schema.discrimination ? unconstrain_discrimination(model.discrimination) : 0.0;
  out.guessing = schema.guessing ? unconstrain_unit(model.guessing) : 0.0;
  out.feasibility = schema.feasibility ? unconstrain_unit(model.feasibility) : 0.0;
  return out;
}

double reparam_sample_normal(double loc, double scale, double eps) noexcept { return loc + scale * eps; }

// ---------------------------------------------------------------------------
// VariationalPosterior

VariationalPosterior::VariationalPosterior(ModelKind kind, std::size_t subjects, std::size_t items, bool hierarchical,
                                           double initial_scale)
    : kind_(kind), subjects_(subjects), items_(items), hierarchical_(hierarchical) {
  if (!(initial_scale > 0.0)) throw ContractError("initial posterior scale must be positive");
  offsets_.fill(kAbsent);
  const ParameterSchema schema = schema_of(kind);
  std::size_t next = 0;
  auto add_block = [&](Latent latent, bool present, std::size_t n) {
    if (!present) return;
    offsets_[index_of(latent)] = next;
    next += 2 * n;
  };
  add_block(Latent::Ability, true, subjects);
  add_block(Latent::Difficulty, true, items);
  add_block(Latent::Discrimination, schema.discrimination, items);
  add_block(Latent::Guessing, schema.guessing, items);
  add_block(Latent::Feasibility, schema.feasibility, items);
  if (hierarchical_) {
    hyper_offset_ = next;
    next += 4;
  }

  params_.assign(next, 0.0);
  const double log_scale0 = std::log(initial_scale);
  for (Latent latent : kAllLatents) {
    if (!has(latent)) continue;
    std::ranges::fill(log_scale(latent), log_scale0);
  }
  if (hierarchical_) params_[mu_log_scale_offset()] = log_scale0;
}

bool VariationalPosterior::has(Latent latent) const noexcept { return offsets_[index_of(latent)] != kAbsent; }

std::size_t VariationalPosterior::block_size(Latent latent) const noexcept {
  if (!has(latent)) return 0;
  return latent == Latent::Ability ? subjects_ : items_;
}

std::size_t VariationalPosterior::loc_offset(Latent latent) const {
  if (!has(latent)) throw ContractError("latent block not present for this model kind");
  return offsets_[index_of(latent)];
}

std::size_t VariationalPosterior::log_scale_offset(Latent latent) const {
  return loc_offset(latent) + block_size(latent);
}

std::span<double> VariationalPosterior::loc(Latent latent) {
  return std::span<double>(params_).subspan(loc_offset(latent), block_size(latent));
}
std::span<const double> VariationalPosterior::loc(Latent latent) const {
  return std::span<const double>(params_).subspan(loc_offset(latent), block_size(latent));
}
std::span<double> VariationalPosterior::log_scale(Latent latent) {
  return std::span<double>(params_).subspan(log_scale_offset(latent), block_size(latent));
}
std::span<const double> VariationalPosterior::log_scale(Latent latent) const {
  return std::span<const double>(params_).subspan(log_scale_offset(latent), block_size(latent));
}

std::size_t VariationalPosterior::mu_loc_offset() const {
  if (!hierarchical_) throw ContractError("posterior has no hyper-latents (non-hierarchical)");
  return hyper_offset_;
}

ItemParams VariationalPosterior::point_items() const {
  auto transformed = [&](Latent latent, double (*f)(double) noexcept) {
    std::vector<double> out;
    if (!has(latent)) return out;
    auto locs = loc(latent);
    out.reserve(locs.size());
    for (double v : locs) out.push_back(f(v));
    return out;
  };
  auto locs = loc(Latent::Difficulty);
  return ItemParams(kind_, std::vector<double>(locs.begin(), locs.end()),
                    transformed(Latent::Discrimination, constrain_discrimination),
                    transformed(Latent::Guessing, constrain_unit), transformed(Latent::Feasibility, constrain_unit));
}

AbilityParams VariationalPosterior::point_abilities() const {
  auto locs = loc(Latent::Ability);
  return AbilityParams{std::vector<double>(locs.begin(), locs.end())};
}

PosteriorScales VariationalPosterior::scales() const {
  auto scales_of = [&](Latent latent) {
    std::vector<double> out;
    if (!has(latent)) return out;
    for (double ls : log_scale(latent)) out.push_back(std::exp(ls));
    return out;
  };
  return PosteriorScales{scales_of(Latent::Ability), scales_of(Latent::Difficulty),
                         scales_of(Latent::Discrimination), scales_of(Latent::Guessing),
                         scales_of(Latent::Feasibility)};
}

// ---------------------------------------------------------------------------
// ELBO

std::vector<std::uint32_t> all_observations(const ResponsePatternDataset& dataset) {
  std::vector<std::uint32_t> all(dataset.observation_count());
  std::iota(all.begin(), all.end(), 0u);
  return all;
}

ElboEstimate elbo_estimate(const ResponsePatternDataset& dataset, std::span<const std::uint32_t> batch,
                           const VariationalPosterior& posterior, const PriorSpec& priors, Rng& rng,
                           std::size_t mc_samples) {
  ElboEstimate out;
  elbo_estimate(dataset, batch, posterior, priors, rng, mc_samples, out);
  return out;
}

void elbo_estimate(const ResponsePatternDataset& dataset, std::span<const std::uint32_t> batch,
                   const VariationalPosterior& posterior, const PriorSpec& priors, Rng& rng, std::size_t mc_samples,
                   ElboEstimate& out) {
  if (batch.empty()) throw ContractError("ELBO batch must not be empty");
  if (mc_samples == 0) throw ContractError("mc_samples must be positive");
  if (posterior.subject_count() != dataset.subject_count() || posterior.item_count() != dataset.item_count())
    throw ContractError("posterior shape does not match the dataset");
  if (posterior.hierarchical() != priors.hierarchical)
    throw ContractError("posterior and prior disagree on hierarchical mode");

  const ModelKind kind = posterior.kind();
  const std::span<const double> params = posterior.parameters();
  out.gradient.assign(params.size(), 0.0);
  std::vector<double>& grad = out.gradient;

  // --- Likelihood term: reparameterized Monte Carlo over all latents.
  const auto observations = dataset.observations();
  const double weight = static_cast<double>(dataset.observation_count()) / static_cast<double>(batch.size()) /
                        static_cast<double>(mc_samples);
  const bool has_a = posterior.has(Latent::Discrimination);
  const bool has_c = posterior.has(Latent::Guessing);
  const bool has_l = posterior.has(Latent::Feasibility);

  double log_lik = 0.0;
  for (std::size_t s = 0; s < mc_samples; ++s) {
    for (Latent latent : kAllLatents) {
      const std::size_t b = index_of(latent);
      if (!posterior.has(latent)) continue;
      const auto locs = posterior.loc(latent);
      const auto log_scales = posterior.log_scale(latent);
      const std::size_t n = locs.size();
      scratch.eps[b].resize(n);
      scratch.draw[b].resize(n);
      scratch.dz[b].assign(n, 0.0);
      for (std::size_t k = 0; k < n; ++k) {
        const double eps = rng.normal();
        scratch.eps[b][k] = eps;
        scratch.draw[b][k] = reparam_sample_normal(locs[k], std::exp(log_scales[k]), eps);
      }
    }

    const auto& theta = scratch.draw[index_of(Latent::Ability)];
    const auto& diff = scratch.draw[index_of(Latent::Difficulty)];
    auto& d_theta = scratch.dz[index_of(Latent::Ability)];
    auto& d_diff = scratch.dz[index_of(Latent::Difficulty)];

    double sample_ll = 0.0;
    for (std::uint32_t idx : batch) {
      const Observation& obs = observations[idx];
      ItemPoint raw;
      raw.difficulty = diff[obs.item];
      if (has_a) raw.discrimination = scratch.draw[index_of(Latent::Discrimination)][obs.item];
      if (has_c) raw.guessing = scratch.draw[index_of(Latent::Guessing)][obs.item];
      if (has_l) raw.feasibility = scratch.draw[index_of(Latent::Feasibility)][obs.item];
      const ItemPoint point = constrain(kind, raw);

      const CellTerms terms = cell_terms(kind, obs.response, theta[obs.subject], point);
      sample_ll += terms.log_prob;
      d_theta[obs.subject] += terms.d_theta;
      d_diff[obs.item] += terms.d_difficulty;
      if (has_a) scratch.dz[index_of(Latent::Discrimination)][obs.item] += terms.d_discrimination * point.discrimination;
      if (has_c)
        scratch.dz[index_of(Latent::Guessing)][obs.item] +=
            terms.d_guessing * logistic(raw.guessing) * logistic(-raw.guessing);
      if (has_l)
        scratch.dz[index_of(Latent::Feasibility)][obs.item] +=
            terms.d_feasibility * logistic(raw.feasibility) * logistic(-raw.feasibility);
    }
    log_lik += weight * sample_ll;

    for (Latent latent : kAllLatents) {
      if (!posterior.has(latent)) continue;
      const std::size_t b = index_of(latent);
      const std::size_t loc_off = posterior.loc_offset(latent);
      const std::size_t ls_off = posterior.log_scale_offset(latent);
      const auto& dz = scratch.dz[b];
      const auto& eps = scratch.eps[b];
      for (std::size_t k = 0; k < dz.size(); ++k) {
        if (dz[k] == 0.0) continue;
        const double g = weight * dz[k];
        grad[loc_off + k] += g;
        grad[ls_off + k] += g * eps[k] * std::exp(params[ls_off + k]);
      }
    }
  }

  // --- Prior and entropy terms in closed form.
  double log_prior = 0.0;
  double entropy = 0.0;

  auto fixed_normal_block = [&](Latent latent, double sd) {
    if (!posterior.has(latent)) return;
    const std::size_t loc_off = posterior.loc_offset(latent);
    const std::size_t ls_off = posterior.log_scale_offset(latent);
    for (std::size_t k = 0; k < posterior.block_size(latent); ++k) {
      const double scale = std::exp(params[ls_off + k]);
      log_prior += normal_prior_term(params[loc_off + k], scale, sd, grad[loc_off + k], grad[ls_off + k]);
      entropy += normal_entropy(params[ls_off + k], grad[ls_off + k]);
    }
  };
  fixed_normal_block(Latent::Difficulty, priors.difficulty_sd);
  fixed_normal_block(Latent::Discrimination, priors.log_discrimination_sd);
  fixed_normal_block(Latent::Guessing, priors.logit_guessing_sd);
  fixed_normal_block(Latent::Feasibility, priors.logit_feasibility_sd);

  if (!priors.hierarchical) {
    fixed_normal_block(Latent::Ability, priors.ability_sd);
  } else {
    const std::size_t mu_loc = posterior.mu_loc_offset();
    const std::size_t mu_ls = posterior.mu_log_scale_offset();
    const std::size_t tau_la = posterior.tau_log_concentration_offset();
    const std::size_t tau_lb = posterior.tau_log_rate_offset();
    const double mu_m = params[mu_loc];
    const double mu_s = std::exp(params[mu_ls]);
    const double alpha = std::exp(params[tau_la]);
    const double beta = std::exp(params[tau_lb]);
    const double e_tau = alpha / beta;
    const double e_log_tau = boost::math::digamma(alpha, QuietPolicy()) - std::log(beta);
    const double trigamma_alpha = boost::math::trigamma(alpha, QuietPolicy());

    // E_q[log Normal(theta_j; mu, tau^{-1/2})]
    //   = -0.5 log 2pi + 0.5 E[log tau] - 0.5 E[tau] ((m_j - m_mu)^2 + s_j^2 + s_mu^2)
    const std::size_t n_subjects = posterior.subject_count();
    const std::size_t loc_off = posterior.loc_offset(Latent::Ability);
    const std::size_t ls_off = posterior.log_scale_offset(Latent::Ability);
    double spread = 0.0;
    double sum_centered = 0.0;
    for (std::size_t j = 0; j < n_subjects; ++j) {
      const double centered = params[loc_off + j] - mu_m;
      const double s = std::exp(params[ls_off + j]);
      spread += centered * centered + s * s + mu_s * mu_s;
      sum_centered += centered;
      grad[loc_off + j] += -e_tau * centered;
      grad[ls_off + j] += -e_tau * s * s;
      entropy += normal_entropy(params[ls_off + j], grad[ls_off + j]);
    }
    const double n = static_cast<double>(n_subjects);
    log_prior += n * (-0.5 * kLog2Pi + 0.5 * e_log_tau) - 0.5 * e_tau * spread;
    grad[mu_loc] += e_tau * sum_centered;
    grad[mu_ls] += -e_tau * n * mu_s * mu_s;

    // mu ~ Normal(0, ability_mean_sd)
    log_prior += normal_prior_term(mu_m, mu_s, priors.ability_mean_sd, grad[mu_loc], grad[mu_ls]);
    entropy += normal_entropy(params[mu_ls], grad[mu_ls]);

    // tau ~ Gamma(shape0, rate0)
    const double shape0 = priors.precision_shape;
    const double rate0 = priors.precision_rate;
    log_prior += shape0 * std::log(rate0) - std::lgamma(shape0) + (shape0 - 1.0) * e_log_tau - rate0 * e_tau;
    entropy += alpha - std::log(beta) + std::lgamma(alpha) + (1.0 - alpha) * boost::math::digamma(alpha, QuietPolicy());

    const double d_e_tau = -0.5 * spread - rate0;
    const double d_e_log_tau = 0.5 * n + (shape0 - 1.0);
    const double d_alpha = d_e_tau / beta + d_e_log_tau * trigamma_alpha + 1.0 + (1.0 - alpha) * trigamma_alpha;
    const double d_beta = -d_e_tau * alpha / (beta * beta) - d_e_log_tau / beta - 1.0 / beta;
    grad[tau_la] += alpha * d_alpha;
    grad[tau_lb] += beta * d_beta;
  }

  out.expected_log_likelihood = log_lik;
  out.expected_log_prior = log_prior;
  out.entropy = entropy;
  out.value = log_lik + log_prior + entropy;
}

// ---------------------------------------------------------------------------
// Training loop

SviResult fit_svi(const ResponsePatternDataset& dataset, const TrainConfig& config) {
  if (dataset.observation_count() == 0) throw ContractError("cannot fit a dataset without observations");
  if (config.epochs == 0 || config.batch_size == 0 || config.mc_samples == 0 || config.convergence_window == 0)
    throw ContractError("epochs, batch size, mc samples and convergence window must be positive");
  if (!(config.optimizer.learning_rate > 0.0)) throw ContractError("learning rate must be positive");

  const auto start = std::chrono::steady_clock::now();
  auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(); };

  VariationalPosterior posterior(config.kind, dataset.subject_count(), dataset.item_count(),
                                 config.priors.hierarchical, config.initial_scale);
  Rng root(config.seed);
  Rng batch_rng = root.split();
  Rng sample_rng = root.split();

  AdamState adam(posterior.parameters().size());
  ElboEstimate estimate;
  std::vector<double> loss_grad(posterior.parameters().size());

  FitReport report;
  report.kind = config.kind;
  report.estimator = Estimator::Svi;
  std::vector<double> losses;
  std::vector<double> best_params(posterior.parameters().begin(), posterior.parameters().end());
  double best_smoothed = std::numeric_limits<double>::infinity();
  const std::size_t window = config.convergence_window;

  auto window_mean = [&](std::size_t end, std::size_t width) {
    const std::size_t begin = end > width ? end - width : 0;
    return std::accumulate(losses.begin() + static_cast<std::ptrdiff_t>(begin),
                           losses.begin() + static_cast<std::ptrdiff_t>(end), 0.0) /
           static_cast<double>(end - begin);
  };

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const BatchPlan plan = split_batches(dataset, config.batch_size, batch_rng);
    double epoch_loss = 0.0;
    for (std::size_t b = 0; b < plan.batch_count(); ++b) {
      elbo_estimate(dataset, plan.batch(b), posterior, config.priors, sample_rng, config.mc_samples, estimate);
      if (!std::isfinite(estimate.value))
        throw TrainingError("non-finite ELBO at epoch " + std::to_string(epoch) + " (learning rate too high?)",
                            epoch, losses);
      for (std::size_t k = 0; k < loss_grad.size(); ++k) loss_grad[k] = -estimate.gradient[k];
      adam_step(posterior.parameters(), loss_grad, adam, config.optimizer);
      epoch_loss -= estimate.value;
    }
    epoch_loss /= static_cast<double>(plan.batch_count());
    const auto& p = posterior.parameters();
    if (!std::all_of(p.begin(), p.end(), [](double v) { return std::isfinite(v); }))
      throw TrainingError("variational parameters diverged at epoch " + std::to_string(epoch), epoch, losses);

    losses.push_back(epoch_loss);
    const EpochRecord record{epoch, epoch_loss, elapsed()};
    report.trace.push_back(record);
    if (config.on_epoch) config.on_epoch(record);

    const double smoothed = window_mean(losses.size(), window);
    if (smoothed <= best_smoothed) {
      best_smoothed = smoothed;
      report.best_epoch = epoch;
      std::copy(p.begin(), p.end(), best_params.begin());
    }

    if (config.convergence_tolerance > 0.0 && losses.size() >= 2 * window) {
      const double current = window_mean(losses.size(), window);
      const double previous = window_mean(losses.size() - window, window);
      const double improvement = (previous - current) / std::max(std::abs(current), 1e-300);
      if (improvement < config.convergence_tolerance) {
        report.converged = true;
        break;
      }
    }
  }

  std::copy(best_params.begin(), best_params.end(), posterior.parameters().begin());
  report.items = posterior.point_items();
  report.abilities = posterior.point_abilities();
  report.scales = posterior.scales();
  report.seconds = elapsed();
  return {std::move(posterior), std::move(report)};
}

}  // namespace irtforge
