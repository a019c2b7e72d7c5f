#include "irtforge/mml.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "irtforge/error.hpp"
#include "irtforge/parallel.hpp"

namespace irtforge {

namespace {

constexpr std::size_t kSubjectsPerChunk = 256;
constexpr std::size_t kMaxChunks = 64;
constexpr std::size_t kMaxNewtonSteps = 50;

std::size_t chunk_count(std::size_t n) {
  return std::clamp<std::size_t>((n + kSubjectsPerChunk - 1) / kSubjectsPerChunk, 1, kMaxChunks);
}

std::pair<std::size_t, std::size_t> chunk_range(std::size_t chunk, std::size_t chunks, std::size_t n) {
  return {n * chunk / chunks, n * (chunk + 1) / chunks};
}

// ---------------------------------------------------------------------------
// Small dense linear algebra for the per-item Newton systems (dimension <= 3).

using Vec = std::array<double, 3>;
using Mat = std::array<std::array<double, 3>, 3>;

// Solves A x = rhs for symmetric positive definite A of size n by Cholesky.
// Returns false when A is not numerically positive definite.
bool cholesky_solve(Mat a, const Vec& rhs, std::size_t n, Vec& x) {
  for (std::size_t j = 0; j < n; ++j) {
    double diag = a[j][j];
    for (std::size_t k = 0; k < j; ++k) diag -= a[j][k] * a[j][k];
    if (!(diag > 0.0)) return false;
    a[j][j] = std::sqrt(diag);
    for (std::size_t i = j + 1; i < n; ++i) {
      double v = a[i][j];
      for (std::size_t k = 0; k < j; ++k) v -= a[i][k] * a[j][k];
      a[i][j] = v / a[j][j];
    }
  }
  Vec y{};
  for (std::size_t i = 0; i < n; ++i) {
    double v = rhs[i];
    for (std::size_t k = 0; k < i; ++k) v -= a[i][k] * y[k];
    y[i] = v / a[i][i];
  }
  for (std::size_t i = n; i-- > 0;) {
    double v = y[i];
    for (std::size_t k = i + 1; k < n; ++k) v -= a[k][i] * x[k];
    x[i] = v / a[i][i];
  }
  return true;
}

// One item's M-step objective over its packed parameter vector
// (b), (b, a), (b, a, c) or (b, a, lambda).
class ItemObjective {
 public:
  ItemObjective(const ExpectedCounts& counts, std::span<const double> nodes, std::size_t item, ModelKind kind,
                const ItemBounds& bounds)
      : counts_(counts), nodes_(nodes), item_(item), kind_(kind) {
    const ParameterSchema schema = schema_of(kind);
    dim_ = 1 + (schema.discrimination ? 1 : 0) + (schema.guessing || schema.feasibility ? 1 : 0);
    lower_ = {bounds.difficulty_min, bounds.discrimination_min,
              schema.guessing ? bounds.guessing_min : bounds.feasibility_min};
    upper_ = {bounds.difficulty_max, bounds.discrimination_max,
              schema.guessing ? bounds.guessing_max : bounds.feasibility_max};
  }

  std::size_t dim() const { return dim_; }
  double lower(std::size_t j) const { return lower_[j]; }
  double upper(std::size_t j) const { return upper_[j]; }

  Vec pack(const ItemPoint& p) const {
    Vec x{p.difficulty, p.discrimination, kind_ == ModelKind::ThreeParam ? p.guessing : p.feasibility};
    return x;
  }

  ItemPoint unpack(const Vec& x) const {
    ItemPoint p;
    p.difficulty = x[0];
    if (dim_ >= 2) p.discrimination = x[1];
    if (kind_ == ModelKind::ThreeParam) p.guessing = x[2];
    if (kind_ == ModelKind::FourParamFeasibility) p.feasibility = x[2];
    return p;
  }

  Vec project(Vec x) const {
    for (std::size_t j = 0; j < dim_; ++j) x[j] = std::clamp(x[j], lower_[j], upper_[j]);
    return x;
  }

  double value(const Vec& x) const { return expected_complete_log_likelihood(counts_, nodes_, item_, kind_, unpack(x)); }

  Vec gradient(const Vec& x) const {
    const ItemPoint p = unpack(x);
    Vec g{};
    for (std::size_t k = 0; k < nodes_.size(); ++k) {
      const double n1 = counts_.correct_at(item_, k);
      const double n0 = counts_.exposure_at(item_, k) - n1;
      const CellTerms t1 = cell_terms(kind_, 1, nodes_[k], p);
      const CellTerms t0 = cell_terms(kind_, 0, nodes_[k], p);
      g[0] += n1 * t1.d_difficulty + n0 * t0.d_difficulty;
      g[1] += n1 * t1.d_discrimination + n0 * t0.d_discrimination;
      g[2] += kind_ == ModelKind::ThreeParam ? n1 * t1.d_guessing + n0 * t0.d_guessing
                                             : n1 * t1.d_feasibility + n0 * t0.d_feasibility;
    }
    for (std::size_t j = dim_; j < 3; ++j) g[j] = 0.0;
    return g;
  }

  Mat hessian(const Vec& x) const {
    Mat h{};
    if (kind_ == ModelKind::OneParam || kind_ == ModelKind::TwoParam) {
      const double b = x[0];
      const double a = dim_ >= 2 ? x[1] : 1.0;
      for (std::size_t k = 0; k < nodes_.size(); ++k) {
        const double n1 = counts_.correct_at(item_, k);
        const double n = counts_.exposure_at(item_, k);
        const double centered = nodes_[k] - b;
        const double z = a * centered;
        const double s = logistic(z);
        const double w = n * s * logistic(-z);
        const double residual = n1 - n * s;
        h[0][0] -= w * a * a;
        if (dim_ >= 2) {
          h[1][1] -= w * centered * centered;
          h[0][1] += w * a * centered - residual;
        }
      }
      h[1][0] = h[0][1];
      return h;
    }
    // 3PL / 4PL: central differences of the analytic gradient.
    for (std::size_t j = 0; j < dim_; ++j) {
      const double step = 1e-5 * std::max(1.0, std::abs(x[j]));
      Vec plus = x, minus = x;
      plus[j] += step;
      minus[j] -= step;
      const Vec gp = gradient(plus);
      const Vec gm = gradient(minus);
      for (std::size_t i = 0; i < dim_; ++i) h[i][j] = (gp[i] - gm[i]) / (2.0 * step);
    }
    for (std::size_t i = 0; i < dim_; ++i)
      for (std::size_t j = i + 1; j < dim_; ++j) h[i][j] = h[j][i] = 0.5 * (h[i][j] + h[j][i]);
    return h;
  }

  double total_exposure() const {
    double total = 0.0;
    for (std::size_t k = 0; k < nodes_.size(); ++k) total += counts_.exposure_at(item_, k);
    return total;
  }

 private:
  const ExpectedCounts& counts_;
  std::span<const double> nodes_;
  std::size_t item_;
  ModelKind kind_;
  std::size_t dim_ = 1;
  Vec lower_{};
  Vec upper_{};
};

// Projected Newton ascent with a monotone backtracking line search.
ItemPoint maximize_item(const ItemObjective& objective, const ItemPoint& start, std::size_t item) {
  const std::size_t dim = objective.dim();
  Vec x = objective.project(objective.pack(start));
  double fx = objective.value(x);
  const double gradient_tol = 1e-9 * std::max(1.0, objective.total_exposure());

  for (std::size_t iter = 0; iter < kMaxNewtonSteps; ++iter) {
    const Vec g = objective.gradient(x);

    // Coordinates pinned at a bound with the gradient pointing outward stay fixed.
    std::array<std::size_t, 3> free_idx{};
    std::size_t n_free = 0;
    double projected_norm = 0.0;
    for (std::size_t j = 0; j < dim; ++j) {
      const bool pinned_low = x[j] <= objective.lower(j) && g[j] < 0.0;
      const bool pinned_high = x[j] >= objective.upper(j) && g[j] > 0.0;
      if (pinned_low || pinned_high) continue;
      free_idx[n_free++] = j;
      projected_norm = std::max(projected_norm, std::abs(g[j]));
    }
    if (projected_norm <= gradient_tol) return objective.unpack(x);

    const Mat h = objective.hessian(x);
    Mat neg_h{};
    Vec rhs{};
    double trace = 0.0;
    for (std::size_t r = 0; r < n_free; ++r) {
      rhs[r] = g[free_idx[r]];
      for (std::size_t c = 0; c < n_free; ++c) neg_h[r][c] = -h[free_idx[r]][free_idx[c]];
      trace += std::abs(neg_h[r][r]);
    }
    // Levenberg damping until the system is positive definite.
    Vec step{};
    double damping = 0.0;
    for (int attempt = 0;; ++attempt) {
      Mat damped = neg_h;
      for (std::size_t r = 0; r < n_free; ++r) damped[r][r] += damping;
      if (cholesky_solve(damped, rhs, n_free, step)) break;
      damping = damping == 0.0 ? 1e-8 * std::max(1.0, trace) : damping * 10.0;
      if (attempt > 60) throw TrainingError("M-step: singular Newton system for item " + std::to_string(item), iter);
    }

    Vec direction{};
    for (std::size_t r = 0; r < n_free; ++r) direction[free_idx[r]] = step[r];

    bool accepted = false;
    Vec next = x;
    double f_next = fx;
    for (double t = 1.0; t > 1e-12; t *= 0.5) {
      Vec trial = x;
      for (std::size_t j = 0; j < dim; ++j) trial[j] += t * direction[j];
      trial = objective.project(trial);
      const double f_trial = objective.value(trial);
      if (f_trial >= fx) {
        next = trial;
        f_next = f_trial;
        accepted = true;
        break;
      }
    }
    if (!accepted) return objective.unpack(x);  // no ascent left at working precision

    double moved = 0.0;
    for (std::size_t j = 0; j < dim; ++j)
      moved = std::max(moved, std::abs(next[j] - x[j]) / (1.0 + std::abs(x[j])));
    x = next;
    fx = f_next;
    if (moved < 1e-12) return objective.unpack(x);
  }
  throw TrainingError("M-step Newton iterations did not converge for item " + std::to_string(item),
                      kMaxNewtonSteps);
}

double ability_objective(std::span<const Observation> responses, const ItemParams& items, double theta,
                         double* gradient) {
  double f = -0.5 * theta * theta;
  double g = -theta;
  for (const Observation& obs : responses) {
    const CellTerms t = cell_terms(items.kind(), obs.response, theta, items.at(obs.item));
    f += t.log_prob;
    g += t.d_theta;
  }
  if (gradient) *gradient = g;
  return f;
}

double ability_curvature(std::span<const Observation> responses, const ItemParams& items, double theta) {
  const ModelKind kind = items.kind();
  if (kind == ModelKind::OneParam || kind == ModelKind::TwoParam) {
    double h = -1.0;
    for (const Observation& obs : responses) {
      const ItemPoint p = items.at(obs.item);
      const double a = kind == ModelKind::OneParam ? 1.0 : p.discrimination;
      const double z = a * (theta - p.difficulty);
      h -= a * a * logistic(z) * logistic(-z);
    }
    return h;
  }
  const double step = 1e-5 * std::max(1.0, std::abs(theta));
  double gp = 0.0, gm = 0.0;
  ability_objective(responses, items, theta + step, &gp);
  ability_objective(responses, items, theta - step, &gm);
  return (gp - gm) / (2.0 * step);
}

}  // namespace

// ---------------------------------------------------------------------------
// Quadrature

QuadratureRule make_quadrature(std::size_t points) {
  if (points < 3) throw ContractError("quadrature needs at least 3 points");

  // Roots of the physicists' Hermite polynomial H_n by Newton's method on the
  // orthonormal recurrence, largest root first, mirrored by symmetry.
  const std::size_t n = points;
  const long double pim4 = 0.7511255444649424828587030047762276930510L;  // pi^(-1/4)
  const long double tol = 1e-17L;
  std::vector<long double> x(n), w(n);
  const std::size_t half = (n + 1) / 2;
  long double z = 0.0L;
  for (std::size_t i = 0; i < half; ++i) {
    const long double nl = static_cast<long double>(n);
    if (i == 0) {
      z = std::sqrt(2.0L * nl + 1.0L) - 1.85575L * std::pow(2.0L * nl + 1.0L, -0.16667L);
    } else if (i == 1) {
      z -= 1.14L * std::pow(nl, 0.426L) / z;
    } else if (i == 2) {
      z = 1.86L * z - 0.86L * x[0];
    } else if (i == 3) {
      z = 1.91L * z - 0.91L * x[1];
    } else {
      z = 2.0L * z - x[i - 2];
    }

    long double derivative = 0.0L;
    bool converged = false;
    for (int iter = 0; iter < 200 && !converged; ++iter) {
      long double p1 = pim4, p2 = 0.0L;
      for (std::size_t j = 1; j <= n; ++j) {
        const long double p3 = p2;
        p2 = p1;
        const long double jl = static_cast<long double>(j);
        p1 = z * std::sqrt(2.0L / jl) * p2 - std::sqrt((jl - 1.0L) / jl) * p3;
      }
      derivative = std::sqrt(2.0L * nl) * p2;
      const long double previous = z;
      z = previous - p1 / derivative;
      converged = std::abs(z - previous) <= tol * std::max(1.0L, std::abs(z));
    }
    if (!converged) throw Error("Gauss-Hermite root iteration did not converge for n=" + std::to_string(n));
    if (n % 2 == 1 && i == half - 1) z = 0.0L;
    x[i] = z;
    x[n - 1 - i] = -z;
    w[i] = w[n - 1 - i] = 2.0L / (derivative * derivative);
  }

  QuadratureRule rule;
  rule.nodes.resize(n);
  rule.weights.resize(n);
  const long double sqrt2 = std::numbers::sqrt2_v<long double>;
  const long double inv_sqrt_pi = std::numbers::inv_sqrtpi_v<long double>;
  long double total = 0.0L;
  for (std::size_t k = 0; k < n; ++k) total += w[k] * inv_sqrt_pi;
  // x is descending; emit ascending.
  for (std::size_t k = 0; k < n; ++k) {
    rule.nodes[k] = static_cast<double>(x[n - 1 - k] * sqrt2);
    rule.weights[k] = static_cast<double>(w[n - 1 - k] * inv_sqrt_pi / total);
  }
  return rule;
}

// ---------------------------------------------------------------------------
// E-step

EStepResult e_step(const ResponsePatternDataset& dataset, const ItemParams& items, const QuadratureRule& rule) {
  if (items.size() != dataset.item_count()) throw ContractError("item parameter count does not match the dataset");
  const std::size_t n_items = dataset.item_count();
  const std::size_t n_subjects = dataset.subject_count();
  const std::size_t n_nodes = rule.nodes.size();
  const ModelKind kind = items.kind();

  // log p(y | x_k, item i) tables, item-major.
  std::vector<double> log_p1(n_items * n_nodes), log_p0(n_items * n_nodes);
  for (std::size_t i = 0; i < n_items; ++i) {
    const ItemPoint p = items.at(i);
    for (std::size_t k = 0; k < n_nodes; ++k) {
      log_p1[i * n_nodes + k] = cell_terms(kind, 1, rule.nodes[k], p).log_prob;
      log_p0[i * n_nodes + k] = cell_terms(kind, 0, rule.nodes[k], p).log_prob;
    }
  }
  std::vector<double> log_w(n_nodes);
  for (std::size_t k = 0; k < n_nodes; ++k) log_w[k] = std::log(rule.weights[k]);

  EStepResult result;
  result.posterior.assign(n_subjects * n_nodes, 0.0);

  const std::size_t chunks = chunk_count(n_subjects);
  struct Partial {
    std::vector<double> correct;
    std::vector<double> exposure;
    double log_likelihood = 0.0;
  };
  std::vector<Partial> partials(chunks);

  parallel_for(chunks, [&](std::size_t c) {
    Partial& part = partials[c];
    part.correct.assign(n_items * n_nodes, 0.0);
    part.exposure.assign(n_items * n_nodes, 0.0);
    std::vector<double> log_post(n_nodes);
    const auto [begin, end] = chunk_range(c, chunks, n_subjects);
    for (std::size_t j = begin; j < end; ++j) {
      const auto responses = dataset.subject_observations(j);
      std::copy(log_w.begin(), log_w.end(), log_post.begin());
      for (const Observation& obs : responses) {
        const double* row = (obs.response ? log_p1.data() : log_p0.data()) + obs.item * n_nodes;
        for (std::size_t k = 0; k < n_nodes; ++k) log_post[k] += row[k];
      }
      const double peak = *std::max_element(log_post.begin(), log_post.end());
      double total = 0.0;
      double* r = result.posterior.data() + j * n_nodes;
      for (std::size_t k = 0; k < n_nodes; ++k) {
        r[k] = std::exp(log_post[k] - peak);
        total += r[k];
      }
      const double subject_ll = peak + std::log(total);
      if (!std::isfinite(subject_ll) || !(total > 0.0))
        throw TrainingError("E-step: marginal likelihood of subject '" + dataset.subject_ids()[j] + "' is not finite",
                            0);
      for (std::size_t k = 0; k < n_nodes; ++k) r[k] /= total;
      part.log_likelihood += subject_ll;

      for (const Observation& obs : responses) {
        double* exposure = part.exposure.data() + obs.item * n_nodes;
        for (std::size_t k = 0; k < n_nodes; ++k) exposure[k] += r[k];
        if (obs.response) {
          double* correct = part.correct.data() + obs.item * n_nodes;
          for (std::size_t k = 0; k < n_nodes; ++k) correct[k] += r[k];
        }
      }
    }
  });

  result.counts.items = n_items;
  result.counts.nodes = n_nodes;
  result.counts.correct.assign(n_items * n_nodes, 0.0);
  result.counts.exposure.assign(n_items * n_nodes, 0.0);
  for (const Partial& part : partials) {
    for (std::size_t k = 0; k < part.correct.size(); ++k) {
      result.counts.correct[k] += part.correct[k];
      result.counts.exposure[k] += part.exposure[k];
    }
    result.marginal_log_likelihood += part.log_likelihood;
  }
  return result;
}

// ---------------------------------------------------------------------------
// M-step

double expected_complete_log_likelihood(const ExpectedCounts& counts, std::span<const double> nodes,
                                        std::size_t item, ModelKind kind, const ItemPoint& point) {
  double total = 0.0;
  for (std::size_t k = 0; k < nodes.size(); ++k) {
    const double n1 = counts.correct_at(item, k);
    const double n0 = counts.exposure_at(item, k) - n1;
    if (n1 != 0.0) total += n1 * cell_terms(kind, 1, nodes[k], point).log_prob;
    if (n0 != 0.0) total += n0 * cell_terms(kind, 0, nodes[k], point).log_prob;
  }
  return total;
}

ItemParams m_step(const ExpectedCounts& counts, std::span<const double> nodes, const ItemParams& current,
                  const ItemBounds& bounds) {
  if (counts.items != current.size() || counts.nodes != nodes.size())
    throw ContractError("expected counts do not match the item parameters or quadrature nodes");

  const ModelKind kind = current.kind();
  std::vector<ItemPoint> updated(current.size());
  const std::size_t n_items = current.size();
  const std::size_t chunks = std::clamp<std::size_t>(n_items / 64, 1, kMaxChunks);
  parallel_for(chunks, [&](std::size_t c) {
    const auto [begin, end] = chunk_range(c, chunks, n_items);
    for (std::size_t i = begin; i < end; ++i) {
      const ItemObjective objective(counts, nodes, i, kind, bounds);
      updated[i] = maximize_item(objective, current.at(i), i);
    }
  });

  ItemParams out = current;
  for (std::size_t i = 0; i < n_items; ++i) out.set(i, updated[i]);
  return out;
}

// ---------------------------------------------------------------------------
// Ability

double map_ability(std::span<const Observation> responses, const ItemParams& items, double start) {
  if (!std::isfinite(start)) throw DomainError("MAP start must be finite");
  double theta = start;
  double g = 0.0;
  double f = ability_objective(responses, items, theta, &g);
  const double gradient_tol = 1e-12 * (1.0 + static_cast<double>(responses.size()));

  for (int iter = 0; iter < 200; ++iter) {
    if (std::abs(g) <= gradient_tol) break;
    const double h = ability_curvature(responses, items, theta);
    double step = h < 0.0 ? -g / h : std::copysign(1.0, g);
    step = std::clamp(step, -4.0, 4.0);

    bool accepted = false;
    for (double t = 1.0; t > 1e-14; t *= 0.5) {
      const double trial = theta + t * step;
      double g_trial = 0.0;
      const double f_trial = ability_objective(responses, items, trial, &g_trial);
      if (f_trial >= f) {
        accepted = std::abs(trial - theta) > 0.0;
        theta = trial;
        f = f_trial;
        g = g_trial;
        break;
      }
    }
    if (!accepted || std::abs(step) < 1e-14 * (1.0 + std::abs(theta))) break;
  }
  return theta;
}

AbilityParams map_abilities(const ResponsePatternDataset& dataset, const ItemParams& items) {
  if (items.size() != dataset.item_count()) throw ContractError("item parameter count does not match the dataset");
  AbilityParams out;
  out.theta.assign(dataset.subject_count(), 0.0);
  const std::size_t chunks = chunk_count(dataset.subject_count());
  parallel_for(chunks, [&](std::size_t c) {
    const auto [begin, end] = chunk_range(c, chunks, dataset.subject_count());
    for (std::size_t j = begin; j < end; ++j) out.theta[j] = map_ability(dataset.subject_observations(j), items);
  });
  return out;
}

// ---------------------------------------------------------------------------
// EM driver

FitReport fit_mml(const ResponsePatternDataset& dataset, ModelKind kind, const MmlConfig& config) {
  if (config.max_iters == 0) throw ContractError("max_iters must be positive");
  const auto start = std::chrono::steady_clock::now();
  auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(); };

  const std::size_t n_items = dataset.item_count();
  if (n_items == 0) throw ContractError("dataset has no items");
  const std::vector<std::size_t> exposure = dataset.item_exposure();
  std::vector<std::size_t> correct(n_items, 0);
  for (const Observation& obs : dataset.observations()) correct[obs.item] += obs.response;

  FitReport report;
  report.kind = kind;
  report.estimator = Estimator::Mml;

  // Initial difficulties from smoothed proportions correct.
  ItemParams items = ItemParams::neutral(kind, n_items);
  const ItemBounds& bounds = config.bounds;
  for (std::size_t i = 0; i < n_items; ++i) {
    if (exposure[i] == 0)
      throw ContractError("item '" + dataset.item_ids()[i] + "' has no observations; MML needs at least one per item");
    if (correct[i] == 0 || correct[i] == exposure[i]) report.flagged_items.push_back(i);
    const double p = (static_cast<double>(correct[i]) + 0.5) / (static_cast<double>(exposure[i]) + 1.0);
    ItemPoint point = items.at(i);
    point.difficulty = std::clamp(-logit(p), bounds.difficulty_min, bounds.difficulty_max);
    if (kind == ModelKind::ThreeParam) point.guessing = std::clamp(0.1, bounds.guessing_min, bounds.guessing_max);
    if (kind == ModelKind::FourParamFeasibility)
      point.feasibility = std::clamp(0.9, bounds.feasibility_min, bounds.feasibility_max);
    items.set(i, point);
  }

  const QuadratureRule rule = make_quadrature(config.quad_points);
  double previous_ll = 0.0;
  for (std::size_t iter = 1; iter <= config.max_iters; ++iter) {
    const EStepResult estep = e_step(dataset, items, rule);
    const double ll = estep.marginal_log_likelihood;
    const EpochRecord record{iter, -ll, elapsed()};
    report.trace.push_back(record);
    if (config.on_iteration) config.on_iteration(record);
    report.best_epoch = iter;

    if (iter > 1 && config.tolerance > 0.0 && std::abs(ll - previous_ll) <= config.tolerance * std::abs(previous_ll)) {
      report.converged = true;
      break;
    }
    if (iter == config.max_iters) break;
    previous_ll = ll;
    items = m_step(estep.counts, rule.nodes, items, bounds);
  }

  report.abilities = map_abilities(dataset, items);
  report.items = std::move(items);
  report.seconds = elapsed();
  return report;
}

}  // namespace irtforge
