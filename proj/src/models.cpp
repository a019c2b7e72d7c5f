#include "irtforge/models.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <string>

#include "irtforge/dataset.hpp"
#include "irtforge/error.hpp"

namespace irtforge {

namespace {

constexpr double kProbFloor = 1e-12;
constexpr double kProbCeil = 1.0 - 1e-12;

void require_finite(double x, const char* what) {
  if (!std::isfinite(x)) throw DomainError(std::string(what) + " must be finite");
}

void check_discrimination(double a) {
  require_finite(a, "discrimination");
  if (!(a > 0.0)) throw DomainError("discrimination must be positive, got " + std::to_string(a));
}

void check_guessing(double c) {
  if (!(c >= 0.0 && c <= 1.0)) throw DomainError("guessing must lie in [0, 1], got " + std::to_string(c));
}

void check_feasibility(double lambda) {
  if (!(lambda > 0.0 && lambda <= 1.0))
    throw DomainError("feasibility must lie in (0, 1], got " + std::to_string(lambda));
}

void check_item(ModelKind kind, const ItemPoint& item) {
  require_finite(item.difficulty, "difficulty");
  const ParameterSchema schema = schema_of(kind);
  if (schema.discrimination) check_discrimination(item.discrimination);
  if (schema.guessing) check_guessing(item.guessing);
  if (schema.feasibility) check_feasibility(item.feasibility);
}

double logit_scale(ModelKind kind, double theta, const ItemPoint& item) {
  return kind == ModelKind::OneParam ? theta - item.difficulty
                                     : item.discrimination * (theta - item.difficulty);
}

}  // namespace

ModelKind parse_model_kind(std::string_view name) {
  std::string lower(name);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
  if (lower == "1pl") return ModelKind::OneParam;
  if (lower == "2pl") return ModelKind::TwoParam;
  if (lower == "3pl") return ModelKind::ThreeParam;
  if (lower == "4pl") return ModelKind::FourParamFeasibility;
  throw FormatError("unknown model kind '" + std::string(name) + "' (expected 1pl, 2pl, 3pl or 4pl)");
}

std::string_view to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::OneParam:
      return "1pl";
    case ModelKind::TwoParam:
      return "2pl";
    case ModelKind::ThreeParam:
      return "3pl";
    case ModelKind::FourParamFeasibility:
      return "4pl";
  }
  return "?";
}

ParameterSchema schema_of(ModelKind kind) {
  switch (kind) {
    case ModelKind::OneParam:
      return {};
    case ModelKind::TwoParam:
      return {.discrimination = true};
    case ModelKind::ThreeParam:
      return {.discrimination = true, .guessing = true};
    case ModelKind::FourParamFeasibility:
      return {.discrimination = true, .feasibility = true};
  }
  return {};
}

// ---------------------------------------------------------------------------
// ItemParams

ItemParams::ItemParams(ModelKind kind, std::vector<double> difficulty, std::vector<double> discrimination,
                       std::vector<double> guessing, std::vector<double> feasibility)
    : kind_(kind),
      difficulty_(std::move(difficulty)),
      discrimination_(std::move(discrimination)),
      guessing_(std::move(guessing)),
      feasibility_(std::move(feasibility)) {
  const ParameterSchema schema = schema_of(kind_);
  const std::size_t n = difficulty_.size();
  auto check_len = [n](const std::vector<double>& v, bool used, const char* name) {
    const std::size_t expected = used ? n : 0;
    if (v.size() != expected)
      throw ContractError(std::string(name) + " has " + std::to_string(v.size()) + " entries, expected " +
                          std::to_string(expected));
  };
  check_len(discrimination_, schema.discrimination, "discrimination");
  check_len(guessing_, schema.guessing, "guessing");
  check_len(feasibility_, schema.feasibility, "feasibility");
  for (std::size_t i = 0; i < n; ++i) check_item(kind_, at(i));
}

ItemParams ItemParams::neutral(ModelKind kind, std::size_t item_count) {
  const ParameterSchema schema = schema_of(kind);
  return ItemParams(kind, std::vector<double>(item_count, 0.0),
                    std::vector<double>(schema.discrimination ? item_count : 0, 1.0),
                    std::vector<double>(schema.guessing ? item_count : 0, 0.0),
                    std::vector<double>(schema.feasibility ? item_count : 0, 1.0));
}

ItemPoint ItemParams::at(std::size_t item) const {
  ItemPoint p;
  p.difficulty = difficulty_.at(item);
  if (!discrimination_.empty()) p.discrimination = discrimination_[item];
  if (!guessing_.empty()) p.guessing = guessing_[item];
  if (!feasibility_.empty()) p.feasibility = feasibility_[item];
  return p;
}

void ItemParams::set(std::size_t item, const ItemPoint& point) {
  if (item >= size()) throw ContractError("item index out of range");
  check_item(kind_, point);
  difficulty_[item] = point.difficulty;
  if (!discrimination_.empty()) discrimination_[item] = point.discrimination;
  if (!guessing_.empty()) guessing_[item] = point.guessing;
  if (!feasibility_.empty()) feasibility_[item] = point.feasibility;
}

// ---------------------------------------------------------------------------
// Scalar kernels

double logistic(double x) noexcept {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double log_logistic(double x) noexcept {
  if (x >= 0.0) return -std::log1p(std::exp(-x));
  return x - std::log1p(std::exp(x));
}

double logit(double p) noexcept { return std::log(p) - std::log1p(-p); }

double icc_1pl(double theta, double b) {
  require_finite(theta, "theta");
  require_finite(b, "difficulty");
  return logistic(theta - b);
}

double icc_2pl(double theta, double a, double b) {
  require_finite(theta, "theta");
  require_finite(b, "difficulty");
  check_discrimination(a);
  return logistic(a * (theta - b));
}

double icc_3pl(double theta, double a, double b, double c) {
  check_guessing(c);
  return c + (1.0 - c) * icc_2pl(theta, a, b);
}

double icc_4pl_feasibility(double theta, double a, double b, double lambda) {
  check_feasibility(lambda);
  return lambda * icc_2pl(theta, a, b);
}

double icc(ModelKind kind, double theta, const ItemPoint& item) {
  switch (kind) {
    case ModelKind::OneParam:
      return icc_1pl(theta, item.difficulty);
    case ModelKind::TwoParam:
      return icc_2pl(theta, item.discrimination, item.difficulty);
    case ModelKind::ThreeParam:
      return icc_3pl(theta, item.discrimination, item.difficulty, item.guessing);
    case ModelKind::FourParamFeasibility:
      return icc_4pl_feasibility(theta, item.discrimination, item.difficulty, item.feasibility);
  }
  return 0.0;
}

double bernoulli_log_prob(int y, ModelKind kind, double theta, const ItemPoint& item) {
  if (y != 0 && y != 1) throw DomainError("response must be 0 or 1, got " + std::to_string(y));
  require_finite(theta, "theta");
  check_item(kind, item);
  return cell_terms(kind, y, theta, item).log_prob;
}

CellTerms cell_terms(ModelKind kind, int y, double theta, const ItemPoint& item) noexcept {
  CellTerms out;
  const double centered = theta - item.difficulty;
  const double a = kind == ModelKind::OneParam ? 1.0 : item.discrimination;
  const double z = logit_scale(kind, theta, item);

  if (kind == ModelKind::OneParam || kind == ModelKind::TwoParam) {
    // d log p / dz = y - sigmoid(z)
    const double residual = y == 1 ? logistic(-z) : -logistic(z);
    out.log_prob = y == 1 ? log_logistic(z) : log_logistic(-z);
    out.d_theta = residual * a;
    out.d_difficulty = -residual * a;
    out.d_discrimination = residual * centered;
    return out;
  }

  const double s = logistic(z);
  const double slope = s * logistic(-z);  // ds/dz
  double p = 0.0;
  double dp_dz = 0.0;
  if (kind == ModelKind::ThreeParam) {
    p = item.guessing + (1.0 - item.guessing) * s;
    dp_dz = (1.0 - item.guessing) * slope;
  } else {
    p = item.feasibility * s;
    dp_dz = item.feasibility * slope;
  }

  double dlogp_dp = 0.0;
  if (p < kProbFloor) {
    p = kProbFloor;
  } else if (p > kProbCeil) {
    p = kProbCeil;
  } else {
    dlogp_dp = y == 1 ? 1.0 / p : -1.0 / (1.0 - p);
  }
  out.log_prob = y == 1 ? std::log(p) : std::log1p(-p);

  const double g = dlogp_dp * dp_dz;
  out.d_theta = g * a;
  out.d_difficulty = -g * a;
  out.d_discrimination = g * centered;
  if (kind == ModelKind::ThreeParam) {
    out.d_guessing = dlogp_dp * (1.0 - s);
  } else {
    out.d_feasibility = dlogp_dp * s;
  }
  return out;
}

double dataset_log_likelihood(const ResponsePatternDataset& dataset, const ItemParams& items,
                              const AbilityParams& abilities, ModelKind kind) {
  if (items.kind() != kind) throw ContractError("item parameters were built for a different model kind");
  if (items.size() != dataset.item_count())
    throw ContractError("item parameter count " + std::to_string(items.size()) + " != item count " +
                        std::to_string(dataset.item_count()));
  if (abilities.size() != dataset.subject_count())
    throw ContractError("ability count " + std::to_string(abilities.size()) + " != subject count " +
                        std::to_string(dataset.subject_count()));
  for (double t : abilities.theta) require_finite(t, "theta");

  double total = 0.0;
  for (const Observation& obs : dataset.observations()) {
    total += cell_terms(kind, obs.response, abilities.theta[obs.subject], items.at(obs.item)).log_prob;
  }
  return total;
}

}  // namespace irtforge
