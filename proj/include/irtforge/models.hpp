#pragma once

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

namespace irtforge {

class ResponsePatternDataset;

enum class ModelKind { OneParam, TwoParam, ThreeParam, FourParamFeasibility };

/// Parses "1pl", "2pl", "3pl" or "4pl" (case-insensitive). Throws FormatError otherwise.
ModelKind parse_model_kind(std::string_view name);
std::string_view to_string(ModelKind kind);

/// Which item parameters beyond difficulty a model kind carries.
struct ParameterSchema {
  bool discrimination = false;
  bool guessing = false;
  bool feasibility = false;
};

ParameterSchema schema_of(ModelKind kind);

/// Parameters of a single item. Unused fields keep their neutral values
/// (a = 1, c = 0, lambda = 1) so every kind can be evaluated through one type.
struct ItemPoint {
  double difficulty = 0.0;
  double discrimination = 1.0;
  double guessing = 0.0;
  double feasibility = 1.0;
};

/// Per-item parameter vectors for one model kind. Arrays for parameters the
/// kind does not use are empty. Construction and `set` validate the ranges
/// (a > 0, 0 <= c <= 1, 0 < lambda <= 1, all finite); kernels downstream rely
/// on that and do not re-check.
class ItemParams {
 public:
  ItemParams() = default;
  ItemParams(ModelKind kind, std::vector<double> difficulty, std::vector<double> discrimination = {},
             std::vector<double> guessing = {}, std::vector<double> feasibility = {});

  /// b = 0, a = 1, c = 0, lambda = 1 for every item.
  static ItemParams neutral(ModelKind kind, std::size_t item_count);

  ModelKind kind() const noexcept { return kind_; }
  std::size_t size() const noexcept { return difficulty_.size(); }

  ItemPoint at(std::size_t item) const;
  void set(std::size_t item, const ItemPoint& point);

  const std::vector<double>& difficulty() const noexcept { return difficulty_; }
  const std::vector<double>& discrimination() const noexcept { return discrimination_; }
  const std::vector<double>& guessing() const noexcept { return guessing_; }
  const std::vector<double>& feasibility() const noexcept { return feasibility_; }

  friend bool operator==(const ItemParams&, const ItemParams&) = default;

 private:
  ModelKind kind_ = ModelKind::OneParam;
  std::vector<double> difficulty_;
  std::vector<double> discrimination_;
  std::vector<double> guessing_;
  std::vector<double> feasibility_;
};

struct AbilityParams {
  std::vector<double> theta;

  std::size_t size() const noexcept { return theta.size(); }
  friend bool operator==(const AbilityParams&, const AbilityParams&) = default;
};

// Logistic helpers, stable over the whole double range.
double logistic(double x) noexcept;
double log_logistic(double x) noexcept;  // log(logistic(x))
double logit(double p) noexcept;

// Item characteristic curves. All throw DomainError on non-finite input or
// parameters outside their admissible range.
double icc_1pl(double theta, double b);
double icc_2pl(double theta, double a, double b);
double icc_3pl(double theta, double a, double b, double c);
double icc_4pl_feasibility(double theta, double a, double b, double lambda);

/// Dispatches to the ICC of `kind`; fields the kind does not use are ignored.
double icc(ModelKind kind, double theta, const ItemPoint& item);

/// log p(y | theta, item) with domain checks. 1PL/2PL stay in logit space;
/// 3PL/4PL go through the probability clamped to [1e-12, 1 - 1e-12].
double bernoulli_log_prob(int y, ModelKind kind, double theta, const ItemPoint& item);

/// Log-probability of one response together with its partial derivatives
/// with respect to theta and each item parameter (in model space).
struct CellTerms {
  double log_prob = 0.0;
  double d_theta = 0.0;
  double d_difficulty = 0.0;
  double d_discrimination = 0.0;
  double d_guessing = 0.0;
  double d_feasibility = 0.0;
};

/// Unchecked kernel used by the estimators. Assumes a validated ItemPoint
/// and y in {0, 1}. Where the 3PL/4PL clamp is active the probability is
/// locally constant, so its derivatives are reported as zero.
CellTerms cell_terms(ModelKind kind, int y, double theta, const ItemPoint& item) noexcept;

/// Sum of log p(Z_ji | theta_j, item i) over observed cells, in stored observation order.
double dataset_log_likelihood(const ResponsePatternDataset& dataset, const ItemParams& items,
                              const AbilityParams& abilities, ModelKind kind);

}  // namespace irtforge
