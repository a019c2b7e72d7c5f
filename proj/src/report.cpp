#include "irtforge/report.hpp"

#include <limits>
#include <string>

#include "irtforge/error.hpp"

namespace irtforge {

std::string_view to_string(Estimator estimator) { return estimator == Estimator::Svi ? "svi" : "mml"; }

Estimator parse_estimator(std::string_view name) {
  if (name == "svi") return Estimator::Svi;
  if (name == "mml") return Estimator::Mml;
  throw FormatError("unknown estimator '" + std::string(name) + "' (expected svi or mml)");
}

double FitReport::final_loss() const {
  return trace.empty() ? std::numeric_limits<double>::quiet_NaN() : trace.back().loss;
}

std::vector<double> FitReport::losses() const {
  std::vector<double> out;
  out.reserve(trace.size());
  for (const EpochRecord& r : trace) out.push_back(r.loss);
  return out;
}

}  // namespace irtforge
