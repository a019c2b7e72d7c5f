// Independent reference computations used only by the tests.
#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <sys/wait.h>
#include <unistd.h>

#include <Eigen/Dense>

#include "irtforge/dataset.hpp"
#include "irtforge/models.hpp"

namespace oracle {

struct Rule {
  std::vector<double> nodes;
  std::vector<double> weights;
};

// Golub-Welsch: nodes are eigenvalues of the Jacobi matrix, weights are
// mu0 times the squared first eigenvector components.
inline Rule golub_welsch(const std::vector<double>& diagonal, const std::vector<double>& off_diagonal, double mu0) {
  const auto n = static_cast<Eigen::Index>(diagonal.size());
  Eigen::MatrixXd jacobi = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index k = 0; k < n; ++k) jacobi(k, k) = diagonal[static_cast<std::size_t>(k)];
  for (Eigen::Index k = 0; k + 1 < n; ++k) {
    jacobi(k, k + 1) = off_diagonal[static_cast<std::size_t>(k)];
    jacobi(k + 1, k) = off_diagonal[static_cast<std::size_t>(k)];
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(jacobi);
  Rule rule;
  for (Eigen::Index k = 0; k < n; ++k) {
    rule.nodes.push_back(solver.eigenvalues()(k));
    const double v = solver.eigenvectors()(0, k);
    rule.weights.push_back(mu0 * v * v);
  }
  return rule;
}

// Probabilists' Hermite: integrates against the standard Normal density.
inline Rule normal_rule(std::size_t n) {
  std::vector<double> diagonal(n, 0.0), off(n > 0 ? n - 1 : 0);
  for (std::size_t k = 0; k + 1 < n; ++k) off[k] = std::sqrt(static_cast<double>(k + 1));
  return golub_welsch(diagonal, off, 1.0);
}

// Gauss-Legendre on [lo, hi].
inline Rule legendre_rule(std::size_t n, double lo, double hi) {
  std::vector<double> diagonal(n, 0.0), off(n > 0 ? n - 1 : 0);
  for (std::size_t k = 0; k + 1 < n; ++k) {
    const double m = static_cast<double>(k + 1);
    off[k] = m / std::sqrt(4.0 * m * m - 1.0);
  }
  Rule rule = golub_welsch(diagonal, off, 2.0);
  for (std::size_t k = 0; k < n; ++k) {
    rule.nodes[k] = lo + (hi - lo) * (rule.nodes[k] + 1.0) / 2.0;
    rule.weights[k] *= (hi - lo) / 2.0;
  }
  return rule;
}

inline long double naive_icc(irtforge::ModelKind kind, long double theta, const irtforge::ItemPoint& p) {
  long double a = 1.0L, c = 0.0L, lambda = 1.0L;
  if (kind != irtforge::ModelKind::OneParam) a = p.discrimination;
  if (kind == irtforge::ModelKind::ThreeParam) c = p.guessing;
  if (kind == irtforge::ModelKind::FourParamFeasibility) lambda = p.feasibility;
  const long double core = 1.0L / (1.0L + std::exp(-a * (theta - static_cast<long double>(p.difficulty))));
  return c + (1.0L - c) * lambda * core;
}

// Log-likelihood with plain probability arithmetic in extended precision.
inline long double naive_log_likelihood(const irtforge::ResponsePatternDataset& ds, const irtforge::ItemParams& items,
                                        const std::vector<double>& theta, irtforge::ModelKind kind) {
  long double total = 0.0L;
  for (const auto& obs : ds.observations()) {
    const long double p = naive_icc(kind, theta[obs.subject], items.at(obs.item));
    total += std::log(obs.response ? p : 1.0L - p);
  }
  return total;
}

inline double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    sxy += (x[k] - mx) * (y[k] - my);
    sxx += (x[k] - mx) * (x[k] - mx);
    syy += (y[k] - my) * (y[k] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

inline std::vector<double> ranks(const std::vector<double>& x) {
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> r(x.size());
  for (std::size_t k = 0; k < order.size();) {
    std::size_t end = k;
    while (end + 1 < order.size() && x[order[end + 1]] == x[order[k]]) ++end;
    const double average = (static_cast<double>(k) + static_cast<double>(end)) / 2.0 + 1.0;
    for (std::size_t m = k; m <= end; ++m) r[order[m]] = average;
    k = end + 1;
  }
  return r;
}

inline double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  return pearson(ranks(x), ranks(y));
}

inline double log_sum_exp(const std::vector<double>& v) {
  const double m = *std::max_element(v.begin(), v.end());
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

// log p(Z) for a 1PL model with b_i ~ N(0, 1) and either theta_j ~ N(0, 1)
// or the hierarchical theta_j ~ N(mu, tau^-1/2), mu ~ N(0, 1), tau ~ Gamma(1, 1).
//
// b and mu use Hermite rules. tau = s^2 is integrated over s in [0, 6.5] by
// Legendre, which keeps the integrand smooth at tau = 0. Each theta integral
// runs over panelled Legendre nodes on [-30, 30]; beyond that the response
// probability is its limit (0 or 1) and the Normal tail mass is added exactly.
// Items are enumerated by a full tensor grid, so keep I small.
inline double log_evidence_1pl(const irtforge::ResponsePatternDataset& ds, bool hierarchical,
                               std::size_t normal_points = 24, std::size_t tau_points = 40) {
  const Rule g = normal_rule(normal_points);
  const Rule s_rule = legendre_rule(tau_points, 0.0, 6.5);
  const std::size_t items = ds.item_count();
  const std::size_t subjects = ds.subject_count();
  constexpr double kLimit = 30.0;

  Rule theta_rule;
  const Rule panel = legendre_rule(12, 0.0, 1.0);
  for (double lo = -kLimit; lo < kLimit; lo += 1.0) {
    for (std::size_t k = 0; k < panel.nodes.size(); ++k) {
      theta_rule.nodes.push_back(lo + panel.nodes[k]);
      theta_rule.weights.push_back(panel.weights[k]);
    }
  }
  const auto n_theta = static_cast<Eigen::Index>(theta_rule.nodes.size());

  // Ability prior components: (log prior weight, mean, sd).
  struct Component {
    double log_weight, mean, sd;
  };
  std::vector<Component> components;
  if (!hierarchical) {
    components.push_back({0.0, 0.0, 1.0});
  } else {
    for (std::size_t m = 0; m < g.nodes.size(); ++m)
      for (std::size_t t = 0; t < s_rule.nodes.size(); ++t) {
        const double s = s_rule.nodes[t];
        // Gamma(1, 1) density e^-tau with Jacobian d tau / ds = 2s.
        components.push_back({std::log(g.weights[m]) + std::log(s_rule.weights[t]) - s * s + std::log(2.0 * s),
                              g.nodes[m], 1.0 / s});
      }
  }
  const auto n_comp = static_cast<Eigen::Index>(components.size());

  // Columns 0..n_theta-1: quadrature weight times Normal density; then the
  // lower and upper tail masses.
  Eigen::MatrixXd density(n_comp, n_theta + 2);
  for (Eigen::Index c = 0; c < n_comp; ++c) {
    const Component& comp = components[static_cast<std::size_t>(c)];
    for (Eigen::Index k = 0; k < n_theta; ++k) {
      const double z = (theta_rule.nodes[static_cast<std::size_t>(k)] - comp.mean) / comp.sd;
      density(c, k) = theta_rule.weights[static_cast<std::size_t>(k)] * std::exp(-0.5 * z * z) /
                      (comp.sd * std::sqrt(2.0 * M_PI));
    }
    density(c, n_theta) = 0.5 * std::erfc((kLimit + comp.mean) / (comp.sd * std::sqrt(2.0)));
    density(c, n_theta + 1) = 0.5 * std::erfc((kLimit - comp.mean) / (comp.sd * std::sqrt(2.0)));
  }

  std::vector<double> terms;
  std::vector<std::size_t> idx(items, 0);
  std::vector<double> b(items);
  Eigen::MatrixXd pattern(n_theta + 2, static_cast<Eigen::Index>(subjects));
  while (true) {
    double log_w = 0.0;
    for (std::size_t i = 0; i < items; ++i) {
      b[i] = g.nodes[idx[i]];
      log_w += std::log(g.weights[idx[i]]);
    }
    for (std::size_t j = 0; j < subjects; ++j) {
      const auto col = static_cast<Eigen::Index>(j);
      bool all_correct = true, all_wrong = true;
      for (const auto& obs : ds.subject_observations(j)) (obs.response ? all_wrong : all_correct) = false;
      for (Eigen::Index k = 0; k < n_theta; ++k) {
        double p = 1.0;
        for (const auto& obs : ds.subject_observations(j)) {
          const double pr = 1.0 / (1.0 + std::exp(-(theta_rule.nodes[static_cast<std::size_t>(k)] - b[obs.item])));
          p *= obs.response ? pr : 1.0 - pr;
        }
        pattern(k, col) = p;
      }
      pattern(n_theta, col) = all_wrong ? 1.0 : 0.0;
      pattern(n_theta + 1, col) = all_correct ? 1.0 : 0.0;
    }
    const Eigen::MatrixXd per_subject = density * pattern;
    std::vector<double> inner(static_cast<std::size_t>(n_comp));
    for (Eigen::Index c = 0; c < n_comp; ++c) {
      double lp = components[static_cast<std::size_t>(c)].log_weight;
      for (Eigen::Index j = 0; j < per_subject.cols(); ++j) lp += std::log(per_subject(c, j));
      inner[static_cast<std::size_t>(c)] = lp;
    }
    terms.push_back(log_w + log_sum_exp(inner));

    std::size_t i = 0;
    while (i < items && ++idx[i] == g.nodes.size()) idx[i++] = 0;
    if (i == items) break;
  }
  return log_sum_exp(terms);
}

// Scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("irtforge-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

inline void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

// Drops the seconds column of a training log.
inline std::string strip_seconds(const std::string& csv) {
  std::istringstream in(csv);
  std::string line, out;
  while (std::getline(in, line)) out += line.substr(0, line.rfind(',')) + "\n";
  return out;
}

// Shell-quoted command for the CLI binary.
inline int run_cli(const std::string& args, const std::filesystem::path& log) {
  const std::string cmd = std::string("'") + IRT_FORGE_EXE + "' " + args + " > '" + log.string() + "' 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace oracle
