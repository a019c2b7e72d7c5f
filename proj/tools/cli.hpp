#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "irtforge/dataset.hpp"
#include "irtforge/io.hpp"
#include "irtforge/mml.hpp"
#include "irtforge/registry.hpp"
#include "irtforge/report.hpp"
#include "irtforge/vi.hpp"

namespace irtforge::cli {

enum ExitCode : int {
  kOk = 0,
  kFailure = 1,     // I/O and other runtime failures
  kUsage = 2,       // bad flags, unknown model, invalid spec, unknown item id
  kInputError = 3,  // malformed or invalid input data
  kDiverged = 4,    // training diverged
};

struct TrainOptions {
  std::string model;
  std::filesystem::path data;
  std::filesystem::path out_dir;
  Estimator estimator = Estimator::Svi;
  std::size_t epochs = TrainConfig{}.epochs;
  double learning_rate = AdamConfig{}.learning_rate;
  std::size_t batch_size = TrainConfig{}.batch_size;
  std::optional<std::uint64_t> seed;
  std::size_t quad_points = MmlConfig{}.quad_points;
  std::size_t max_iters = MmlConfig{}.max_iters;
  std::size_t mc_samples = 1;
  bool no_hier = false;
  bool verbose = false;
};

struct SimulateOptions {
  std::string kind = "1pl";
  std::size_t subjects = 100;
  std::size_t items = 20;
  double missing = 0.0;
  std::optional<double> guessing;
  std::uint64_t seed = 0;
  std::filesystem::path out;
};

struct BenchOptions {
  std::vector<std::size_t> items{100, 1000};
  std::vector<std::size_t> subjects{10, 100};
  std::string model = "1pl";
  Estimator estimator = Estimator::Svi;
  std::size_t epochs = 10;
  std::size_t batch_size = TrainConfig{}.batch_size;
  std::uint64_t seed = 0;
  std::optional<std::filesystem::path> out;
};

struct PlotOptions {
  std::filesystem::path params;
  std::filesystem::path out;
  std::vector<std::string> items;  // empty: every item
  bool csv = false;
  std::size_t points = 81;
};

/// SVI configuration the train command uses for a registration and flags.
TrainConfig svi_config(const ModelRegistration& registration, const TrainOptions& options, std::uint64_t seed);
MmlConfig mml_config(const TrainOptions& options);

/// Fits `dataset` as the train command does and returns the report.
FitReport train(const ResponsePatternDataset& dataset, const ModelRegistration& registration,
                const TrainOptions& options, std::uint64_t seed);

/// Truth file written next to a simulated dataset: "<stem>.truth.json".
std::filesystem::path truth_path_for(const std::filesystem::path& dataset_path);

/// ICC tables over theta in [-4, 4] with `points` grid points.
std::string render_icc_csv(const ModelRegistration& model, const ParametersDocument& doc,
                           const std::vector<std::size_t>& items, std::size_t points);
std::string render_icc_svg(const ModelRegistration& model, const ParametersDocument& doc,
                           const std::vector<std::size_t>& items, std::size_t points);

int cmd_train(const TrainOptions& options, const ModelRegistry& registry, std::ostream& out, std::ostream& err);
int cmd_simulate(const SimulateOptions& options, std::ostream& out, std::ostream& err);
int cmd_bench(const BenchOptions& options, const ModelRegistry& registry, std::ostream& out, std::ostream& err);
int cmd_plot_icc(const PlotOptions& options, const ModelRegistry& registry, std::ostream& out, std::ostream& err);

/// Parses argv and dispatches. Never throws; returns an ExitCode.
int run(int argc, const char* const* argv, const ModelRegistry& registry, std::ostream& out, std::ostream& err);

}  // namespace irtforge::cli
