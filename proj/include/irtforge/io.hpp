#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "irtforge/dataset.hpp"
#include "irtforge/models.hpp"
#include "irtforge/report.hpp"

namespace irtforge {

// ---------------------------------------------------------------------------
// Response data: one JSON object per line,
//   {"subject_id": "<id>", "responses": {"<item id>": 0 | 1, ...}}
// Blank lines are skipped. Responses may be 0/1 integers, 0.0/1.0 or booleans.

/// Throws ParseError (with line and column) for malformed lines and
/// FormatError for duplicate subjects, non-binary responses or empty input.
ResponsePatternDataset read_jsonlines(std::istream& in);
ResponsePatternDataset read_jsonlines(const std::filesystem::path& path);

/// One line per subject, responses in item-index order.
void write_jsonlines(const ResponsePatternDataset& dataset, std::ostream& out);
void write_jsonlines(const ResponsePatternDataset& dataset, const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Fitted parameters ("best_parameters.json")

/// Arrays are in index order; `item_ids[i]` is the id of position i. Arrays
/// a model does not use are empty and omitted from the JSON.
struct ParametersDocument {
  std::string model;
  std::string estimator;
  std::optional<std::uint64_t> seed;
  std::vector<double> difficulty;
  std::vector<double> discrimination;
  std::vector<double> guessing;
  std::vector<double> feasibility;
  std::vector<double> ability;
  std::vector<std::string> item_ids;
  std::vector<std::string> subject_ids;
  std::optional<PosteriorScales> scales;

  friend bool operator==(const ParametersDocument&, const ParametersDocument&) = default;
};

inline constexpr std::string_view kParametersFileName = "best_parameters.json";
inline constexpr std::string_view kTrainingLogFileName = "training_log.csv";

ParametersDocument make_parameters_document(std::string model, const FitReport& report,
                                            const ResponsePatternDataset& dataset,
                                            std::optional<std::uint64_t> seed = std::nullopt);

/// Document describing generating parameters (estimator field "truth").
ParametersDocument make_truth_document(std::string model, const ItemParams& items, const AbilityParams& abilities,
                                       const ResponsePatternDataset& dataset,
                                       std::optional<std::uint64_t> seed = std::nullopt);

/// Kind implied by which arrays are present.
ModelKind infer_kind(const ParametersDocument& doc);
ItemParams item_params_of(const ParametersDocument& doc, ModelKind kind);

/// Deterministic field order; numbers use the shortest decimal text that
/// round-trips exactly. Throws ContractError on invalid documents.
std::string to_json_text(const ParametersDocument& doc);
/// Throws ParseError / FormatError.
ParametersDocument parse_parameters(std::string_view text);

/// Creates `out_dir` if needed and writes <out_dir>/best_parameters.json.
/// Returns the file path. Throws IoError when the directory is unwritable.
std::filesystem::path write_parameters(const ParametersDocument& doc, const std::filesystem::path& out_dir);
ParametersDocument read_parameters(const std::filesystem::path& path);

/// CSV with header "epoch,loss,seconds".
void write_training_log(std::span<const EpochRecord> trace, const std::filesystem::path& path);

}  // namespace irtforge
