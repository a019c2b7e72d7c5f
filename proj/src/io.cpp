#include "irtforge/io.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include <json.hpp>

#include "irtforge/error.hpp"

namespace irtforge {

namespace {

using Json = nlohmann::ordered_json;

bool is_blank(std::string_view line) {
  return line.find_first_not_of(" \t\r\n") == std::string_view::npos;
}

int binary_response(const Json& value) {
  if (value.is_boolean()) return value.get<bool>() ? 1 : 0;
  if (value.is_number_integer() || value.is_number_unsigned()) {
    const auto v = value.get<std::int64_t>();
    if (v == 0 || v == 1) return static_cast<int>(v);
  } else if (value.is_number_float()) {
    const double v = value.get<double>();
    if (v == 0.0 || v == 1.0) return static_cast<int>(v);
  }
  return -1;
}

void require_finite(std::span<const double> values, const char* field) {
  for (double v : values)
    if (!std::isfinite(v)) throw ContractError(std::string("non-finite value in '") + field + "'");
}

Json index_map(const std::vector<std::string>& ids) {
  Json out = Json::object();
  for (std::size_t k = 0; k < ids.size(); ++k) out[std::to_string(k)] = ids[k];
  return out;
}

std::vector<std::string> read_index_map(const Json& node, const char* field) {
  if (!node.is_object()) throw FormatError(std::string("'") + field + "' must be an object of index -> id");
  std::vector<std::string> ids(node.size());
  std::vector<bool> seen(node.size(), false);
  for (const auto& [key, value] : node.items()) {
    std::size_t index = 0;
    std::size_t consumed = 0;
    try {
      index = std::stoul(key, &consumed);
    } catch (const std::exception&) {
      consumed = 0;
    }
    if (consumed != key.size() || key.empty() || index >= ids.size() || seen[index])
      throw FormatError(std::string("'") + field + "' must map each index 0.." + std::to_string(ids.size() - 1) +
                        " exactly once (bad key '" + key + "')");
    if (!value.is_string()) throw FormatError(std::string("'") + field + "' values must be strings");
    seen[index] = true;
    ids[index] = value.get<std::string>();
  }
  return ids;
}

std::vector<double> read_array(const Json& root, const char* field, bool required) {
  if (!root.contains(field)) {
    if (required) throw FormatError(std::string("missing field '") + field + "'");
    return {};
  }
  const Json& node = root.at(field);
  if (!node.is_array()) throw FormatError(std::string("'") + field + "' must be an array");
  std::vector<double> out;
  out.reserve(node.size());
  for (const Json& v : node) {
    if (!v.is_number()) throw FormatError(std::string("'") + field + "' must contain numbers only");
    out.push_back(v.get<double>());
  }
  return out;
}

void check_lengths(const ParametersDocument& doc) {
  const std::size_t n_items = doc.item_ids.size();
  auto item_array = [&](const std::vector<double>& v, const char* field, bool allow_empty) {
    if (v.size() != n_items && !(allow_empty && v.empty()))
      throw FormatError(std::string("'") + field + "' has " + std::to_string(v.size()) + " entries, expected " +
                        std::to_string(n_items));
  };
  item_array(doc.difficulty, "diff", false);
  item_array(doc.discrimination, "disc", true);
  item_array(doc.guessing, "guess", true);
  item_array(doc.feasibility, "lambda", true);
  if (doc.ability.size() != doc.subject_ids.size())
    throw FormatError("'ability' has " + std::to_string(doc.ability.size()) + " entries, expected " +
                      std::to_string(doc.subject_ids.size()));
}

}  // namespace

// ---------------------------------------------------------------------------
// jsonlines

ResponsePatternDataset read_jsonlines(std::istream& in) {
  std::vector<SubjectRow> rows;
  std::unordered_set<std::string> seen_subjects;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (is_blank(line)) continue;

    Json record;
    try {
      record = Json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(line_no, e.byte, "malformed JSON");
    }
    if (!record.is_object()) throw ParseError(line_no, 1, "expected a JSON object");
    if (!record.contains("subject_id") || !record["subject_id"].is_string())
      throw ParseError(line_no, 0, "missing string field 'subject_id'");
    if (!record.contains("responses") || !record["responses"].is_object())
      throw ParseError(line_no, 0, "missing object field 'responses'");

    SubjectRow row;
    row.subject_id = record["subject_id"].get<std::string>();
    if (!seen_subjects.insert(row.subject_id).second)
      throw FormatError("line " + std::to_string(line_no) + ": duplicate subject id '" + row.subject_id + "'");
    for (const auto& [item_id, value] : record["responses"].items()) {
      const int y = binary_response(value);
      if (y < 0)
        throw FormatError("line " + std::to_string(line_no) + ": response for item '" + item_id +
                          "' must be 0 or 1, got " + value.dump());
      row.responses.emplace_back(item_id, y);
    }
    rows.push_back(std::move(row));
  }
  if (in.bad()) throw IoError("failed while reading response data");
  if (rows.empty()) throw FormatError("no subjects in input");
  return build(rows);
}

ResponsePatternDataset read_jsonlines(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  return read_jsonlines(in);
}

void write_jsonlines(const ResponsePatternDataset& dataset, std::ostream& out) {
  for (std::size_t j = 0; j < dataset.subject_count(); ++j) {
    Json responses = Json::object();
    for (const Observation& obs : dataset.subject_observations(j))
      responses[dataset.item_ids()[obs.item]] = static_cast<int>(obs.response);
    Json record;
    record["subject_id"] = dataset.subject_ids()[j];
    record["responses"] = std::move(responses);
    out << record.dump() << '\n';
  }
}

void write_jsonlines(const ResponsePatternDataset& dataset, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  write_jsonlines(dataset, out);
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

// ---------------------------------------------------------------------------
// Parameters document

ParametersDocument make_parameters_document(std::string model, const FitReport& report,
                                            const ResponsePatternDataset& dataset, std::optional<std::uint64_t> seed) {
  ParametersDocument doc = make_truth_document(std::move(model), report.items, report.abilities, dataset, seed);
  doc.estimator = std::string(to_string(report.estimator));
  doc.scales = report.scales;
  return doc;
}

ParametersDocument make_truth_document(std::string model, const ItemParams& items, const AbilityParams& abilities,
                                       const ResponsePatternDataset& dataset, std::optional<std::uint64_t> seed) {
  if (items.size() != dataset.item_count() || abilities.size() != dataset.subject_count())
    throw ContractError("parameter lengths do not match the dataset");
  ParametersDocument doc;
  doc.model = std::move(model);
  doc.estimator = "truth";
  doc.seed = seed;
  doc.difficulty = items.difficulty();
  doc.discrimination = items.discrimination();
  doc.guessing = items.guessing();
  doc.feasibility = items.feasibility();
  doc.ability = abilities.theta;
  doc.item_ids = dataset.item_ids();
  doc.subject_ids = dataset.subject_ids();
  return doc;
}

ModelKind infer_kind(const ParametersDocument& doc) {
  if (!doc.guessing.empty()) return ModelKind::ThreeParam;
  if (!doc.feasibility.empty()) return ModelKind::FourParamFeasibility;
  if (!doc.discrimination.empty()) return ModelKind::TwoParam;
  return ModelKind::OneParam;
}

ItemParams item_params_of(const ParametersDocument& doc, ModelKind kind) {
  const ParameterSchema schema = schema_of(kind);
  return ItemParams(kind, doc.difficulty, schema.discrimination ? doc.discrimination : std::vector<double>{},
                    schema.guessing ? doc.guessing : std::vector<double>{},
                    schema.feasibility ? doc.feasibility : std::vector<double>{});
}

std::string to_json_text(const ParametersDocument& doc) {
  check_lengths(doc);
  require_finite(doc.difficulty, "diff");
  require_finite(doc.discrimination, "disc");
  require_finite(doc.guessing, "guess");
  require_finite(doc.feasibility, "lambda");
  require_finite(doc.ability, "ability");

  Json root;
  root["model"] = doc.model;
  root["estimator"] = doc.estimator;
  if (doc.seed) root["seed"] = *doc.seed;
  root["diff"] = doc.difficulty;
  if (!doc.discrimination.empty()) root["disc"] = doc.discrimination;
  if (!doc.guessing.empty()) root["guess"] = doc.guessing;
  if (!doc.feasibility.empty()) root["lambda"] = doc.feasibility;
  root["ability"] = doc.ability;
  root["item_ids"] = index_map(doc.item_ids);
  root["subject_ids"] = index_map(doc.subject_ids);
  if (doc.scales) {
    Json scales = Json::object();
    auto put = [&](const char* key, const std::vector<double>& v) {
      if (v.empty()) return;
      require_finite(v, key);
      scales[key] = v;
    };
    put("ability", doc.scales->ability);
    put("diff", doc.scales->difficulty);
    put("disc", doc.scales->discrimination);
    put("guess", doc.scales->guessing);
    put("lambda", doc.scales->feasibility);
    root["scales"] = std::move(scales);
  }
  return root.dump(2) + "\n";
}

ParametersDocument parse_parameters(std::string_view text) {
  Json root;
  try {
    root = Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    std::size_t line = 1, column = 1;
    for (std::size_t k = 0; k + 1 < e.byte && k < text.size(); ++k) {
      if (text[k] == '\n') {
        ++line;
        column = 1;
      } else {
        ++column;
      }
    }
    throw ParseError(line, column, "malformed parameters JSON");
  }
  if (!root.is_object()) throw FormatError("parameters document must be a JSON object");

  ParametersDocument doc;
  if (!root.contains("model") || !root["model"].is_string()) throw FormatError("missing string field 'model'");
  doc.model = root["model"].get<std::string>();
  if (root.contains("estimator")) doc.estimator = root["estimator"].get<std::string>();
  if (root.contains("seed")) doc.seed = root["seed"].get<std::uint64_t>();
  doc.difficulty = read_array(root, "diff", true);
  doc.discrimination = read_array(root, "disc", false);
  doc.guessing = read_array(root, "guess", false);
  doc.feasibility = read_array(root, "lambda", false);
  doc.ability = read_array(root, "ability", true);
  if (!root.contains("item_ids") || !root.contains("subject_ids"))
    throw FormatError("missing 'item_ids' or 'subject_ids'");
  doc.item_ids = read_index_map(root["item_ids"], "item_ids");
  doc.subject_ids = read_index_map(root["subject_ids"], "subject_ids");
  if (root.contains("scales")) {
    const Json& s = root["scales"];
    if (!s.is_object()) throw FormatError("'scales' must be an object");
    PosteriorScales scales;
    scales.ability = read_array(s, "ability", false);
    scales.difficulty = read_array(s, "diff", false);
    scales.discrimination = read_array(s, "disc", false);
    scales.guessing = read_array(s, "guess", false);
    scales.feasibility = read_array(s, "lambda", false);
    doc.scales = std::move(scales);
  }
  check_lengths(doc);
  return doc;
}

std::filesystem::path write_parameters(const ParametersDocument& doc, const std::filesystem::path& out_dir) {
  const std::string text = to_json_text(doc);
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create output directory '" + out_dir.string() + "': " + ec.message());
  const std::filesystem::path path = out_dir / kParametersFileName;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << text;
  if (!out.flush()) throw IoError("failed writing '" + path.string() + "'");
  return path;
}

ParametersDocument read_parameters(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_parameters(buffer.str());
}

void write_training_log(std::span<const EpochRecord> trace, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << "epoch,loss,seconds\n";
  char buffer[96];
  for (const EpochRecord& r : trace) {
    std::snprintf(buffer, sizeof buffer, "%zu,%.17g,%.6f\n", r.epoch, r.loss, r.seconds);
    out << buffer;
  }
  if (!out.flush()) throw IoError("failed writing '" + path.string() + "'");
}

}  // namespace irtforge
