#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "irtforge/models.hpp"
#include "irtforge/rng.hpp"

namespace irtforge {

/// One graded response: subject row, item column, 0 or 1.
struct Observation {
  std::uint32_t subject = 0;
  std::uint32_t item = 0;
  std::uint8_t response = 0;

  friend bool operator==(const Observation&, const Observation&) = default;
};

/// One input row: a subject and its item -> response mapping, in source order.
struct SubjectRow {
  std::string subject_id;
  std::vector<std::pair<std::string, int>> responses;
};

/// Sparse binary response matrix in coordinate form. Subjects are rows.
///
/// Observations are kept sorted by (subject, item) so each subject's
/// responses form a contiguous slice. Immutable after construction.
class ResponsePatternDataset {
 public:
  ResponsePatternDataset() = default;

  /// Validates unique ids, index ranges, binary responses and the absence
  /// of repeated (subject, item) cells. Throws FormatError.
  ResponsePatternDataset(std::vector<std::string> subject_ids, std::vector<std::string> item_ids,
                         std::vector<Observation> observations);

  std::size_t subject_count() const noexcept { return subject_ids_.size(); }
  std::size_t item_count() const noexcept { return item_ids_.size(); }
  std::size_t observation_count() const noexcept { return observations_.size(); }

  const std::vector<std::string>& subject_ids() const noexcept { return subject_ids_; }
  const std::vector<std::string>& item_ids() const noexcept { return item_ids_; }

  std::span<const Observation> observations() const noexcept { return observations_; }
  std::span<const Observation> subject_observations(std::size_t subject) const;

  std::optional<std::size_t> subject_index(std::string_view id) const;
  std::optional<std::size_t> item_index(std::string_view id) const;

  /// Number of observed responses per item.
  std::vector<std::size_t> item_exposure() const;

  friend bool operator==(const ResponsePatternDataset& lhs, const ResponsePatternDataset& rhs) {
    return lhs.subject_ids_ == rhs.subject_ids_ && lhs.item_ids_ == rhs.item_ids_ &&
           lhs.observations_ == rhs.observations_;
  }

 private:
  std::vector<std::string> subject_ids_;
  std::vector<std::string> item_ids_;
  std::vector<Observation> observations_;
  std::vector<std::size_t> subject_offsets_;  // size J + 1
  std::unordered_map<std::string, std::size_t> subject_lookup_;
  std::unordered_map<std::string, std::size_t> item_lookup_;
};

/// Subjects are indexed in row order, items in order of first appearance.
ResponsePatternDataset build(std::span<const SubjectRow> rows);

struct SimulationSpec {
  ModelKind kind = ModelKind::OneParam;
  std::size_t subjects = 100;
  std::size_t items = 20;
  /// Guessing held at this value for every item; drawn Uniform(0, 0.3) when unset.
  std::optional<double> fixed_guessing;
  double missing_rate = 0.0;
  std::uint64_t seed = 0;
};

struct SimulationResult {
  ResponsePatternDataset dataset;
  ItemParams items;
  AbilityParams abilities;
};

/// Draws true parameters (theta ~ N(0,1), b ~ N(0,1), a ~ LogNormal(0, 0.25),
/// c ~ U(0, 0.3) or fixed, lambda ~ U(0.7, 1)) and then responses.
SimulationResult simulate(const SimulationSpec& spec);

/// Draws responses for fixed parameters. Cells are visited row-major; each
/// is dropped with probability `missing_rate`, otherwise answered correctly
/// with probability icc(theta_j, item i). Ids are "s<j>" and "q<i>".
ResponsePatternDataset simulate_responses(const ItemParams& items, const AbilityParams& abilities,
                                          double missing_rate, Rng& rng);

/// A shuffled partition of observation indices into consecutive batches.
class BatchPlan {
 public:
  BatchPlan(std::vector<std::uint32_t> order, std::size_t batch_size);

  std::size_t batch_count() const noexcept;
  std::size_t batch_size() const noexcept { return batch_size_; }
  std::span<const std::uint32_t> batch(std::size_t index) const;
  std::span<const std::uint32_t> order() const noexcept { return order_; }

 private:
  std::vector<std::uint32_t> order_;
  std::size_t batch_size_;
};

/// Fisher-Yates permutation of all observation indices, cut into chunks of
/// `batch_size` (the last may be short).
BatchPlan split_batches(const ResponsePatternDataset& dataset, std::size_t batch_size, Rng& rng);

}  // namespace irtforge
