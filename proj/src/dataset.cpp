#include "irtforge/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "irtforge/error.hpp"

namespace irtforge {

namespace {

std::unordered_map<std::string, std::size_t> index_ids(const std::vector<std::string>& ids, const char* what) {
  std::unordered_map<std::string, std::size_t> lookup;
  lookup.reserve(ids.size());
  for (std::size_t k = 0; k < ids.size(); ++k) {
    if (!lookup.emplace(ids[k], k).second) throw FormatError(std::string("duplicate ") + what + " id '" + ids[k] + "'");
  }
  return lookup;
}

bool cell_less(const Observation& lhs, const Observation& rhs) {
  return lhs.subject != rhs.subject ? lhs.subject < rhs.subject : lhs.item < rhs.item;
}

}  // namespace

ResponsePatternDataset::ResponsePatternDataset(std::vector<std::string> subject_ids, std::vector<std::string> item_ids,
                                               std::vector<Observation> observations)
    : subject_ids_(std::move(subject_ids)), item_ids_(std::move(item_ids)), observations_(std::move(observations)) {
  constexpr std::size_t kMaxIndex = std::numeric_limits<std::uint32_t>::max();
  if (subject_ids_.size() > kMaxIndex || item_ids_.size() > kMaxIndex || observations_.size() > kMaxIndex)
    throw FormatError("dataset exceeds 32-bit index range");

  subject_lookup_ = index_ids(subject_ids_, "subject");
  item_lookup_ = index_ids(item_ids_, "item");

  for (const Observation& obs : observations_) {
    if (obs.subject >= subject_ids_.size() || obs.item >= item_ids_.size())
      throw FormatError("observation index out of range");
    if (obs.response > 1) throw FormatError("response must be 0 or 1, got " + std::to_string(obs.response));
  }

  if (!std::is_sorted(observations_.begin(), observations_.end(), cell_less))
    std::stable_sort(observations_.begin(), observations_.end(), cell_less);

  for (std::size_t k = 1; k < observations_.size(); ++k) {
    const Observation& prev = observations_[k - 1];
    const Observation& cur = observations_[k];
    if (prev.subject == cur.subject && prev.item == cur.item)
      throw FormatError("duplicate response for subject '" + subject_ids_[cur.subject] + "' and item '" +
                        item_ids_[cur.item] + "'");
  }

  subject_offsets_.assign(subject_ids_.size() + 1, 0);
  for (const Observation& obs : observations_) ++subject_offsets_[obs.subject + 1];
  std::partial_sum(subject_offsets_.begin(), subject_offsets_.end(), subject_offsets_.begin());
}

std::span<const Observation> ResponsePatternDataset::subject_observations(std::size_t subject) const {
  if (subject >= subject_count()) throw ContractError("subject index out of range");
  return std::span<const Observation>(observations_).subspan(
      subject_offsets_[subject], subject_offsets_[subject + 1] - subject_offsets_[subject]);
}

std::optional<std::size_t> ResponsePatternDataset::subject_index(std::string_view id) const {
  auto it = subject_lookup_.find(std::string(id));
  if (it == subject_lookup_.end()) return std::nullopt;
  return it->second;
}

std::optional<std::size_t> ResponsePatternDataset::item_index(std::string_view id) const {
  auto it = item_lookup_.find(std::string(id));
  if (it == item_lookup_.end()) return std::nullopt;
  return it->second;
}

std::vector<std::size_t> ResponsePatternDataset::item_exposure() const {
  std::vector<std::size_t> counts(item_count(), 0);
  for (const Observation& obs : observations_) ++counts[obs.item];
  return counts;
}

ResponsePatternDataset build(std::span<const SubjectRow> rows) {
  std::vector<std::string> subject_ids;
  std::vector<std::string> item_ids;
  std::unordered_map<std::string, std::size_t> item_lookup;
  std::unordered_map<std::string, std::size_t> subject_lookup;
  std::vector<Observation> observations;
  subject_ids.reserve(rows.size());

  for (const SubjectRow& row : rows) {
    const auto subject = static_cast<std::uint32_t>(subject_ids.size());
    if (!subject_lookup.emplace(row.subject_id, subject).second)
      throw FormatError("duplicate subject id '" + row.subject_id + "'");
    subject_ids.push_back(row.subject_id);

    for (const auto& [item_id, response] : row.responses) {
      if (response != 0 && response != 1)
        throw FormatError("subject '" + row.subject_id + "', item '" + item_id + "': response must be 0 or 1, got " +
                          std::to_string(response));
      auto [it, inserted] = item_lookup.emplace(item_id, item_ids.size());
      if (inserted) item_ids.push_back(item_id);
      observations.push_back({subject, static_cast<std::uint32_t>(it->second), static_cast<std::uint8_t>(response)});
    }
  }
  return ResponsePatternDataset(std::move(subject_ids), std::move(item_ids), std::move(observations));
}

// ---------------------------------------------------------------------------
// Simulation

SimulationResult simulate(const SimulationSpec& spec) {
  if (spec.subjects < 1 || spec.items < 1) throw DomainError("simulation needs at least one subject and one item");
  if (!(spec.missing_rate >= 0.0 && spec.missing_rate < 1.0))
    throw DomainError("missing rate must lie in [0, 1)");
  if (spec.fixed_guessing && !(*spec.fixed_guessing >= 0.0 && *spec.fixed_guessing <= 1.0))
    throw DomainError("fixed guessing must lie in [0, 1]");

  Rng rng(spec.seed);
  Rng param_rng = rng.split();
  Rng response_rng = rng.split();

  AbilityParams abilities;
  abilities.theta.resize(spec.subjects);
  for (double& t : abilities.theta) t = param_rng.normal();

  const ParameterSchema schema = schema_of(spec.kind);
  std::vector<double> b(spec.items), a, c, lambda;
  for (double& v : b) v = param_rng.normal();
  if (schema.discrimination) {
    a.resize(spec.items);
    for (double& v : a) v = std::exp(0.25 * param_rng.normal());
  }
  if (schema.guessing) {
    c.resize(spec.items);
    for (double& v : c) v = spec.fixed_guessing ? *spec.fixed_guessing : 0.3 * param_rng.uniform();
  }
  if (schema.feasibility) {
    lambda.resize(spec.items);
    for (double& v : lambda) v = 1.0 - 0.3 * param_rng.uniform();
  }
  ItemParams items(spec.kind, std::move(b), std::move(a), std::move(c), std::move(lambda));
  ResponsePatternDataset dataset = simulate_responses(items, abilities, spec.missing_rate, response_rng);
  return {std::move(dataset), std::move(items), std::move(abilities)};
}

ResponsePatternDataset simulate_responses(const ItemParams& items, const AbilityParams& abilities,
                                          double missing_rate, Rng& rng) {
  if (!(missing_rate >= 0.0 && missing_rate < 1.0)) throw DomainError("missing rate must lie in [0, 1)");
  const std::size_t n_subjects = abilities.size();
  const std::size_t n_items = items.size();

  std::vector<std::string> subject_ids(n_subjects), item_ids(n_items);
  for (std::size_t j = 0; j < n_subjects; ++j) subject_ids[j] = "s" + std::to_string(j);
  for (std::size_t i = 0; i < n_items; ++i) item_ids[i] = "q" + std::to_string(i);

  std::vector<ItemPoint> points(n_items);
  for (std::size_t i = 0; i < n_items; ++i) points[i] = items.at(i);

  std::vector<Observation> observations;
  observations.reserve(static_cast<std::size_t>(static_cast<double>(n_subjects * n_items) * (1.0 - missing_rate)) +
                       16);
  for (std::size_t j = 0; j < n_subjects; ++j) {
    const double theta = abilities.theta[j];
    for (std::size_t i = 0; i < n_items; ++i) {
      if (missing_rate > 0.0 && rng.uniform() < missing_rate) continue;
      const double p = icc(items.kind(), theta, points[i]);
      const auto y = static_cast<std::uint8_t>(rng.uniform() < p ? 1 : 0);
      observations.push_back({static_cast<std::uint32_t>(j), static_cast<std::uint32_t>(i), y});
    }
  }
  return ResponsePatternDataset(std::move(subject_ids), std::move(item_ids), std::move(observations));
}

// ---------------------------------------------------------------------------
// Batching

BatchPlan::BatchPlan(std::vector<std::uint32_t> order, std::size_t batch_size)
    : order_(std::move(order)), batch_size_(batch_size) {
  if (batch_size_ == 0) throw ContractError("batch size must be positive");
}

std::size_t BatchPlan::batch_count() const noexcept { return (order_.size() + batch_size_ - 1) / batch_size_; }

std::span<const std::uint32_t> BatchPlan::batch(std::size_t index) const {
  if (index >= batch_count()) throw ContractError("batch index out of range");
  const std::size_t begin = index * batch_size_;
  const std::size_t end = std::min(order_.size(), begin + batch_size_);
  return std::span<const std::uint32_t>(order_).subspan(begin, end - begin);
}

BatchPlan split_batches(const ResponsePatternDataset& dataset, std::size_t batch_size, Rng& rng) {
  if (batch_size == 0) throw ContractError("batch size must be positive");
  std::vector<std::uint32_t> order(dataset.observation_count());
  std::iota(order.begin(), order.end(), 0u);
  for (std::size_t k = order.size(); k > 1; --k) {
    const auto swap_with = static_cast<std::size_t>(rng.below(k));
    std::swap(order[k - 1], order[swap_with]);
  }
  return BatchPlan(std::move(order), batch_size);
}

}  // namespace irtforge
