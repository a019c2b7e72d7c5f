#include "irtforge/registry.hpp"

#include <algorithm>
#include <cctype>

#include "irtforge/error.hpp"

namespace irtforge {

namespace {

std::string lowercase(std::string_view name) {
  std::string out(name);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
  return out;
}

bool valid_name(std::string_view name) {
  if (name.empty()) return false;
  return std::all_of(name.begin(), name.end(), [](unsigned char ch) {
    return std::islower(ch) || std::isdigit(ch) || ch == '_' || ch == '-';
  });
}

}  // namespace

ModelRegistration builtin_registration(ModelKind family, std::string name) {
  ModelRegistration reg;
  reg.name = name.empty() ? std::string(to_string(family)) : std::move(name);
  reg.family = family;
  reg.icc = [family](double theta, const ItemPoint& item) { return icc(family, theta, item); };
  switch (family) {
    case ModelKind::OneParam:
      reg.description = "one-parameter logistic (Rasch)";
      break;
    case ModelKind::TwoParam:
      reg.description = "two-parameter logistic";
      break;
    case ModelKind::ThreeParam:
      reg.description = "three-parameter logistic with guessing";
      break;
    case ModelKind::FourParamFeasibility:
      reg.description = "two-parameter logistic with feasibility ceiling";
      break;
  }
  return reg;
}

ModelRegistry ModelRegistry::with_builtins() {
  ModelRegistry registry;
  for (ModelKind kind : {ModelKind::OneParam, ModelKind::TwoParam, ModelKind::ThreeParam,
                         ModelKind::FourParamFeasibility}) {
    registry.register_model(builtin_registration(kind));
  }
  return registry;
}

void ModelRegistry::register_model(ModelRegistration registration) {
  if (!valid_name(registration.name))
    throw RegistrationError("model name '" + registration.name +
                            "' must be non-empty lowercase letters, digits, '_' or '-'");
  if (!registration.icc) {
    const ModelKind family = registration.family;
    registration.icc = [family](double theta, const ItemPoint& item) { return icc(family, theta, item); };
  }
  const std::string name = registration.name;
  if (!models_.emplace(name, std::move(registration)).second)
    throw RegistrationError("model '" + name + "' is already registered");
}

const ModelRegistration& ModelRegistry::lookup(std::string_view name) const {
  auto it = models_.find(lowercase(name));
  if (it == models_.end()) {
    std::string available;
    for (const auto& [key, reg] : models_) available += (available.empty() ? "" : ", ") + key;
    throw NotFoundError("unknown model '" + std::string(name) + "'; registered models: " + available);
  }
  return it->second;
}

bool ModelRegistry::contains(std::string_view name) const { return models_.contains(lowercase(name)); }

std::vector<std::string> ModelRegistry::names() const {
  std::vector<std::string> out;
  out.reserve(models_.size());
  for (const auto& [key, reg] : models_) out.push_back(key);
  return out;
}

ModelRegistry& global_registry() {
  static ModelRegistry registry = ModelRegistry::with_builtins();
  return registry;
}

ModelRegistrar::ModelRegistrar(ModelRegistration registration) {
  global_registry().register_model(std::move(registration));
}

}  // namespace irtforge
