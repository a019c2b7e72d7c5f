#pragma once

#include <functional>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "irtforge/models.hpp"
#include "irtforge/vi.hpp"

namespace irtforge {

/// A named model the CLI can train.
///
/// `family` selects the likelihood kernel, parameter schema and constraint
/// transforms used by both estimators; `priors` are the variational prior
/// defaults; `icc` evaluates the curve for plotting and defaults to the
/// family's ICC.
struct ModelRegistration {
  std::string name;
  ModelKind family = ModelKind::OneParam;
  PriorSpec priors;
  std::function<double(double theta, const ItemPoint& item)> icc;
  std::string description;

  ParameterSchema schema() const { return schema_of(family); }
};

/// Registration for a built-in family under `name` (defaults to "1pl" etc.).
ModelRegistration builtin_registration(ModelKind family, std::string name = {});

class ModelRegistry {
 public:
  /// A registry holding "1pl", "2pl", "3pl" and "4pl".
  static ModelRegistry with_builtins();

  /// Throws RegistrationError when the name is taken or not a lowercase
  /// identifier.
  void register_model(ModelRegistration registration);

  /// Case-insensitive. Throws NotFoundError listing the registered names.
  const ModelRegistration& lookup(std::string_view name) const;
  bool contains(std::string_view name) const;

  /// Sorted.
  std::vector<std::string> names() const;

 private:
  std::map<std::string, ModelRegistration, std::less<>> models_;
};

/// Process-wide registry used by the CLI. Populate it at startup, before
/// any concurrent reads.
ModelRegistry& global_registry();

/// Registers a model in the global registry when constructed; meant for
/// namespace-scope statics:
///
///   static const irtforge::ModelRegistrar kNew1pl{builtin_registration(ModelKind::OneParam, "new1pl")};
struct ModelRegistrar {
  explicit ModelRegistrar(ModelRegistration registration);
};

}  // namespace irtforge
