// Models registered at startup in addition to the built-ins. Add a
// registrar here to make a new name available to `irt-forge train`.
#include "irtforge/registry.hpp"

namespace {

const irtforge::ModelRegistrar new1pl{irtforge::builtin_registration(irtforge::ModelKind::OneParam, "new1pl")};

}  // namespace
