#pragma once

#include <string>

#include "wgm/symbolic.hpp"

namespace wgm {

// Small fully-analyzable model: every quantity used in tests is known in
// closed form (proportional weights make the branch Jacobian constant per
// element: J|omega_i = image_mass(i)/mass(i)).
SymbolicModel oracle_o1();

// Larger model with spread return times (1,2,5,9) and a proper subset image
// on two symbols; exercises tail behaviour and delta0 slack.
SymbolicModel oracle_o2();

// Resolves "oracle-o1"/"oracle-o2", otherwise treats the name as a config
// file path. Throws config_error if nothing matches.
SymbolicModel symbolic_model_by_name(const std::string& name);

// True when the name selects a constant-exponent interval map
// ("pm-const-<alpha>"); fills alpha on success.
bool parse_pm_const(const std::string& name, double& alpha);

}  // namespace wgm
