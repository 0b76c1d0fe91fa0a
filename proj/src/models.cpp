#include "wgm/models.hpp"

#include <charconv>
#include <filesystem>

#include "wgm/config.hpp"
#include "wgm/errors.hpp"

namespace wgm {

SymbolicModel oracle_o1() {
  SymbolicModel m;
  m.name = "oracle-o1";
  m.n_symbols = 3;
  m.images = {{0, 1}, {0, 1, 2}, {0, 1}};
  m.return_time = {1, 2, 3};
  m.element_mass = {0.5, 0.25, 0.25};
  m.edge_weight = SymbolicModel::proportional_weights(m.images, m.element_mass);
  m.beta = 0.5;
  m.gibbs_constant = 1.0;
  m.delta0 = 0.75;
  m.validate();
  return m;
}

SymbolicModel oracle_o2() {
  SymbolicModel m;
  m.name = "oracle-o2";
  m.n_symbols = 4;
  m.images = {{0, 1, 2}, {0, 1, 2, 3}, {1, 2, 3}, {0, 1}};
  m.return_time = {1, 2, 5, 9};
  m.element_mass = {0.4, 0.3, 0.2, 0.1};
  m.edge_weight = SymbolicModel::proportional_weights(m.images, m.element_mass);
  m.beta = 0.5;
  m.gibbs_constant = 1.0;
  m.delta0 = 0.6;
  m.validate();
  return m;
}

SymbolicModel symbolic_model_by_name(const std::string& name) {
  if (name == "oracle-o1") return oracle_o1();
  if (name == "oracle-o2") return oracle_o2();
  if (std::filesystem::exists(name)) return SymbolicModel::from_config(Config::parse_file(name));
  throw config_error("unknown model '" + name + "' (not a catalog name or a config file)");
}

bool parse_pm_const(const std::string& name, double& alpha) {
  const std::string prefix = "pm-const-";
  if (name.rfind(prefix, 0) != 0) return false;
  const char* first = name.data() + prefix.size();
  const char* last = name.data() + name.size();
  auto [p, ec] = std::from_chars(first, last, alpha);
  if (ec != std::errc{} || p != last) throw config_error("bad exponent in model name '" + name + "'");
  if (!(alpha > 0 && alpha < 1))
    throw config_error("exponent in '" + name + "' must lie in (0,1)");
  return true;
}

}  // namespace wgm
