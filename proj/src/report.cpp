#include "wgm/report.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "wgm/config.hpp"
#include "wgm/errors.hpp"

namespace wgm {

std::string format_double(double x) {
  char buf[40];
  auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, res.ptr);
}

std::string csv_table(const Config& cfg, const std::vector<std::string>& columns,
                      const std::vector<std::vector<double>>& rows) {
  std::ostringstream out;
  out << "# version: " << kVersion << "\n";
  out << "# config_digest: " << cfg.digest_hex() << "\n";
  for (size_t i = 0; i < columns.size(); ++i) out << (i ? "," : "") << columns[i];
  out << "\n";
  for (const auto& row : rows) {
    for (size_t i = 0; i < row.size(); ++i) out << (i ? "," : "") << format_double(row[i]);
    out << "\n";
  }
  return out.str();
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw config_error("cannot open for writing: " + path);
  f << text;
  if (!f) throw config_error("write failed: " + path);
}

}  // namespace wgm
