#pragma once

#include <string>
#include <vector>

namespace wgm {

class Config;

inline constexpr const char* kVersion = "wgmlab 0.1.0";

// shortest exact decimal round-trip, locale-independent
std::string format_double(double x);

// CSV with `# key: value` comment headers carrying the code version and the
// config fingerprint, so an output file identifies the run that made it.
// Byte-identical for identical inputs.
std::string csv_table(const Config& cfg, const std::vector<std::string>& columns,
                      const std::vector<std::vector<double>>& rows);

void write_text_file(const std::string& path, const std::string& text);

}  // namespace wgm
