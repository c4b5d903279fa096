#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace rfp {

/// Shortest decimal string that round-trips to the same double (std::to_chars).
/// All CSV output goes through this so reruns are byte-identical.
std::string format_double(double v);

/// FNV-1a 64-bit hash, used for output determinism fingerprints.
std::uint64_t fnv1a64(std::string_view bytes);
std::string hex64(std::uint64_t v);

void write_text_file(const std::filesystem::path& path, std::string_view content);
std::string read_text_file(const std::filesystem::path& path);
nlohmann::json load_json_file(const std::filesystem::path& path);
void ensure_directory(const std::filesystem::path& dir);

/// Row-oriented CSV builder with deterministic float formatting.
class CsvBuilder {
 public:
  explicit CsvBuilder(std::vector<std::string> header);
  void begin_row();
  void add(double v);
  void add(std::int64_t v);
  void add(const std::string& v);
  void end_row();
  const std::string& str() const { return out_; }

 private:
  std::string out_;
  std::size_t columns_ = 0;
  std::size_t in_row_ = 0;
  bool row_open_ = false;
};

}  // namespace rfp
