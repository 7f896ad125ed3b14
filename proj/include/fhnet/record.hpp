#pragma once

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace fhnet {

// Multi-lead abdominal recording with an optional reference fetal channel.
struct AecgRecord {
  std::vector<std::vector<double>> leads;  // [lead][sample]
  std::optional<std::vector<double>> fecg_ref;
  double sample_rate_hz = 250.0;
  nlohmann::json provenance = nlohmann::json::object();
  std::vector<std::string> preprocessing;  // stage labels, in application order

  std::size_t lead_count() const { return leads.size(); }
  std::size_t length() const { return leads.empty() ? 0 : leads.front().size(); }
  // Throws std::invalid_argument on ragged leads, a bad sample rate or a mismatched reference.
  void validate() const;
};

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& path, std::size_t line, const std::string& what);
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shortest decimal text that round-trips to the same double.
std::string format_double(double v);

// CSV: header `t,lead_1,...,lead_L[,fecg_ref]`, one row per sample, t in seconds.
// Sidecar JSON (same stem, .json): sample_rate_hz, lead_count, has_reference,
// provenance, preprocessing.
std::filesystem::path sidecar_path(const std::filesystem::path& csv);
void write_record(const std::filesystem::path& csv, const AecgRecord& record);
AecgRecord read_record(const std::filesystem::path& csv);

// `path` may be a CSV file or a directory (all *.csv, sorted by name).
std::vector<std::filesystem::path> list_record_files(const std::filesystem::path& path);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace fhnet
