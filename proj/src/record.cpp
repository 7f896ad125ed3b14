#include "fhnet/record.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace fhnet {

namespace fs = std::filesystem;

void AecgRecord::validate() const {
  if (!(sample_rate_hz > 0.0) || !std::isfinite(sample_rate_hz))
    throw std::invalid_argument("sample_rate_hz must be positive");
  if (leads.empty()) throw std::invalid_argument("record has no leads");
  const std::size_t n = leads.front().size();
  if (n == 0) throw std::invalid_argument("record has no samples");
  for (const auto& l : leads)
    if (l.size() != n) throw std::invalid_argument("leads have different lengths");
  if (fecg_ref && fecg_ref->size() != n) throw std::invalid_argument("reference length differs from leads");
}

ParseError::ParseError(const std::string& path, std::size_t line, const std::string& what)
    : std::runtime_error(path + ":" + std::to_string(line) + ": " + what), line_(line) {}

std::string format_double(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

fs::path sidecar_path(const fs::path& csv) {
  fs::path p = csv;
  p.replace_extension(".json");
  return p;
}

std::string read_text_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

void write_record(const fs::path& csv, const AecgRecord& record) {
  record.validate();
  std::string text;
  text.reserve(record.length() * (record.lead_count() + 2) * 20);
  text += "t";
  for (std::size_t i = 0; i < record.lead_count(); ++i) text += ",lead_" + std::to_string(i + 1);
  if (record.fecg_ref) text += ",fecg_ref";
  text += '\n';
  for (std::size_t n = 0; n < record.length(); ++n) {
    text += format_double(static_cast<double>(n) / record.sample_rate_hz);
    for (const auto& lead : record.leads) {
      text += ',';
      text += format_double(lead[n]);
    }
    if (record.fecg_ref) {
      text += ',';
      text += format_double((*record.fecg_ref)[n]);
    }
    text += '\n';
  }
  write_text_file(csv, text);

  nlohmann::ordered_json side;
  side["sample_rate_hz"] = record.sample_rate_hz;
  side["lead_count"] = record.lead_count();
  side["has_reference"] = record.fecg_ref.has_value();
  side["provenance"] = record.provenance;
  side["preprocessing"] = record.preprocessing;
  write_text_file(sidecar_path(csv), side.dump(2) + "\n");
}

namespace {

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == ' ')) s.remove_suffix(1);
  while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
  return s;
}

}  // namespace

AecgRecord read_record(const fs::path& csv) {
  const std::string path = csv.string();
  const std::string text = read_text_file(csv);
  std::string_view rest(text);
  std::size_t line_no = 0;
  auto next_line = [&](std::string_view& line) {
    if (rest.empty()) return false;
    const auto nl = rest.find('\n');
    line = trim(rest.substr(0, nl));
    rest = nl == std::string_view::npos ? std::string_view() : rest.substr(nl + 1);
    ++line_no;
    return true;
  };

  std::string_view line;
  if (!next_line(line)) throw ParseError(path, 1, "empty file");
  const auto header = split_commas(line);
  if (header.size() < 2 || trim(header[0]) != "t") throw ParseError(path, 1, "header must start with 't,lead_1'");
  std::size_t leads = 0;
  bool has_ref = false;
  for (std::size_t c = 1; c < header.size(); ++c) {
    const auto name = trim(header[c]);
    if (name == "lead_" + std::to_string(leads + 1) && !has_ref) {
      ++leads;
    } else if (name == "fecg_ref" && c + 1 == header.size()) {
      has_ref = true;
    } else {
      throw ParseError(path, 1, "unexpected column '" + std::string(name) + "'");
    }
  }
  if (leads == 0) throw ParseError(path, 1, "no lead columns");

  AecgRecord rec;
  rec.leads.assign(leads, {});
  if (has_ref) rec.fecg_ref.emplace();
  std::vector<double> times;
  while (next_line(line)) {
    if (line.empty()) continue;
    const auto cells = split_commas(line);
    if (cells.size() != header.size())
      throw ParseError(path, line_no,
                       "expected " + std::to_string(header.size()) + " columns, got " + std::to_string(cells.size()));
    std::vector<double> vals(cells.size());
    for (std::size_t c = 0; c < cells.size(); ++c) {
      const auto cell = trim(cells[c]);
      auto res = std::from_chars(cell.data(), cell.data() + cell.size(), vals[c]);
      if (res.ec != std::errc() || res.ptr != cell.data() + cell.size())
        throw ParseError(path, line_no, "not a number: '" + std::string(cell) + "'");
      if (!std::isfinite(vals[c])) throw ParseError(path, line_no, "non-finite value");
    }
    if (!times.empty() && !(vals[0] > times.back())) throw ParseError(path, line_no, "t is not strictly increasing");
    times.push_back(vals[0]);
    for (std::size_t l = 0; l < leads; ++l) rec.leads[l].push_back(vals[1 + l]);
    if (has_ref) rec.fecg_ref->push_back(vals.back());
  }
  if (times.empty()) throw ParseError(path, line_no, "no samples");

  const fs::path side = sidecar_path(csv);
  if (fs::exists(side)) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(read_text_file(side));
    } catch (const nlohmann::json::exception& e) {
      throw IoError("bad sidecar " + side.string() + ": " + e.what());
    }
    rec.sample_rate_hz = j.at("sample_rate_hz").get<double>();
    if (j.contains("provenance")) rec.provenance = j["provenance"];
    if (j.contains("preprocessing")) rec.preprocessing = j["preprocessing"].get<std::vector<std::string>>();
  } else if (times.size() >= 2) {
    rec.sample_rate_hz = static_cast<double>(times.size() - 1) / (times.back() - times.front());
  } else {
    throw IoError("cannot infer sample rate for " + path + " (no sidecar, single sample)");
  }
  rec.validate();
  return rec;
}

std::vector<fs::path> list_record_files(const fs::path& path) {
  if (!fs::exists(path)) throw IoError("no such file or directory: " + path.string());
  if (!fs::is_directory(path)) return {path};
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(path))
    if (e.is_regular_file() && e.path().extension() == ".csv") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw IoError("no .csv records in " + path.string());
  return files;
}

}  // namespace fhnet
