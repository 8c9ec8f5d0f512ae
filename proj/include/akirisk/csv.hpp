#pragma once

// Plain comma-separated tables. Fields never contain commas or quotes (codes are
// opaque tokens), so no quoting is supported. Lines starting with '#' carry run
// metadata and are skipped on read.

#include <charconv>
#include <cmath>
#include <cstdlib>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "akirisk/error.hpp"
#include "akirisk/records.hpp"

namespace akirisk {

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(std::string_view name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    fail(Errc::schema_error, "missing column '" + std::string(name) + "'");
  }
};

inline std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(',', start);
    out.emplace_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline CsvTable parse_csv(std::istream& in, const std::string& what) {
  CsvTable t;
  std::string line;
  bool have_header = false;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    auto fields = split_csv_line(line);
    if (!have_header) {
      t.header = std::move(fields);
      have_header = true;
      continue;
    }
    if (fields.size() != t.header.size())
      fail(Errc::schema_error, what + ": row has " + std::to_string(fields.size()) + " fields, header has " +
                                   std::to_string(t.header.size()));
    t.rows.push_back(std::move(fields));
  }
  if (!have_header) fail(Errc::schema_error, what + ": missing header row");
  return t;
}

inline CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(Errc::missing_input, "cannot open " + path.string());
  return parse_csv(in, path.string());
}

inline int parse_int(const std::string& s, const std::string& what) {
  int v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) fail(Errc::schema_error, what + ": not an integer '" + s + "'");
  return v;
}

inline double parse_double(const std::string& s, const std::string& what) {
  // from_chars for double is unavailable in libstdc++ 11, strtod is locale-bound but
  // the pipeline never changes the C locale.
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size()) fail(Errc::schema_error, what + ": not a number '" + s + "'");
  return v;
}

/// Shortest round-trip-stable decimal form used everywhere output must be byte-stable.
inline std::string fmt(double v, int digits = 10) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", digits, v);
  return buf;
}

/// Writes via a sibling temp file and rename so readers never see a partial file.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(Errc::missing_input, "cannot write " + tmp.string());
    out << content;
    if (!out) fail(Errc::missing_input, "write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(Errc::missing_input, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::vector<EventRecord> events_from_csv(const CsvTable& t) {
  const auto pid = t.column("patient_id"), day = t.column("day_offset"), dom = t.column("domain"), code = t.column("code");
  std::vector<EventRecord> out;
  out.reserve(t.rows.size());
  for (const auto& r : t.rows) out.push_back({r[pid], parse_int(r[day], "events.day_offset"), parse_domain(r[dom]), r[code]});
  return out;
}

inline std::vector<LabRecord> labs_from_csv(const CsvTable& t) {
  const auto pid = t.column("patient_id"), day = t.column("day_offset"), mk = t.column("marker"), val = t.column("value");
  std::vector<LabRecord> out;
  out.reserve(t.rows.size());
  for (const auto& r : t.rows) {
    LabRecord rec{r[pid], parse_int(r[day], "labs.day_offset"), parse_marker(r[mk]), parse_double(r[val], "labs.value")};
    if (!std::isfinite(rec.value)) fail(Errc::schema_error, "labs.value must be finite");
    out.push_back(std::move(rec));
  }
  return out;
}

inline std::vector<CatalogEntry> catalog_from_csv(const CsvTable& t) {
  const auto ing = t.column("ingredient"), cat = t.column("category"), code = t.column("code");
  std::vector<CatalogEntry> out;
  for (const auto& r : t.rows) out.push_back({r[ing], r[cat], r[code]});
  return out;
}

inline std::vector<PatientRecord> patients_from_csv(const CsvTable& t) {
  const auto pid = t.column("patient_id"), age = t.column("age");
  std::vector<PatientRecord> out;
  for (const auto& r : t.rows) out.push_back({r[pid], parse_double(r[age], "patients.age")});
  return out;
}

inline std::string events_to_csv(const std::vector<EventRecord>& events, const std::string& meta = {}) {
  std::string s = meta + "patient_id,day_offset,domain,code\n";
  for (const auto& e : events) {
    s += e.patient_id;
    s += ',';
    s += std::to_string(e.day_offset);
    s += ',';
    s += domain_name(e.domain);
    s += ',';
    s += e.code;
    s += '\n';
  }
  return s;
}

inline std::string labs_to_csv(const std::vector<LabRecord>& labs, const std::string& meta = {}) {
  std::string s = meta + "patient_id,day_offset,marker,value\n";
  for (const auto& l : labs) {
    s += l.patient_id + ',' + std::to_string(l.day_offset) + ',' + std::string(marker_name(l.marker)) + ',' + fmt(l.value, 8) + '\n';
  }
  return s;
}

inline std::string catalog_to_csv(const std::vector<CatalogEntry>& entries, const std::string& meta = {}) {
  std::string s = meta + "ingredient,category,code\n";
  for (const auto& e : entries) s += e.ingredient + ',' + e.category + ',' + e.code + '\n';
  return s;
}

inline std::string patients_to_csv(const std::vector<PatientRecord>& patients, const std::string& meta = {}) {
  std::string s = meta + "patient_id,age\n";
  for (const auto& p : patients) s += p.patient_id + ',' + fmt(p.age, 4) + '\n';
  return s;
}

}  // namespace akirisk
