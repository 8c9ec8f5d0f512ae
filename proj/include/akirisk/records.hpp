#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>

#include "akirisk/error.hpp"

namespace akirisk {

/// Event category. The numeric values double as type ids in the model (PAD is 0).
enum class Domain : std::uint8_t { dx = 1, proc = 2, med = 3 };

enum class Marker : std::uint8_t { egfr = 0, creatinine = 1, bun = 2 };

inline constexpr std::array<Marker, 3> kMarkers{Marker::egfr, Marker::creatinine, Marker::bun};

inline std::string_view domain_name(Domain d) {
  switch (d) {
    case Domain::dx: return "DX";
    case Domain::proc: return "PROC";
    case Domain::med: return "MED";
  }
  return "?";
}

inline Domain parse_domain(std::string_view s) {
  if (s == "DX") return Domain::dx;
  if (s == "PROC") return Domain::proc;
  if (s == "MED") return Domain::med;
  fail(Errc::schema_error, "unknown domain '" + std::string(s) + "'");
}

inline std::string_view marker_name(Marker m) {
  switch (m) {
    case Marker::egfr: return "eGFR";
    case Marker::creatinine: return "creatinine";
    case Marker::bun: return "BUN";
  }
  return "?";
}

inline Marker parse_marker(std::string_view s) {
  if (s == "eGFR" || s == "egfr") return Marker::egfr;
  if (s == "creatinine") return Marker::creatinine;
  if (s == "BUN" || s == "bun") return Marker::bun;
  fail(Errc::schema_error, "unknown marker '" + std::string(s) + "'");
}

/// +1 when an increase is good for kidney function (eGFR), -1 otherwise.
inline int protective_sign(Marker m) { return m == Marker::egfr ? 1 : -1; }

struct EventRecord {
  std::string patient_id;
  int day_offset = 0;
  Domain domain = Domain::dx;
  std::string code;

  friend bool operator==(const EventRecord&, const EventRecord&) = default;
};

struct LabRecord {
  std::string patient_id;
  int day_offset = 0;
  Marker marker = Marker::egfr;
  double value = 0.0;

  friend bool operator==(const LabRecord&, const LabRecord&) = default;
};

/// Demographics, only used for the cohort summary table.
struct PatientRecord {
  std::string patient_id;
  double age = 0.0;
};

struct CatalogEntry {
  std::string ingredient;
  std::string category;
  std::string code;
};

}  // namespace akirisk
