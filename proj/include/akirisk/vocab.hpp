#pragma once

// Train-split vocabulary over one shared id space (PAD=0, UNK=1) with per-domain type
// ids, and fixed-length sequence encoding.

#include <map>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "akirisk/catalog.hpp"
#include "akirisk/cohort.hpp"
#include "akirisk/error.hpp"

namespace akirisk {

inline constexpr int kPadId = 0;
inline constexpr int kUnkId = 1;
inline constexpr int kPadType = 0;
inline constexpr int kNumTypes = 4;  // PAD, DX, PROC, MED

class Vocab {
 public:
  Vocab() = default;

  /// Ids are assigned domain by domain (DX, PROC, MED) in lexicographic code order.
  static Vocab from_counts(const std::array<std::map<std::string, std::size_t>, 3>& counts, std::size_t min_count) {
    Vocab v;
    for (std::size_t d = 0; d < 3; ++d) {
      for (const auto& [code, n] : counts[d]) {
        if (n < min_count) continue;
        v.ids_[d].emplace(code, static_cast<int>(v.entries_.size()) + 2);
        v.entries_.emplace_back(static_cast<Domain>(d + 1), code);
      }
    }
    return v;
  }

  int id(Domain d, const std::string& code) const {
    const auto& m = ids_[static_cast<std::size_t>(d) - 1];
    auto it = m.find(code);
    return it == m.end() ? kUnkId : it->second;
  }

  /// Number of ids including the two reserved ones.
  std::size_t size() const noexcept { return entries_.size() + 2; }

  /// Inverse of id() for non-reserved ids.
  const std::pair<Domain, std::string>& decode(int id) const {
    if (id < 2 || static_cast<std::size_t>(id) >= size()) fail(Errc::invalid_config, "decode: reserved or out-of-range id");
    return entries_[static_cast<std::size_t>(id) - 2];
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["pad_id"] = kPadId;
    j["unk_id"] = kUnkId;
    auto arr = nlohmann::json::array();
    for (const auto& [d, code] : entries_) arr.push_back({domain_name(d), code});
    j["tokens"] = std::move(arr);
    return j;
  }

  static Vocab from_json(const nlohmann::json& j) {
    try {
      Vocab v;
      for (const auto& t : j.at("tokens")) {
        const Domain d = parse_domain(t.at(0).get<std::string>());
        const std::string code = t.at(1).get<std::string>();
        v.ids_[static_cast<std::size_t>(d) - 1].emplace(code, static_cast<int>(v.entries_.size()) + 2);
        v.entries_.emplace_back(d, code);
      }
      return v;
    } catch (const nlohmann::json::exception& e) {
      fail(Errc::schema_error, std::string("vocab: ") + e.what());
    }
  }

  friend bool operator==(const Vocab& a, const Vocab& b) { return a.entries_ == b.entries_; }

 private:
  std::array<std::map<std::string, int>, 3> ids_;
  std::vector<std::pair<Domain, std::string>> entries_;
};

inline Vocab build_vocabs(const std::vector<CohortRow>& train, std::size_t min_count = 1) {
  if (train.empty()) fail(Errc::empty_train_split, "cannot build a vocabulary from an empty training split");
  std::array<std::map<std::string, std::size_t>, 3> counts;
  for (const auto& row : train)
    for (const auto& t : row.tokens) ++counts[static_cast<std::size_t>(t.domain) - 1][t.code];
  return Vocab::from_counts(counts, min_count);
}

struct EncodedSequence {
  std::vector<int> token_ids;
  std::vector<int> type_ids;
  std::vector<int> position_ids;
  std::vector<int> days;
  std::vector<std::uint8_t> mask;
  std::size_t length = 0;  // number of real tokens

  std::size_t max_len() const noexcept { return token_ids.size(); }
  friend bool operator==(const EncodedSequence&, const EncodedSequence&) = default;
};

inline EncodedSequence empty_sequence(std::size_t max_len) {
  if (max_len == 0) fail(Errc::invalid_config, "max_len must be at least 1");
  EncodedSequence s;
  s.token_ids.assign(max_len, kPadId);
  s.type_ids.assign(max_len, kPadType);
  s.position_ids.resize(max_len);
  for (std::size_t i = 0; i < max_len; ++i) s.position_ids[i] = static_cast<int>(i);
  s.days.assign(max_len, 0);
  s.mask.assign(max_len, 0);
  return s;
}

/// Keeps the most recent max_len tokens in chronological order; PAD fills the tail.
inline EncodedSequence encode(const CohortRow& row, const Vocab& vocab, std::size_t max_len) {
  EncodedSequence s = empty_sequence(max_len);
  const std::size_t n = row.tokens.size();
  const std::size_t start = n > max_len ? n - max_len : 0;
  for (std::size_t i = start; i < n; ++i) {
    const auto& t = row.tokens[i];
    const std::size_t slot = i - start;
    s.token_ids[slot] = vocab.id(t.domain, t.code);
    s.type_ids[slot] = static_cast<int>(t.domain);
    s.days[slot] = t.day;
    s.mask[slot] = 1;
  }
  s.length = n - start;
  return s;
}

/// Vocabulary ids of the given codes that are MED tokens in the vocabulary.
inline std::vector<int> med_ids(const Vocab& vocab, const std::set<std::string>& codes) {
  std::vector<int> out;
  for (const auto& c : codes) {
    const int id = vocab.id(Domain::med, c);
    if (id != kUnkId) out.push_back(id);
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace akirisk
