#pragma once

#include <algorithm>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "akirisk/error.hpp"
#include "akirisk/records.hpp"

namespace akirisk {

/// Ingredient -> medication codes and ingredient -> category, built from catalog rows.
class MedCatalog {
 public:
  MedCatalog() = default;

  explicit MedCatalog(std::vector<CatalogEntry> entries) : entries_(std::move(entries)) {
    for (const auto& e : entries_) {
      if (e.ingredient.empty() || e.code.empty()) fail(Errc::schema_error, "catalog rows need ingredient and code");
      auto [it, inserted] = category_.emplace(e.ingredient, e.category);
      if (!inserted && it->second != e.category)
        fail(Errc::schema_error, "ingredient '" + e.ingredient + "' listed under two categories");
      codes_[e.ingredient].insert(e.code);
      ingredient_of_code_.emplace(e.code, e.ingredient);
    }
  }

  const std::vector<CatalogEntry>& entries() const noexcept { return entries_; }
  bool empty() const noexcept { return codes_.empty(); }

  std::vector<std::string> ingredients() const {
    std::vector<std::string> out;
    for (const auto& [name, _] : codes_) out.push_back(name);
    return out;
  }

  std::vector<std::string> categories() const {
    std::set<std::string> s;
    for (const auto& [_, cat] : category_) s.insert(cat);
    return {s.begin(), s.end()};
  }

  bool has_ingredient(const std::string& name) const { return codes_.count(name) > 0; }
  bool has_category(const std::string& name) const {
    return std::any_of(category_.begin(), category_.end(), [&](const auto& kv) { return kv.second == name; });
  }

  const std::string& category(const std::string& ingredient) const {
    auto it = category_.find(ingredient);
    if (it == category_.end()) fail(Errc::unknown_ingredient, "unknown ingredient '" + ingredient + "'");
    return it->second;
  }

  const std::set<std::string>& ingredient_codes(const std::string& ingredient) const {
    auto it = codes_.find(ingredient);
    if (it == codes_.end()) fail(Errc::unknown_ingredient, "unknown ingredient '" + ingredient + "'");
    return it->second;
  }

  /// Union of member ingredients' codes.
  std::set<std::string> category_codes(const std::string& cat) const {
    std::set<std::string> out;
    for (const auto& [ing, c] : category_)
      if (c == cat) out.insert(codes_.at(ing).begin(), codes_.at(ing).end());
    if (out.empty()) fail(Errc::unknown_ingredient, "unknown category '" + cat + "'");
    return out;
  }

  /// Accepts an ingredient name first, then a category name.
  std::set<std::string> codes_for(const std::string& name) const {
    if (has_ingredient(name)) return ingredient_codes(name);
    return category_codes(name);
  }

  const std::string* ingredient_of(const std::string& code) const {
    auto it = ingredient_of_code_.find(code);
    return it == ingredient_of_code_.end() ? nullptr : &it->second;
  }

 private:
  std::vector<CatalogEntry> entries_;
  std::map<std::string, std::set<std::string>> codes_;
  std::map<std::string, std::string> category_;
  std::map<std::string, std::string> ingredient_of_code_;
};

}  // namespace akirisk
