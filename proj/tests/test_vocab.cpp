#include <gtest/gtest.h>

#include "akirisk/synthgen.hpp"
#include "akirisk/vocab.hpp"

namespace akirisk {
namespace {

CohortRow row_with(std::vector<Token> tokens) {
  CohortRow r;
  r.patient_id = "P";
  r.tokens = std::move(tokens);
  return r;
}

std::vector<CohortRow> random_rows(Rng& rng, std::size_t n, int codes_per_domain) {
  std::vector<CohortRow> rows;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<Token> toks;
    const int len = static_cast<int>(rng() % 12);
    for (int k = 0; k < len; ++k) {
      const auto d = static_cast<Domain>(1 + rng() % 3);
      toks.push_back({static_cast<int>(rng() % 90), d, std::string(domain_name(d)) + std::to_string(rng() % codes_per_domain)});
    }
    std::sort(toks.begin(), toks.end());
    rows.push_back(row_with(std::move(toks)));
  }
  return rows;
}

TEST(BuildVocabs, TestOnlyTokenIsUnknown) {
  std::vector<CohortRow> train{row_with({{0, Domain::dx, "A"}, {1, Domain::med, "M"}})};
  const Vocab v = build_vocabs(train);
  EXPECT_EQ(v.id(Domain::dx, "unseen"), kUnkId);
  EXPECT_NE(v.id(Domain::dx, "A"), kUnkId);
  // Same code string in another domain is a different token.
  EXPECT_EQ(v.id(Domain::proc, "A"), kUnkId);
}

TEST(BuildVocabs, SizeIsDistinctTokensPlusReserved) {
  std::vector<CohortRow> train{row_with({{0, Domain::dx, "A"}, {1, Domain::dx, "A"}, {2, Domain::proc, "B"}}),
                               row_with({{0, Domain::med, "C"}, {3, Domain::dx, "D"}})};
  EXPECT_EQ(build_vocabs(train, 1).size(), 4u + 2u);
  EXPECT_EQ(build_vocabs(train, 2).size(), 1u + 2u);
}

TEST(BuildVocabs, DeterministicIds) {
  Rng rng(3);
  const auto rows = random_rows(rng, 50, 20);
  EXPECT_EQ(build_vocabs(rows), build_vocabs(rows));
  EXPECT_EQ(build_vocabs(rows).to_json().dump(), build_vocabs(rows).to_json().dump());
}

TEST(BuildVocabs, EmptyTrainSplit) {
  try {
    build_vocabs({});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::empty_train_split);
  }
}

TEST(BuildVocabs, JsonRoundTrip) {
  Rng rng(4);
  const Vocab v = build_vocabs(random_rows(rng, 30, 10));
  EXPECT_EQ(Vocab::from_json(nlohmann::json::parse(v.to_json().dump())), v);
}

TEST(Encode, PadsShortSequences) {
  const auto row = row_with({{0, Domain::dx, "A"}, {1, Domain::proc, "B"}, {2, Domain::med, "C"}});
  const auto s = encode(row, build_vocabs({row}), 5);
  EXPECT_EQ(s.mask, (std::vector<std::uint8_t>{1, 1, 1, 0, 0}));
  EXPECT_EQ(s.type_ids, (std::vector<int>{1, 2, 3, 0, 0}));
  EXPECT_EQ(s.token_ids[3], kPadId);
  EXPECT_EQ(s.length, 3u);
}

TEST(Encode, TruncatesToMostRecent) {
  std::vector<Token> toks;
  for (int i = 0; i < 7; ++i) toks.push_back({i * 10, Domain::dx, "T" + std::to_string(i)});
  const auto row = row_with(toks);
  const Vocab v = build_vocabs({row});
  const auto s = encode(row, v, 5);
  EXPECT_EQ(s.length, 5u);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(v.decode(s.token_ids[i]).second, "T" + std::to_string(i + 2));
  EXPECT_EQ(s.days, (std::vector<int>{20, 30, 40, 50, 60}));
}

TEST(Encode, EmptySequenceIsAllPad) {
  const auto s = encode(row_with({}), build_vocabs({row_with({{0, Domain::dx, "A"}})}), 4);
  EXPECT_EQ(s.mask, (std::vector<std::uint8_t>(4, 0)));
  EXPECT_EQ(s.token_ids, (std::vector<int>(4, kPadId)));
  EXPECT_EQ(s.length, 0u);
}

TEST(EncodeProperty, DecodeInvertsKeptTokensAndSuffixIsKept) {
  Rng rng(5);
  auto rows = random_rows(rng, 200, 15);
  std::vector<CohortRow> train(rows.begin(), rows.begin() + 100), test(rows.begin() + 100, rows.end());
  const Vocab v = build_vocabs(train);
  const std::size_t size_before = v.size();
  for (const auto& r : rows) {
    const std::size_t max_len = 1 + rng() % 10;
    const auto s = encode(r, v, max_len);
    ASSERT_EQ(s.max_len(), max_len);
    const std::size_t start = r.tokens.size() - s.length;
    for (std::size_t i = 0; i < s.length; ++i) {
      const auto& t = r.tokens[start + i];
      if (s.token_ids[i] != kUnkId) {
        EXPECT_EQ(v.decode(s.token_ids[i]), std::make_pair(t.domain, t.code));
      }
      EXPECT_EQ(s.days[i], t.day);
      if (i > 0) EXPECT_LE(s.days[i - 1], s.days[i]);
    }
    for (std::size_t i = 0; i < max_len; ++i) EXPECT_EQ(s.mask[i], i < s.length ? 1 : 0);
  }
  EXPECT_EQ(v.size(), size_before);
}

TEST(Catalog, IngredientCodes) {
  MedCatalog cat({{"lisinopril", "ACE/ARB", "M1"}, {"lisinopril", "ACE/ARB", "M2"}, {"losartan", "ACE/ARB", "M3"},
                  {"furosemide", "loop diuretic", "M4"}});
  EXPECT_EQ(cat.ingredient_codes("lisinopril"), (std::set<std::string>{"M1", "M2"}));
  EXPECT_EQ(cat.category_codes("ACE/ARB"), (std::set<std::string>{"M1", "M2", "M3"}));
  EXPECT_EQ(cat.codes_for("loop diuretic"), (std::set<std::string>{"M4"}));
  try {
    cat.ingredient_codes("foo");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::unknown_ingredient);
  }
}

// Category union checked against a direct scan of the generated catalog rows.
TEST(Catalog, CategoryUnionMatchesRows) {
  GenConfig c;
  const MedCatalog cat(catalog_entries(c));
  for (const auto& category : cat.categories()) {
    std::set<std::string> expect;
    for (const auto& e : cat.entries())
      if (e.category == category) expect.insert(e.code);
    EXPECT_EQ(cat.category_codes(category), expect);
  }
}

TEST(Catalog, RejectsIngredientInTwoCategories) {
  EXPECT_THROW(MedCatalog({{"a", "x", "M1"}, {"a", "y", "M2"}}), Error);
}

}  // namespace
}  // namespace akirisk
