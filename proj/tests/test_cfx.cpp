#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "akirisk/cfx.hpp"
#include "akirisk/train.hpp"

namespace akirisk {
namespace {

constexpr int kMed = static_cast<int>(Domain::med);

EncodedSequence seq_of(std::size_t max_len, std::vector<std::pair<int, int>> toks) {  // (id, type)
  EncodedSequence s = empty_sequence(max_len);
  for (std::size_t i = 0; i < toks.size(); ++i) {
    s.token_ids[i] = toks[i].first;
    s.type_ids[i] = toks[i].second;
    s.days[i] = static_cast<int>(i * 10);
    s.mask[i] = 1;
  }
  s.length = toks.size();
  return s;
}

TEST(ApplyEdit, RemoveTurnsEveryTargetIntoPad) {
  const auto s = seq_of(6, {{5, 1}, {9, kMed}, {7, 2}, {9, kMed}});
  const auto r = apply_edit(s, {{9}, EditMode::remove}, 90);
  EXPECT_EQ(r.seq.token_ids, (std::vector<int>{5, 0, 7, 0, 0, 0}));
  EXPECT_EQ(r.seq.mask, (std::vector<std::uint8_t>{1, 0, 1, 0, 0, 0}));
  EXPECT_EQ(r.seq.length, 2u);
  EXPECT_EQ(r.seq.days[0], s.days[0]);
  EXPECT_EQ(r.seq.days[2], s.days[2]);
  EXPECT_FALSE(r.dropped_oldest);
}

TEST(ApplyEdit, IdentityCases) {
  const auto s = seq_of(6, {{5, 1}, {9, kMed}});
  EXPECT_EQ(apply_edit(s, {{9, 11}, EditMode::insert}, 90).seq, s);
  EXPECT_EQ(apply_edit(s, {{11}, EditMode::remove}, 90).seq, s);
}

TEST(ApplyEdit, SameIdWithAnotherTypeIsNotATarget) {
  const auto s = seq_of(4, {{9, 1}});
  EXPECT_EQ(apply_edit(s, {{9}, EditMode::remove}, 90).seq, s);
}

TEST(ApplyEdit, InsertAppendsLowestIdOnLastDay) {
  std::array<std::map<std::string, std::size_t>, 3> counts;
  counts[2] = {{"MED_X", 1}, {"MED_Y", 1}};
  const Vocab v = Vocab::from_counts(counts, 1);
  const ExposureEdit edit = make_edit(v, {"MED_Y", "MED_X", "MED_NOT_IN_VOCAB"}, EditMode::insert);
  ASSERT_EQ(edit.target_ids.size(), 2u);
  const auto s = seq_of(5, {{5, 1}, {6, 2}});
  const auto r = apply_edit(s, edit, 90);
  EXPECT_EQ(r.seq.token_ids[2], v.id(Domain::med, "MED_X"));
  EXPECT_EQ(r.seq.type_ids[2], kMed);
  EXPECT_EQ(r.seq.days[2], 89);
  EXPECT_EQ(r.seq.mask[2], 1);
  EXPECT_EQ(r.seq.length, 3u);
  EXPECT_FALSE(r.dropped_oldest);
}

TEST(ApplyEdit, InsertAfterHolesUsesSlotAfterLastLiveToken) {
  auto s = seq_of(5, {{5, 1}, {9, kMed}, {6, 2}});
  s = apply_edit(s, {{9}, EditMode::remove}, 90).seq;
  const auto r = apply_edit(s, {{9}, EditMode::insert}, 90);
  EXPECT_EQ(r.seq.token_ids, (std::vector<int>{5, 0, 6, 9, 0}));
  EXPECT_EQ(r.seq.length, 3u);
}

TEST(ApplyEdit, InsertIntoFullSequenceDropsOldest) {
  const auto s = seq_of(3, {{5, 1}, {6, 2}, {7, 1}});
  const auto r = apply_edit(s, {{9}, EditMode::insert}, 90);
  EXPECT_TRUE(r.dropped_oldest);
  EXPECT_EQ(r.seq.token_ids, (std::vector<int>{6, 7, 9}));
  EXPECT_EQ(r.seq.days, (std::vector<int>{10, 20, 89}));
  EXPECT_EQ(r.seq.length, 3u);
}

TEST(ApplyEdit, EmptyTargetSetIsRejected) {
  const auto s = seq_of(3, {{5, 1}});
  EXPECT_THROW(apply_edit(s, {{}, EditMode::remove}, 90), Error);
}

EncodedSequence random_seq(Rng& rng, std::size_t max_len, std::size_t len) {
  EncodedSequence s = empty_sequence(max_len);
  int day = 0;
  for (std::size_t i = 0; i < len; ++i) {
    s.type_ids[i] = 1 + static_cast<int>(rng() % 3);
    s.token_ids[i] = 2 + static_cast<int>(rng() % 8);
    day += static_cast<int>(rng() % 10);
    s.days[i] = std::min(day, 89);
    s.mask[i] = 1;
  }
  s.length = len;
  return s;
}

bool slot_equal(const EncodedSequence& a, const EncodedSequence& b, std::size_t i) {
  return a.token_ids[i] == b.token_ids[i] && a.type_ids[i] == b.type_ids[i] && a.days[i] == b.days[i] &&
         a.mask[i] == b.mask[i] && a.position_ids[i] == b.position_ids[i];
}

TEST(ApplyEditProperty, OnlyTargetOrAppendedSlotsChangeAndEditsAreIdempotent) {
  Rng rng(77);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t max_len = 2 + rng() % 10;
    const auto s = random_seq(rng, max_len, rng() % max_len);  // never full here
    std::vector<int> targets;
    for (int id = 2; id < 10; ++id)
      if (bernoulli(rng, 0.3)) targets.push_back(id);
    if (targets.empty()) targets.push_back(2);

    const auto rem = apply_edit(s, {targets, EditMode::remove}, 90).seq;
    for (std::size_t i = 0; i < max_len; ++i) {
      const bool target = s.mask[i] && s.type_ids[i] == kMed &&
                          std::binary_search(targets.begin(), targets.end(), s.token_ids[i]);
      if (target) EXPECT_EQ(rem.mask[i], 0);
      else EXPECT_TRUE(slot_equal(s, rem, i));
    }
    EXPECT_EQ(apply_edit(rem, {targets, EditMode::remove}, 90).seq, rem);

    const auto ins = apply_edit(s, {targets, EditMode::insert}, 90).seq;
    std::size_t changed = 0;
    for (std::size_t i = 0; i < max_len; ++i) changed += !slot_equal(s, ins, i);
    EXPECT_LE(changed, 1u);
    EXPECT_EQ(apply_edit(ins, {targets, EditMode::insert}, 90).seq, ins);
    // inserting then removing leaves no target behind
    const auto both = apply_edit(ins, {targets, EditMode::remove}, 90).seq;
    for (std::size_t i = 0; i < max_len; ++i)
      if (both.mask[i] && both.type_ids[i] == kMed)
        EXPECT_FALSE(std::binary_search(targets.begin(), targets.end(), both.token_ids[i]));
  }
}

TEST(Direction, NullBand) {
  EXPECT_EQ(direction_of(5e-5), Direction::null);
  EXPECT_EQ(direction_of(-5e-5), Direction::null);
  EXPECT_EQ(direction_of(2e-4), Direction::risk_increasing);
  EXPECT_EQ(direction_of(-2e-4), Direction::protective);
  EXPECT_EQ(direction_of(0.01, 0.05), Direction::null);
  EXPECT_EQ(direction_name(Direction::risk_increasing), "risk-increasing");
}

// A small cohort where the outcome is driven by the code MED_A.
struct Toy {
  std::vector<CohortRow> rows;
  MedCatalog catalog;
  Vocab vocab;
};

Toy toy_cohort(std::size_t n, std::uint64_t seed) {
  Toy t;
  t.catalog = MedCatalog({{"alpha", "cat1", "MED_A"}, {"alpha", "cat1", "MED_A2"}, {"beta", "cat1", "MED_B"},
                          {"ghost", "cat2", "MED_UNSEEN"}});
  Rng rng(seed);
  for (std::size_t i = 0; i < n; ++i) {
    CohortRow r;
    char id[16];
    std::snprintf(id, sizeof id, "P%05zu", i);
    r.patient_id = id;
    const bool a = bernoulli(rng, 0.4), b = bernoulli(rng, 0.4);
    for (int k = 0; k < 3; ++k) r.tokens.push_back({static_cast<int>(rng() % 80), Domain::dx, "DX" + std::to_string(rng() % 5)});
    if (a) r.tokens.push_back({static_cast<int>(rng() % 80), Domain::med, "MED_A"});
    if (b) r.tokens.push_back({static_cast<int>(rng() % 80), Domain::med, "MED_B"});
    std::sort(r.tokens.begin(), r.tokens.end());
    for (const auto& tok : r.tokens) {
      if (tok.domain == Domain::med) r.exposures.push_back(tok.code);
      (tok.domain == Domain::med ? r.n_med : r.n_dx)++;
    }
    std::sort(r.exposures.begin(), r.exposures.end());
    r.exposures.erase(std::unique(r.exposures.begin(), r.exposures.end()), r.exposures.end());
    r.label = bernoulli(rng, a ? 0.8 : 0.1);
    t.rows.push_back(std::move(r));
  }
  t.vocab = build_vocabs(t.rows);
  return t;
}

ModelConfig small_config() {
  ModelConfig c;
  c.n_layers = 1;
  c.hidden_dim = 8;
  c.n_heads = 2;
  c.max_len = 8;
  c.dropout = 0.0;
  c.joint = false;
  return c;
}

ModelParams untrained(const Toy& t, ModelConfig c = small_config(), std::uint64_t seed = 3) {
  ModelParams p = init_params(c, t.vocab.size(), seed);
  p.scaler = FeatureScaler::fit(t.rows);
  return p;
}

TEST(Ate, IgnoringMedTokensGivesZeroEffect) {
  const Toy t = toy_cohort(60, 1);
  ModelConfig c = small_config();
  c.ignored_types = {kMed};
  const auto est = ate(untrained(t, c), t.rows, "alpha", t.catalog, t.vocab);
  EXPECT_NEAR(est.ate, 0.0, 1e-6);
  EXPECT_EQ(est.direction, Direction::null);
}

TEST(Ate, OrderInvariant) {
  const Toy t = toy_cohort(70, 2);
  const auto m = untrained(t);
  auto shuffled = t.rows;
  std::shuffle(shuffled.begin(), shuffled.end(), Rng(9));
  const auto a = ate(m, t.rows, "alpha", t.catalog, t.vocab);
  const auto b = ate(m, shuffled, "alpha", t.catalog, t.vocab);
  EXPECT_EQ(a.ate, b.ate);
  EXPECT_EQ(a.support, b.support);
}

TEST(Ate, SupportRangeAndErrors) {
  const Toy t = toy_cohort(50, 3);
  const auto m = untrained(t);
  const auto est = ate(m, t.rows, "alpha", t.catalog, t.vocab);
  std::size_t exposed = 0;
  for (const auto& r : t.rows) exposed += std::count(r.exposures.begin(), r.exposures.end(), "MED_A");
  EXPECT_EQ(est.support, exposed);
  EXPECT_EQ(est.n, t.rows.size());
  EXPECT_GE(est.ate, -1.0);
  EXPECT_LE(est.ate, 1.0);
  EXPECT_TRUE(est.editable);

  // category name resolves to the union of member codes
  const auto cat = ate(m, t.rows, "cat1", t.catalog, t.vocab);
  EXPECT_GE(cat.support, est.support);

  const auto ghost = ate(m, t.rows, "ghost", t.catalog, t.vocab);
  EXPECT_FALSE(ghost.editable);
  EXPECT_EQ(ghost.support, 0u);
  EXPECT_EQ(ghost.ate, 0.0);

  try {
    ate(m, t.rows, "nope", t.catalog, t.vocab);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::unknown_ingredient);
  }
  try {
    ate(m, {}, "alpha", t.catalog, t.vocab);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::empty_cohort);
  }
}

TEST(NestedFolds, Errors) {
  const Toy t = toy_cohort(4, 4);
  const auto m = untrained(t);
  try {
    nested_fold_ate(m, t.rows, 5, "alpha", t.catalog, t.vocab);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::fold_too_small);
  }
  EXPECT_THROW(nested_fold_ate(m, t.rows, 1, "alpha", t.catalog, t.vocab), Error);
}

TEST(NestedFolds, DuplicatedFoldsHaveZeroSpread) {
  const Toy t = toy_cohort(25, 5);
  const auto m = untrained(t);
  std::vector<CohortRow> held;
  for (int k = 0; k < 4; ++k) held.insert(held.end(), t.rows.begin(), t.rows.end());
  const auto est = nested_fold_ate(m, held, 4, "alpha", t.catalog, t.vocab);
  ASSERT_TRUE(est.folds);
  EXPECT_EQ(est.folds->values.size(), 4u);
  EXPECT_EQ(est.folds->sd, 0.0);
  EXPECT_EQ(est.folds->min, est.folds->max);
  EXPECT_NEAR(est.ate, ate(m, t.rows, "alpha", t.catalog, t.vocab).ate, 1e-15);
}

TEST(NestedFolds, FrozenModelPointEstimateIsWholeCohortAte) {
  const Toy t = toy_cohort(53, 6);
  const auto m = untrained(t);
  const auto est = nested_fold_ate(m, t.rows, 5, "alpha", t.catalog, t.vocab);
  const auto whole = ate(m, t.rows, "alpha", t.catalog, t.vocab);
  EXPECT_NEAR(est.ate, whole.ate, 1e-12);
  EXPECT_EQ(est.support, whole.support);
  EXPECT_EQ(est.n, whole.n);
  const auto& f = *est.folds;
  EXPECT_LE(f.min, f.mean);
  EXPECT_LE(f.mean, f.max);
}

TEST(NestedFolds, FactoryReceivesRowsOutsideTheFold) {
  const Toy t = toy_cohort(20, 7);
  const auto m = untrained(t);
  std::vector<std::size_t> sizes;
  nested_fold_ate(
      [&](std::size_t, const std::vector<CohortRow>& outside) {
        sizes.push_back(outside.size());
        return m;
      },
      t.rows, 4, "alpha", t.catalog, t.vocab);
  EXPECT_EQ(sizes, (std::vector<std::size_t>{15, 15, 15, 15}));
}

TEST(Ate, TrainedModelRecoversHarmfulToken) {
  const Toy t = toy_cohort(400, 8);
  const Toy val = toy_cohort(150, 9);
  ModelConfig c = small_config();
  const auto scaler = FeatureScaler::fit(t.rows);
  const auto tr = make_dataset(t.rows, t.vocab, scaler, c.max_len, {});
  const auto va = make_dataset(val.rows, t.vocab, scaler, c.max_len, {});
  TrainConfig tc;
  tc.epochs = 15;
  tc.lr = 1e-2;
  tc.batch_size = 32;
  tc.sampler = Sampler::uniform;
  tc.token_dropout = tc.mask_rate = tc.swap_rate = 0.0;
  ModelParams init = init_params(c, t.vocab.size(), 1);
  init.scaler = scaler;
  const auto res = train(init, tr, va, tc);
  const auto est = nested_fold_ate(res.params, val.rows, 5, "alpha", t.catalog, t.vocab);
  EXPECT_GT(est.ate, 0.3);
  for (double v : est.folds->values) EXPECT_GT(v, 0.0);
  EXPECT_EQ(est.direction, Direction::risk_increasing);
  const auto other = ate(res.params, val.rows, "beta", t.catalog, t.vocab);
  EXPECT_LT(std::abs(other.ate), est.ate / 3);
}

TEST(EffectTable, CsvLayout) {
  AteEstimate a;
  a.ingredient = "alpha";
  a.ate = 0.25;
  a.support = 12;
  a.direction = Direction::risk_increasing;
  a.folds = FoldStats{2, 0.25, 0.5, -0.1, 0.6, {-0.1, 0.6}};
  AteEstimate b;
  b.ingredient = "beta";
  const std::string csv = effect_table_csv({a, b}, "# seed=1\n");
  EXPECT_EQ(csv,
            "# seed=1\n"
            "ingredient,ate,direction,support,fold_mean,fold_sd,fold_min,fold_max\n"
            "alpha,0.25,risk-increasing,12,0.25,0.5,-0.1,0.6\n"
            "beta,0,null,0,,,,\n");
}

}  // namespace
}  // namespace akirisk
