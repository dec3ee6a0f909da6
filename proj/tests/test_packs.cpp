#include <gtest/gtest.h>

#include <map>
#include <set>
#include <sstream>

#include "carrylab/packs.hpp"

using namespace carrylab;

namespace {

int tens_digit(int v) { return v / 10 % 10; }
int hundreds_digit(int v) { return v / 100 % 10; }

}  // namespace

TEST(Packs, PureFunctionOfNameSizeSeed) {
  for (PackName p : kAllPacks) {
    const auto size = std::min<std::size_t>(default_pack_size(p), 500);
    auto a = build_pack(p, size, 11), b = build_pack(p, size, 11);
    EXPECT_EQ(a.examples, b.examples) << pack_name(p);
    EXPECT_EQ(a.volume(), size) << pack_name(p);
    if (p != PackName::base2digit && p != PackName::mixed_layout && p != PackName::probe_h0) {
      EXPECT_NE(a.examples, build_pack(p, size, 12).examples) << pack_name(p);
    }
  }
}

TEST(Packs, NamesRoundTrip) {
  for (PackName p : kAllPacks) EXPECT_EQ(parse_pack(pack_name(p)), p);
  EXPECT_THROW(parse_pack("nope"), std::invalid_argument);
  EXPECT_THROW(build_pack(PackName::tail, 0, 0), std::invalid_argument);
  EXPECT_THROW(build_pack(PackName::base2digit, 10001, 0), std::invalid_argument);
}

TEST(Packs, BaseAndMixedAreTheExhaustiveSets) {
  EXPECT_EQ(build_pack(PackName::base2digit, 10000, 0).examples, gen_exhaustive_2digit());
  EXPECT_EQ(build_pack(PackName::mixed_layout, 10000, 0).examples, gen_lowrange3());
}

TEST(Packs, ControlsAreInSupport) {
  for (PackName p : {PackName::ctrl_dup, PackName::ctrl3, PackName::ctrl4}) {
    std::size_t two = 0;
    for (const auto& ex : build_pack(p, 2000, 1).examples) {
      EXPECT_FALSE(ex.true_three_digit()) << pack_name(p);
      two += ex.layout == Layout::two_digit;
    }
    EXPECT_GT(two, 800u);
    EXPECT_LT(two, 1200u);
  }
}

TEST(Packs, ProbeAllCoversEveryHundredsDigitUnderBothCarries) {
  auto pack = build_pack(PackName::probe_all, 2000, 2);
  std::set<int> no_carry, carry_in, thousands;
  std::size_t zero_tails = 0;
  for (const auto& ex : pack.examples) {
    ASSERT_EQ(ex.layout, Layout::three_digit);
    ASSERT_TRUE(ex.true_three_digit());
    const int h = hundreds_digit(ex.sum());
    if (ex.c3) thousands.insert(h);
    else if (ex.c2) carry_in.insert(h);
    else no_carry.insert(h);
    zero_tails += ex.a % 100 == 0 && ex.b % 100 == 0;
  }
  EXPECT_EQ(no_carry.size(), 9u);  // 1..9; 0 needs 000+000
  EXPECT_EQ(carry_in.size(), 8u);  // 2..9; carry into a true 3-digit pair
  EXPECT_EQ(thousands.size(), 10u);
  EXPECT_GE(zero_tails, 2000u / 3);
}

TEST(Packs, ProbeMeasurementSets) {
  for (const auto& ex : build_pack(PackName::probe_h0, 54, 0).examples) {
    EXPECT_EQ(ex.a % 100 + ex.b % 100, 0);
    EXPECT_EQ(ex.c3, 0);
  }
  for (const auto& ex : build_pack(PackName::probe_h1, 200, 0).examples) {
    EXPECT_EQ(ex.c2, 1);
    EXPECT_EQ(ex.c3, 0);
    EXPECT_TRUE(ex.true_three_digit());
  }
  for (const auto& ex : build_pack(PackName::probe_t1, 200, 0).examples) EXPECT_EQ(ex.c3, 1);
}

TEST(Packs, HighOnlyHasZeroTails) {
  for (const auto& ex : build_pack(PackName::highonly, 2000, 3).examples) {
    EXPECT_EQ(ex.a % 100, 0);
    EXPECT_EQ(ex.b % 100, 0);
    EXPECT_TRUE(ex.true_three_digit());
  }
}

TEST(Packs, TailFreezesTheHundredsPair) {
  std::set<int> tails;
  for (const auto& ex : build_pack(PackName::tail, 2000, 4).examples) {
    EXPECT_EQ(ex.a / 100, 3);
    EXPECT_EQ(ex.b / 100, 5);
    tails.insert(ex.a % 100 * 100 + ex.b % 100);
  }
  EXPECT_GT(tails.size(), 1500u);
}

TEST(Packs, TailHighStratifiesCarryCells) {
  std::map<std::pair<int, int>, int> cells;
  std::set<int> c2_under_thousands;
  for (const auto& ex : build_pack(PackName::tailhigh, 2400, 5).examples) {
    EXPECT_GE(ex.a, 100);
    EXPECT_GE(ex.b, 100);
    const int upper = ex.c3 == 1 ? 2 : ex.c2;
    ++cells[{upper, ex.c1}];
    if (ex.c3 == 1) c2_under_thousands.insert(ex.c2);
  }
  ASSERT_EQ(cells.size(), 6u);
  for (const auto& [cell, n] : cells) EXPECT_EQ(n, 400);
  EXPECT_EQ(c2_under_thousands.size(), 2u);
}

TEST(Packs, TensBoundaryStraddlesTheCarry) {
  std::map<int, int> loads;
  std::set<int> c2;
  for (const auto& ex : build_pack(PackName::tensboundary, 2000, 6).examples) {
    ++loads[tens_digit(ex.a) + tens_digit(ex.b) + ex.c1];
    c2.insert(ex.c2);
    EXPECT_TRUE(ex.true_three_digit());
  }
  EXPECT_EQ(loads, (std::map<int, int>{{8, 500}, {9, 500}, {10, 500}, {11, 500}}));
  EXPECT_EQ(c2.size(), 2u);
}

TEST(Packs, TensPolarityBalancesBranchesAndDigits) {
  std::map<std::pair<int, int>, int> cells;
  int branch[2] = {0, 0};
  for (const auto& ex : build_pack(PackName::tenspolarity, 2000, 7).examples) {
    ++branch[ex.c2];
    ++cells[{ex.c2, tens_digit(ex.sum())}];
  }
  EXPECT_EQ(branch[0], 1000);
  EXPECT_EQ(branch[1], 1000);
  for (const auto& [cell, n] : cells) {
    EXPECT_EQ(n, 200);
    EXPECT_EQ(cell.first == 0, cell.second >= 5);
  }
  auto odd = build_pack(PackName::tenspolarity, 2001, 7);
  int zero = 0;
  for (const auto& ex : odd.examples) zero += ex.c2 == 0;
  EXPECT_LE(std::abs(2 * zero - 2001), 1);
}

TEST(Volume, MatchCheck) {
  auto a = build_pack(PackName::ctrl3, 2000, 0);
  auto b = build_pack(PackName::tailhigh, 2000, 0);
  auto c = build_pack(PackName::tailhigh, 1999, 0);
  EXPECT_TRUE(volume_match_check({&a, &b}).ok);
  auto bad = volume_match_check({&a, &c});
  EXPECT_FALSE(bad.ok);
  EXPECT_NE(bad.message.find("ctrl3"), std::string::npos);
  EXPECT_NE(bad.message.find("tailhigh"), std::string::npos);
  EXPECT_THROW(volume_match_check({}), std::invalid_argument);
}

TEST(Packs, DumpHasManifestLine) {
  std::ostringstream os;
  write_pack(os, build_pack(PackName::tail, 3, 0));
  const auto text = os.str();
  EXPECT_EQ(text.rfind("# pack=tail size=3 seed=0", 0), 0u);
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 4);
}

TEST(Plans, ShapesPerStudy) {
  auto pos = staged_plan(Study::position_family, "absolute");
  ASSERT_EQ(pos.stages.size(), 1u);
  EXPECT_EQ(pos.stages[0].mixture.size(), 1u);
  EXPECT_EQ(staged_plan(Study::position_family, "mixed_layout").stages[0].mixture.size(), 2u);
  EXPECT_EQ(staged_plan(Study::carry_probe, "base").stages.size(), 1u);
  EXPECT_EQ(staged_plan(Study::carry_probe, "probe_all").stages.size(), 2u);
  auto bind = staged_plan(Study::binding_small, "tail");
  ASSERT_EQ(bind.stages.size(), 3u);
  EXPECT_EQ(bind.stages[1].mixture.front().pack, PackName::probe_all);
  EXPECT_EQ(bind.stages[2].mixture.front().pack, PackName::tail);
  EXPECT_DOUBLE_EQ(bind.stages[2].mixture.front().weight, 0.5);
  EXPECT_EQ(staged_plan(Study::late_tens, "ctrl4").stages.size(), 4u);
  EXPECT_THROW(staged_plan(Study::binding_small, "ctrl4"), std::invalid_argument);
  EXPECT_THROW(parse_study("nope"), std::invalid_argument);
}

TEST(Plans, SharedBaseAcrossFamilies) {
  for (Study s : kAllStudies) {
    const auto fams = study_families(s);
    const auto first = staged_plan(s, fams.front());
    for (const auto& f : fams) {
      const auto plan = staged_plan(s, f);
      const std::size_t shared = plan.stages.size() == first.stages.size() ? plan.stages.size() - 1 : 0;
      for (std::size_t i = 0; i < shared; ++i) EXPECT_EQ(plan.stages[i].describe(), first.stages[i].describe());
    }
  }
}

TEST(Plans, RepairMixturesSumToOne) {
  for (Study s : kAllStudies)
    for (const auto& f : study_families(s))
      for (const auto& st : staged_plan(s, f).stages) {
        double total = 0.0;
        for (const auto& m : st.mixture) total += m.weight;
        EXPECT_NEAR(total, 1.0, 1e-12) << study_name(s) << " " << f << " " << st.name;
      }
}

TEST(Plans, BridgeAndLateStageUseTheWiderModel) {
  EXPECT_EQ(study_model(Study::binding_small).width, 16);
  EXPECT_EQ(study_model(Study::binding_bridge).width, 32);
  EXPECT_EQ(study_model(Study::binding_bridge).n_layers, 2);
  EXPECT_EQ(study_model(Study::late_tens).n_layers, 2);
}
