#include <gtest/gtest.h>

#include "carrylab/eval.hpp"
#include "carrylab/suites.hpp"
#include "carrylab/train.hpp"

using namespace carrylab;

namespace {

EvalRecord rec(int a, int b, const std::string& generated) {
  auto ex = render(a, b, Layout::three_digit);
  return make_record(ex, generated, generated, static_cast<int>(ex.answer.size()));
}

Params small_model(std::uint64_t seed) {
  ModelConfig c;
  return init_model(c, seed);
}

}  // namespace

TEST(Records, ExactImpliesBothHalves) {
  Rng rng(1);
  for (int i = 0; i < 2000; ++i) {
    const int a = static_cast<int>(uniform_index(rng, 1000)), b = static_cast<int>(uniform_index(rng, 1000));
    auto truth = render(a, b, Layout::three_digit).answer;
    std::string g = truth;
    for (auto& ch : g)
      if (uniform01(rng) < 0.3) ch = static_cast<char>('0' + uniform_index(rng, 10));
    auto r = rec(a, b, g);
    if (r.exact) {
      EXPECT_TRUE(r.high2_correct && r.low2_correct);
    }
    EXPECT_EQ(r.exact, g == truth);
    EXPECT_GE(r.tens_delta, -9);
    EXPECT_LE(r.tens_delta, 9);
    EXPECT_EQ(r.tens_delta == 0, r.digit_correct[2]);
  }
}

TEST(Records, TensDeltaIsSigned) {
  // 289 + 173 = 0462
  EXPECT_EQ(rec(289, 173, "0452").tens_delta, -1);
  EXPECT_EQ(rec(289, 173, "0492").tens_delta, 3);
  EXPECT_EQ(rec(289, 173, "0462").tens_delta, 0);
  auto r = rec(289, 173, "0452");
  EXPECT_TRUE(r.high2_correct);
  EXPECT_FALSE(r.low2_correct);
  EXPECT_EQ(r.c2, 1);
}

TEST(Records, FormatValidity) {
  auto ex = render(289, 173, Layout::three_digit);
  EXPECT_FALSE(make_record(ex, "0462", "04?2", 4).format_valid);
  EXPECT_TRUE(make_record(ex, "0462", "0462", 4).format_valid);
}

TEST(Recomposition, ConditionalOnHighTwo) {
  EXPECT_EQ(recomposition_metric({rec(289, 173, "0462"), rec(782, 289, "1071")}), 1.0);
  EXPECT_EQ(recomposition_metric({rec(289, 173, "0462"), rec(289, 173, "0452")}), 0.5);
  EXPECT_FALSE(recomposition_metric({rec(289, 173, "1462"), rec(782, 289, "0071")}).has_value());
  EXPECT_FALSE(recomposition_metric({}).has_value());
}

TEST(TensOnly, SingleRecordCases) {
  EXPECT_EQ(tens_only_fraction({rec(289, 173, "0452")}), 1.0);
  EXPECT_EQ(tens_only_fraction({rec(289, 173, "0463")}), 0.0);
  EXPECT_EQ(tens_only_fraction({rec(289, 173, "0453")}), 0.0);
  EXPECT_FALSE(tens_only_fraction({rec(289, 173, "0462")}).has_value());
  EXPECT_FALSE(tens_only_fraction({rec(289, 173, "1452")}).has_value());
}

TEST(TensResidual, BranchMeansAndPopulations) {
  // c2=1: 289+173; c2=0: 123+456 = 0579.
  std::vector<EvalRecord> rs{rec(289, 173, "0482"), rec(289, 173, "0462"), rec(123, 456, "0549"),
                             rec(123, 456, "0579")};
  EXPECT_DOUBLE_EQ(*tens_residual_summary(rs, 1), 1.0);
  EXPECT_DOUBLE_EQ(*tens_residual_summary(rs, 0), -1.5);
  EXPECT_DOUBLE_EQ(*tens_residual_summary(rs, 1, TensPopulation::errors_only), 2.0);
  EXPECT_DOUBLE_EQ(*tens_residual_summary(rs, 0, TensPopulation::errors_only), -3.0);
  std::vector<EvalRecord> correct{rec(289, 173, "0462"), rec(123, 456, "0579")};
  EXPECT_DOUBLE_EQ(*tens_residual_summary(correct, 0), 0.0);
  EXPECT_FALSE(tens_residual_summary(correct, 0, TensPopulation::errors_only).has_value());
  EXPECT_FALSE(tens_residual_summary({}, 1).has_value());
}

TEST(Summary, RatesAreMeansInUnitInterval) {
  std::vector<EvalRecord> rs{rec(289, 173, "0462"), rec(289, 173, "0452"), rec(782, 289, "0071"),
                             rec(123, 456, "0579")};
  rs[1].teacher_forced_hits = 3;
  rs[2].teacher_forced_hits = 2;
  auto m = summarize(rs);
  EXPECT_EQ(m.n, 4u);
  EXPECT_DOUBLE_EQ(m.exact, 0.5);
  EXPECT_DOUBLE_EQ(m.high2, 0.75);
  EXPECT_DOUBLE_EQ(m.low2, 0.75);
  EXPECT_DOUBLE_EQ(m.teacher_forced, (4 + 3 + 2 + 4) / 16.0);
  EXPECT_DOUBLE_EQ(*m.recomposition, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(*m.tens_only, 1.0);
  ASSERT_EQ(m.digit_accuracy.size(), 4u);
  EXPECT_DOUBLE_EQ(m.digit_accuracy[0], 0.75);
}

TEST(Decode, ConstrainedMatchesFreeWhenFreeIsValid) {
  auto p = small_model(2);
  // A briefly trained model so that free decoding is sometimes digit-valid.
  Stage stage{"base", {{PackName::base2digit, 1.0}}, 60};
  stage.batch_size = 64;
  TrainState st = start_training(p.config, 2);
  PackCache packs(2);
  train_stage(st, stage, 2, packs);
  for (Layout layout : {Layout::two_digit, Layout::three_digit}) {
    Rng rng(derive_seed(3, "prompts"));
    std::vector<AdditionExample> prompts;
    const int hi = operand_max(layout) + 1;
    for (int i = 0; i < 500; ++i) {
      prompts.push_back(render(static_cast<int>(uniform_index(rng, hi)), static_cast<int>(uniform_index(rng, hi)), layout));
    }
    auto constrained = decode_batch(st.params, prompts, true);
    auto free = decode_batch(st.params, prompts, false);
    std::size_t valid = 0;
    for (std::size_t i = 0; i < prompts.size(); ++i) {
      EXPECT_TRUE(all_digits(constrained[i]));
      EXPECT_EQ(constrained[i].size(), static_cast<std::size_t>(answer_digits(layout)));
      if (all_digits(free[i])) {
        ++valid;
        EXPECT_EQ(constrained[i], free[i]);
      } else {
        EXPECT_NE(constrained[i], free[i]);
      }
    }
    EXPECT_GT(valid, 0u);
  }
}

TEST(Decode, BatchMatchesSingle) {
  auto p = small_model(4);
  std::vector<AdditionExample> xs{render(289, 173, Layout::three_digit), render(782, 289, Layout::three_digit)};
  auto batch = decode_batch(p, xs, true);
  EXPECT_EQ(batch[1], decode_constrained(p, xs[1]));
  EXPECT_THROW(decode_batch(p, {render(1, 2, Layout::two_digit), xs[0]}, true), std::invalid_argument);
}

TEST(TeacherForced, CountsAnswerPositionsOnly) {
  auto p = small_model(5);
  auto records = evaluate_examples(p, sample_suite(Suite::in_support_2digit, 50, 0));
  for (const auto& r : records) {
    EXPECT_GE(r.teacher_forced_hits, 0);
    EXPECT_LE(r.teacher_forced_hits, 3);
  }
}

TEST(Margins, ZeroWhenFlagIsTheTrueDigit) {
  auto p = small_model(6);
  // Every probe here has hundreds output digit 5.
  std::vector<AdditionExample> probes{render(200, 300, Layout::three_digit), render(100, 400, Layout::three_digit),
                                      render(500, 0, Layout::three_digit)};
  auto s = logit_margin_probe(p, probes, 5);
  ASSERT_EQ(s.margins.size(), 3u);
  for (double m : s.margins) EXPECT_EQ(m, 0.0);
  EXPECT_EQ(s.mean_margin, 0.0);
  auto t = logit_margin_probe(p, probes, 1);
  const auto logits = hundreds_step_logits(p, probes);
  EXPECT_NEAR(t.margins[0], logits[0][Vocab::digit_id(1)] - logits[0][Vocab::digit_id(5)], 1e-6);
}

TEST(Attention, LowerDigitMassInUnitInterval) {
  auto p = small_model(7);
  std::vector<AdditionExample> probes{render(289, 173, Layout::three_digit), render(782, 289, Layout::three_digit)};
  const double m = lower_digit_attention(p, probes);
  EXPECT_GT(m, 0.0);
  EXPECT_LT(m, 1.0);
  double manual = 0.0;
  for (const auto& ex : probes) {
    auto s = attention_groups(p, tokenize(ex.text()), Layout::three_digit, prompt_length(Layout::three_digit) + 1);
    manual += s.mean_mass(SourceGroup::lower_digits);
  }
  EXPECT_NEAR(m, manual / 2, 1e-6);
}
