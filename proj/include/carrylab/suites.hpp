#pragma once

// Evaluation suites, structured hold-out splits and the rule-table oracles.

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "carrylab/corpus.hpp"
#include "carrylab/numerics/rng.hpp"

namespace carrylab {

// ----------------------------------------------------------------------------
// Suites

enum class Suite {
  in_support_2digit,
  layout_shift_only_lowrange3,
  true3_hundreds_no_incarry,
  true3_hundreds_with_incarry,
  true3_thousands_carry,
};

inline constexpr std::array<Suite, 5> kAllSuites{
    Suite::in_support_2digit, Suite::layout_shift_only_lowrange3, Suite::true3_hundreds_no_incarry,
    Suite::true3_hundreds_with_incarry, Suite::true3_thousands_carry};

inline constexpr std::array<Suite, 3> kTrue3Suites{Suite::true3_hundreds_no_incarry, Suite::true3_hundreds_with_incarry,
                                                   Suite::true3_thousands_carry};

inline std::string_view suite_name(Suite s) {
  switch (s) {
    case Suite::in_support_2digit: return "in_support_2digit";
    case Suite::layout_shift_only_lowrange3: return "layout_shift_only_lowrange3";
    case Suite::true3_hundreds_no_incarry: return "true3_hundreds_no_incarry";
    case Suite::true3_hundreds_with_incarry: return "true3_hundreds_with_incarry";
    case Suite::true3_thousands_carry: return "true3_thousands_carry";
  }
  return "?";
}

inline Suite parse_suite(std::string_view name) {
  for (Suite s : kAllSuites)
    if (suite_name(s) == name) return s;
  throw std::invalid_argument("unknown suite: " + std::string(name));
}

inline Layout suite_layout(Suite s) {
  return s == Suite::in_support_2digit ? Layout::two_digit : Layout::three_digit;
}

inline bool suite_admits(Suite s, const AdditionExample& ex) {
  if (ex.layout != suite_layout(s)) return false;
  switch (s) {
    case Suite::in_support_2digit: return true;
    case Suite::layout_shift_only_lowrange3: return !ex.true_three_digit();
    case Suite::true3_hundreds_no_incarry: return ex.true_three_digit() && ex.c2 == 0 && ex.c3 == 0;
    case Suite::true3_hundreds_with_incarry: return ex.true_three_digit() && ex.c2 == 1 && ex.c3 == 0;
    case Suite::true3_thousands_carry: return ex.c3 == 1;
  }
  return false;
}

// Every admissible example of a suite, a-major.
inline std::vector<AdditionExample> suite_population(Suite s) {
  const Layout layout = suite_layout(s);
  const int hi = operand_max(layout);
  std::vector<AdditionExample> out;
  for (int a = 0; a <= hi; ++a)
    for (int b = 0; b <= hi; ++b) {
      auto ex = render(a, b, layout);
      if (suite_admits(s, ex)) out.push_back(std::move(ex));
    }
  return out;
}

// n distinct admissible examples, uniform over the population.
inline std::vector<AdditionExample> sample_suite(Suite s, std::size_t n, std::uint64_t seed) {
  auto population = suite_population(s);
  if (population.size() < n) {
    throw std::invalid_argument("sample_suite: " + std::string(suite_name(s)) + " admits only " +
                                std::to_string(population.size()) + " examples, " + std::to_string(n) + " requested");
  }
  Rng rng(derive_seed(seed, "suite:" + std::string(suite_name(s))));
  std::vector<AdditionExample> out;
  out.reserve(n);
  for (auto i : sample_without_replacement(population.size(), n, rng)) out.push_back(population[i]);
  return out;
}

// ----------------------------------------------------------------------------
// Rule tables

// Transitions are keyed per column: a units-column rule says nothing about the
// tens column.
struct RuleKey {
  int column = 0;  // 0 = units
  int da = 0;
  int db = 0;
  int cin = 0;
  auto operator<=>(const RuleKey&) const = default;
};

struct RuleValue {
  int dout = 0;
  int cout = 0;
  bool operator==(const RuleValue&) const = default;
};

class RuleTable {
 public:
  void insert(RuleKey key, RuleValue value) {
    auto [it, fresh] = rules_.emplace(key, value);
    if (!fresh && it->second != value) {
      throw std::logic_error("RuleTable: conflicting transition for key (column " + std::to_string(key.column) + ": " +
                             std::to_string(key.da) + "," +
                             std::to_string(key.db) + "," + std::to_string(key.cin) + ")");
    }
  }

  std::optional<RuleValue> find(RuleKey key) const {
    auto it = rules_.find(key);
    if (it == rules_.end()) return std::nullopt;
    return it->second;
  }

  bool contains(RuleKey key) const { return rules_.count(key) != 0; }
  std::size_t size() const { return rules_.size(); }
  bool empty() const { return rules_.empty(); }
  const std::map<RuleKey, RuleValue>& rules() const { return rules_; }

  bool operator==(const RuleTable&) const = default;

 private:
  std::map<RuleKey, RuleValue> rules_;
};

// Column transitions of one example, least significant first. The final
// column's carry out becomes the leading answer digit.
inline std::vector<std::pair<RuleKey, RuleValue>> column_transitions(const AdditionExample& ex) {
  std::vector<std::pair<RuleKey, RuleValue>> out;
  int carry = 0;
  for (int s = 0; s < operand_digits(ex.layout); ++s) {
    const int da = digit_at(ex.a, s);
    const int db = digit_at(ex.b, s);
    const int total = da + db + carry;
    out.push_back({{s, da, db, carry}, {total % 10, total / 10}});
    carry = total / 10;
  }
  return out;
}

inline RuleTable build_rule_table(const std::vector<AdditionExample>& train) {
  RuleTable table;
  for (const auto& ex : train)
    for (const auto& [k, v] : column_transitions(ex)) table.insert(k, v);
  return table;
}

// Answer by chaining table lookups from the units column; nullopt = abstain.
inline std::optional<std::string> local_reconstruct(const AdditionExample& ex, const RuleTable& table) {
  const int w = operand_digits(ex.layout);
  std::string answer(answer_digits(ex.layout), '0');
  int carry = 0;
  for (int s = 0; s < w; ++s) {
    auto v = table.find({s, digit_at(ex.a, s), digit_at(ex.b, s), carry});
    if (!v) return std::nullopt;
    answer[w - s] = static_cast<char>('0' + v->dout);
    carry = v->cout;
  }
  answer[0] = static_cast<char>('0' + carry);
  return answer;
}

inline RuleTable symmetry_close(const RuleTable& table) {
  RuleTable out = table;
  for (const auto& [k, v] : table.rules()) out.insert({k.column, k.db, k.da, k.cin}, v);
  return out;
}

// ----------------------------------------------------------------------------
// Splits of the exhaustive two-digit set

enum class SplitName { iid_random, units_pair_ood, tens_carry_ood, carry_chain_ood, ordered_commutativity_ood };

inline constexpr std::array<SplitName, 5> kAllSplits{SplitName::iid_random, SplitName::units_pair_ood,
                                                     SplitName::tens_carry_ood, SplitName::carry_chain_ood,
                                                     SplitName::ordered_commutativity_ood};

inline std::string_view split_name(SplitName s) {
  switch (s) {
    case SplitName::iid_random: return "iid_random";
    case SplitName::units_pair_ood: return "units_pair_ood";
    case SplitName::tens_carry_ood: return "tens_carry_ood";
    case SplitName::carry_chain_ood: return "carry_chain_ood";
    case SplitName::ordered_commutativity_ood: return "ordered_commutativity_ood";
  }
  return "?";
}

inline SplitName parse_split(std::string_view name) {
  for (SplitName s : kAllSplits)
    if (split_name(s) == name) return s;
  throw std::invalid_argument("unknown split: " + std::string(name));
}

// Held-out units pairs: every ordered pair summing to 13, and the pairs
// summing to 7 with u < v (their swaps stay in training).
inline bool units_pair_held_out(int u, int v) { return u + v == 13 || (u + v == 7 && u < v); }

// Held-out tens keys under an incoming carry: t_a + t_b = 4 in both orders,
// and t_a + t_b = 9 with t_a < t_b.
inline bool tens_carry_held_out(int ta, int tb) { return ta + tb == 4 || (ta + tb == 9 && ta < tb); }

// One-line description of each split's construction, echoed in audit reports.
inline std::string_view split_definition(SplitName s) {
  switch (s) {
    case SplitName::iid_random: return "random 8000/2000 partition by seed";
    case SplitName::units_pair_ood: return "test: units pair with u+v=13, or u+v=7 and u<v";
    case SplitName::tens_carry_ood: return "test: c1=1 and tens pair with ta+tb=4, or ta+tb=9 and ta<tb";
    case SplitName::carry_chain_ood: return "test: c1=1 and ta+tb+1>=10";
    case SplitName::ordered_commutativity_ood: return "train: a<=b, test: a>b";
  }
  return "?";
}

struct SplitSpec {
  SplitName name = SplitName::iid_random;
  std::vector<AdditionExample> train;
  std::vector<AdditionExample> test;
};

inline SplitSpec build_split(SplitName name, std::uint64_t seed) {
  SplitSpec split;
  split.name = name;
  auto all = gen_exhaustive_2digit();
  if (name == SplitName::iid_random) {
    Rng rng(derive_seed(seed, "split:iid"));
    std::vector<std::size_t> idx(all.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    shuffle(idx, rng);
    for (std::size_t i = 0; i < idx.size(); ++i) (i < 8000 ? split.train : split.test).push_back(all[idx[i]]);
    return split;
  }
  for (auto& ex : all) {
    const int u = digit_at(ex.a, 0), v = digit_at(ex.b, 0);
    const int ta = digit_at(ex.a, 1), tb = digit_at(ex.b, 1);
    bool test = false;
    switch (name) {
      case SplitName::units_pair_ood: test = units_pair_held_out(u, v); break;
      case SplitName::tens_carry_ood: test = ex.c1 == 1 && tens_carry_held_out(ta, tb); break;
      case SplitName::carry_chain_ood: test = ex.c1 == 1 && ta + tb + 1 >= 10; break;
      case SplitName::ordered_commutativity_ood: test = ex.a > ex.b; break;
      case SplitName::iid_random: break;
    }
    (test ? split.test : split.train).push_back(std::move(ex));
  }
  return split;
}

struct OracleScores {
  double local_coverage = 0.0;
  double local_accuracy = 0.0;
  double symmetry_accuracy = 0.0;
};

inline OracleScores score_oracles(const SplitSpec& split) {
  const RuleTable local = build_rule_table(split.train);
  const RuleTable closed = symmetry_close(local);
  std::size_t covered = 0, local_ok = 0, sym_ok = 0;
  for (const auto& ex : split.test) {
    if (auto ans = local_reconstruct(ex, local)) {
      ++covered;
      if (*ans == ex.answer) ++local_ok;
    }
    if (auto ans = local_reconstruct(ex, closed); ans && *ans == ex.answer) ++sym_ok;
  }
  const double n = split.test.empty() ? 1.0 : static_cast<double>(split.test.size());
  return {covered / n, local_ok / n, sym_ok / n};
}

struct SplitAuditRow {
  SplitName name;
  std::size_t train_size = 0;
  std::size_t test_size = 0;
  OracleScores scores;
};

inline std::vector<SplitAuditRow> audit_splits(std::uint64_t seed = 0) {
  std::vector<SplitAuditRow> rows;
  for (SplitName s : kAllSplits) {
    auto split = build_split(s, seed);
    rows.push_back({s, split.train.size(), split.test.size(), score_oracles(split)});
  }
  return rows;
}

}  // namespace carrylab
