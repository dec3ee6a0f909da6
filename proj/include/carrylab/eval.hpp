#pragma once

// Greedy decoding, per-example records, suite metrics and stage diagnostics.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "carrylab/corpus.hpp"
#include "carrylab/model.hpp"
#include "carrylab/suites.hpp"

namespace carrylab {

// Logits of a batch of same-layout prefixes, no graph recorded.
inline std::vector<float> batch_logits(const Params& p, const std::vector<std::vector<int>>& rows,
                                       const std::vector<Layout>& layouts, ForwardTrace* trace = nullptr) {
  NoGradGuard guard;
  TokenBatch batch;
  batch.batch = rows.size();
  batch.seq = rows.empty() ? 0 : rows.front().size();
  for (const auto& r : rows) {
    if (r.size() != batch.seq) throw std::invalid_argument("batch_logits: rows differ in length");
    batch.tokens.insert(batch.tokens.end(), r.begin(), r.end());
  }
  batch.layouts = layouts;
  Tensor logits = forward(p, batch, trace);
  return {logits.data().begin(), logits.data().end()};
}

namespace detail {

inline int argmax_range(const float* logits, int lo, int hi) {
  int best = lo;
  for (int i = lo + 1; i < hi; ++i)
    if (logits[i] > logits[best]) best = i;
  return best;
}

inline void require_uniform_layout(const std::vector<AdditionExample>& examples, const char* op) {
  for (const auto& ex : examples)
    if (ex.layout != examples.front().layout) throw std::invalid_argument(std::string(op) + ": mixed layouts in batch");
}

}  // namespace detail

// Greedy answers for a batch of prompts sharing one layout. Constrained
// decoding restricts every step to digit tokens; free decoding takes the
// argmax over the whole vocabulary and writes '?' for a BOS emission.
inline std::vector<std::string> decode_batch(const Params& p, const std::vector<AdditionExample>& examples,
                                             bool constrained) {
  if (examples.empty()) return {};
  detail::require_uniform_layout(examples, "decode");
  const Layout layout = examples.front().layout;
  const auto steps = static_cast<std::size_t>(answer_digits(layout));
  if (static_cast<std::size_t>(prompt_length(layout)) + steps > static_cast<std::size_t>(p.config.context_length)) {
    throw std::invalid_argument("decode: prompt and answer exceed the context length");
  }
  std::vector<std::vector<int>> rows;
  for (const auto& ex : examples) rows.push_back(tokenize(ex.prompt));
  const std::vector<Layout> layouts(examples.size(), layout);
  std::vector<std::string> out(examples.size());
  const int v = p.config.vocab_size;
  for (std::size_t s = 0; s < steps; ++s) {
    const auto logits = batch_logits(p, rows, layouts);
    const std::size_t t = rows.front().size();
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const float* row = logits.data() + (r * t + t - 1) * static_cast<std::size_t>(v);
      const int id = constrained ? detail::argmax_range(row, Vocab::digit_id(0), Vocab::digit_id(9) + 1)
                                 : detail::argmax_range(row, 0, v);
      rows[r].push_back(id);
      out[r].push_back(id == Vocab::bos ? '?' : Vocab::char_of(id));
    }
  }
  return out;
}

inline std::string decode_constrained(const Params& p, const AdditionExample& ex) {
  return decode_batch(p, {ex}, true).front();
}

struct FreeDecode {
  std::string text;
  bool format_valid = false;
};

inline bool all_digits(const std::string& s) {
  return std::all_of(s.begin(), s.end(), [](char c) { return c >= '0' && c <= '9'; });
}

inline FreeDecode decode_free(const Params& p, const AdditionExample& ex) {
  auto text = decode_batch(p, {ex}, false).front();
  return {text, all_digits(text)};
}

// Teacher-forced logits at every answer step: [example][answer index][vocab].
inline std::vector<std::vector<std::vector<float>>> answer_step_logits(const Params& p,
                                                                       const std::vector<AdditionExample>& examples) {
  if (examples.empty()) return {};
  detail::require_uniform_layout(examples, "answer_step_logits");
  const Layout layout = examples.front().layout;
  std::vector<std::vector<int>> rows;
  for (const auto& ex : examples) {
    auto ids = tokenize(ex.text());
    ids.pop_back();
    rows.push_back(std::move(ids));
  }
  const auto logits = batch_logits(p, rows, std::vector<Layout>(examples.size(), layout));
  const std::size_t t = rows.front().size();
  const auto v = static_cast<std::size_t>(p.config.vocab_size);
  const auto first = static_cast<std::size_t>(prompt_length(layout));
  std::vector<std::vector<std::vector<float>>> out(examples.size());
  for (std::size_t r = 0; r < examples.size(); ++r)
    for (std::size_t k = 0; k < static_cast<std::size_t>(answer_digits(layout)); ++k) {
      const float* row = logits.data() + (r * t + first + k) * v;
      out[r].emplace_back(row, row + v);
    }
  return out;
}

// ----------------------------------------------------------------------------
// Records

struct EvalRecord {
  int a = 0;
  int b = 0;
  Layout layout = Layout::two_digit;
  std::string truth;
  std::string generated;  // constrained decode
  std::string free_text;
  bool format_valid = false;
  bool exact = false;
  bool high2_correct = false;
  bool low2_correct = false;
  std::vector<bool> digit_correct;
  int tens_delta = 0;
  int c2 = 0;
  int c3 = 0;
  int teacher_forced_hits = 0;  // answer positions predicted correctly under the true prefix
};

// Builds the derived bits of a record from its truth and constrained output.
inline EvalRecord make_record(const AdditionExample& ex, const std::string& generated, const std::string& free_text,
                              int teacher_forced_hits) {
  EvalRecord r;
  r.a = ex.a;
  r.b = ex.b;
  r.layout = ex.layout;
  r.truth = ex.answer;
  r.generated = generated;
  r.free_text = free_text;
  r.format_valid = all_digits(free_text) && free_text.size() == ex.answer.size();
  r.exact = generated == ex.answer;
  const std::size_t n = ex.answer.size();
  for (std::size_t i = 0; i < n; ++i) r.digit_correct.push_back(i < generated.size() && generated[i] == ex.answer[i]);
  // high2: leading two answer characters; low2: trailing two.
  r.high2_correct = r.digit_correct[0] && r.digit_correct[1];
  r.low2_correct = r.digit_correct[n - 2] && r.digit_correct[n - 1];
  r.tens_delta = generated.size() == n ? (generated[n - 2] - '0') - (ex.answer[n - 2] - '0') : 0;
  r.c2 = ex.c2;
  r.c3 = ex.c3;
  r.teacher_forced_hits = teacher_forced_hits;
  return r;
}

inline std::vector<EvalRecord> evaluate_examples(const Params& p, const std::vector<AdditionExample>& examples,
                                                 std::size_t chunk = 500) {
  std::vector<EvalRecord> out;
  out.reserve(examples.size());
  for (std::size_t start = 0; start < examples.size(); start += chunk) {
    const std::vector<AdditionExample> part(examples.begin() + static_cast<std::ptrdiff_t>(start),
                                            examples.begin() +
                                                static_cast<std::ptrdiff_t>(std::min(examples.size(), start + chunk)));
    const auto constrained = decode_batch(p, part, true);
    const auto free = decode_batch(p, part, false);
    const auto tf = answer_step_logits(p, part);
    for (std::size_t i = 0; i < part.size(); ++i) {
      int hits = 0;
      for (std::size_t k = 0; k < tf[i].size(); ++k) {
        const int id = detail::argmax_range(tf[i][k].data(), 0, static_cast<int>(tf[i][k].size()));
        if (id == Vocab::id_of(part[i].answer[k])) ++hits;
      }
      out.push_back(make_record(part[i], constrained[i], free[i], hits));
    }
  }
  return out;
}

// ----------------------------------------------------------------------------
// Metrics

enum class TensPopulation { all_records, errors_only };

inline std::optional<double> recomposition_metric(const std::vector<EvalRecord>& records) {
  std::size_t cond = 0, hit = 0;
  for (const auto& r : records) {
    if (!r.high2_correct) continue;
    ++cond;
    if (r.exact) ++hit;
  }
  if (cond == 0) return std::nullopt;
  return static_cast<double>(hit) / static_cast<double>(cond);
}

inline std::optional<double> tens_only_fraction(const std::vector<EvalRecord>& records) {
  std::size_t cond = 0, hit = 0;
  for (const auto& r : records) {
    if (!r.high2_correct || r.exact) continue;
    ++cond;
    const std::size_t tens = r.digit_correct.size() - 2;
    bool only = !r.digit_correct[tens];
    for (std::size_t i = 0; i < r.digit_correct.size(); ++i)
      if (i != tens && !r.digit_correct[i]) only = false;
    if (only) ++hit;
  }
  if (cond == 0) return std::nullopt;
  return static_cast<double>(hit) / static_cast<double>(cond);
}

inline std::optional<double> tens_residual_summary(const std::vector<EvalRecord>& records, int c2,
                                                   TensPopulation population = TensPopulation::all_records) {
  double total = 0.0;
  std::size_t n = 0;
  for (const auto& r : records) {
    if (r.c2 != c2) continue;
    if (population == TensPopulation::errors_only && r.tens_delta == 0) continue;
    total += r.tens_delta;
    ++n;
  }
  if (n == 0) return std::nullopt;
  return total / static_cast<double>(n);
}

struct MetricsSummary {
  std::size_t n = 0;
  double exact = 0.0;
  double format_valid = 0.0;
  double high2 = 0.0;
  double low2 = 0.0;
  double teacher_forced = 0.0;
  std::vector<double> digit_accuracy;
  std::optional<double> recomposition;
  std::optional<double> tens_only;
  std::optional<double> tens_residual_c2_0;
  std::optional<double> tens_residual_c2_1;
};

inline MetricsSummary summarize(const std::vector<EvalRecord>& records,
                                TensPopulation population = TensPopulation::all_records) {
  MetricsSummary m;
  m.n = records.size();
  if (records.empty()) return m;
  std::size_t tf_hits = 0, tf_total = 0;
  m.digit_accuracy.assign(records.front().digit_correct.size(), 0.0);
  for (const auto& r : records) {
    m.exact += r.exact;
    m.format_valid += r.format_valid;
    m.high2 += r.high2_correct;
    m.low2 += r.low2_correct;
    tf_hits += static_cast<std::size_t>(r.teacher_forced_hits);
    tf_total += r.digit_correct.size();
    for (std::size_t i = 0; i < m.digit_accuracy.size() && i < r.digit_correct.size(); ++i)
      m.digit_accuracy[i] += r.digit_correct[i];
  }
  const auto n = static_cast<double>(records.size());
  m.exact /= n;
  m.format_valid /= n;
  m.high2 /= n;
  m.low2 /= n;
  for (auto& d : m.digit_accuracy) d /= n;
  m.teacher_forced = static_cast<double>(tf_hits) / static_cast<double>(tf_total);
  m.recomposition = recomposition_metric(records);
  m.tens_only = tens_only_fraction(records);
  m.tens_residual_c2_0 = tens_residual_summary(records, 0, population);
  m.tens_residual_c2_1 = tens_residual_summary(records, 1, population);
  return m;
}

// ----------------------------------------------------------------------------
// Carry-flag diagnostics at the hundreds answer step (three-digit layout)

constexpr std::size_t kHundredsAnswerIndex = 1;

inline std::vector<std::vector<float>> hundreds_step_logits(const Params& p,
                                                            const std::vector<AdditionExample>& probes) {
  for (const auto& ex : probes)
    if (ex.layout != Layout::three_digit) throw std::invalid_argument("hundreds probes need the three-digit layout");
  auto all = answer_step_logits(p, probes);
  std::vector<std::vector<float>> out;
  for (auto& steps : all) out.push_back(std::move(steps[kHundredsAnswerIndex]));
  return out;
}

// Most frequent digit argmax at the hundreds step; ties go to the smaller digit.
inline int modal_hundreds_digit(const Params& p, const std::vector<AdditionExample>& probes) {
  std::array<int, 10> counts{};
  for (const auto& row : hundreds_step_logits(p, probes)) {
    ++counts[Vocab::id_digit(detail::argmax_range(row.data(), Vocab::digit_id(0), Vocab::digit_id(9) + 1))];
  }
  return static_cast<int>(std::max_element(counts.begin(), counts.end()) - counts.begin());
}

struct MarginSummary {
  int flag_digit = 0;
  double mean_margin = 0.0;
  std::vector<double> margins;
};

// Logit(flag digit) - Logit(true hundreds digit) under teacher forcing.
inline MarginSummary logit_margin_probe(const Params& p, const std::vector<AdditionExample>& probes, int flag_digit) {
  MarginSummary s;
  s.flag_digit = flag_digit;
  const auto logits = hundreds_step_logits(p, probes);
  for (std::size_t i = 0; i < probes.size(); ++i) {
    const int truth = probes[i].answer[kHundredsAnswerIndex] - '0';
    const double m = static_cast<double>(logits[i][static_cast<std::size_t>(Vocab::digit_id(flag_digit))]) -
                     static_cast<double>(logits[i][static_cast<std::size_t>(Vocab::digit_id(truth))]);
    s.margins.push_back(m);
    s.mean_margin += m;
  }
  if (!probes.empty()) s.mean_margin /= static_cast<double>(probes.size());
  return s;
}

// Mean attention mass on lower-order digit positions from the query that
// predicts the hundreds answer digit, averaged over layers, heads and examples.
inline double lower_digit_attention(const Params& p, const std::vector<AdditionExample>& probes) {
  if (probes.empty()) return 0.0;
  detail::require_uniform_layout(probes, "lower_digit_attention");
  const Layout layout = probes.front().layout;
  std::vector<std::vector<int>> rows;
  for (const auto& ex : probes) rows.push_back(tokenize(ex.text()));
  ForwardTrace trace;
  batch_logits(p, rows, std::vector<Layout>(probes.size(), layout), &trace);
  const auto slots = layout_slots(layout);
  const std::size_t t = rows.front().size();
  const auto heads = static_cast<std::size_t>(p.config.n_heads);
  const std::size_t query = static_cast<std::size_t>(prompt_length(layout)) + kHundredsAnswerIndex;
  double total = 0.0;
  std::size_t n = 0;
  for (const auto& probs : trace.attention)
    for (std::size_t b = 0; b < probes.size(); ++b)
      for (std::size_t h = 0; h < heads; ++h) {
        double mass = 0.0;
        for (std::size_t j = 0; j <= query; ++j)
          if (source_group(slots[j]) == SourceGroup::lower_digits) mass += probs[((b * heads + h) * t + query) * t + j];
        total += mass;
        ++n;
      }
  return total / static_cast<double>(n);
}

}  // namespace carrylab
