// Acceptance run: one PASS/FAIL line per criterion.
//
//   acceptance [--cache DIR] [--reports DIR] [--only 1,2,3]
//
// Criteria 4-8 train full sweeps; trained stages are cached in DIR so reruns
// only re-evaluate.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <tuple>

#include <CLI11.hpp>

#include "carrylab/allocator.hpp"
#include "carrylab/harness.hpp"
#include "carrylab/report.hpp"
#include "gradcheck.hpp"

using namespace carrylab;

namespace {

struct Verdict {
  bool pass = true;
  std::ostringstream detail;
  std::vector<std::string> failures;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      failures.push_back(what);
    }
  }

  std::string line() const {
    std::string out = detail.str();
    for (const auto& f : failures) out += " [failed: " + f + "]";
    return out;
  }
};

std::string fmt(double v, int digits = 4) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

double mean_of(const SweepReport& r, const std::string& family, const std::string& metric, Suite s) {
  auto cell = pooled(r, family, metric, s);
  return cell.mean ? *cell.mean : std::nan("");
}

// Seed-mean of a probe diagnostic for one family and probe set.
std::pair<double, double> probe_means(const SweepReport& r, const std::string& family, const std::string& set) {
  double margin = 0.0, attention = 0.0;
  std::size_t n = 0;
  for (const auto& run : r.runs) {
    if (run.family != family || !run.ok) continue;
    for (const auto& p : run.probes)
      if (p.probe_set == set) {
        margin += p.mean_margin;
        attention += p.lower_attention;
        ++n;
      }
  }
  if (n == 0) return {std::nan(""), std::nan("")};
  return {margin / static_cast<double>(n), attention / static_cast<double>(n)};
}

// ----------------------------------------------------------------------------

Verdict corpus_exactness() {
  Verdict v;
  const auto t0 = std::chrono::steady_clock::now();
  const auto all = gen_exhaustive_2digit();
  std::set<std::tuple<int, int, int, int>> seen;
  for (const auto& ex : all) {
    int carry = 0;
    for (int col = 0; col < 2; ++col) {
      const int da = digit_at(ex.a, col), db = digit_at(ex.b, col);
      seen.insert({col, da, db, carry});
      carry = (da + db + carry) / 10;
    }
  }
  // Reachable: units with carry-in 0, tens with carry-in 0 or 1.
  std::size_t missing = 0;
  for (int da = 0; da < 10; ++da)
    for (int db = 0; db < 10; ++db) {
      missing += !seen.count({0, da, db, 0});
      missing += !seen.count({1, da, db, 0});
      missing += !seen.count({1, da, db, 1});
    }
  const double secs = seconds_since(t0);
  v.detail << "examples " << all.size() << ", transitions " << seen.size() << "/300, missing " << missing << ", "
           << fmt(secs, 3) << " s";
  v.require(all.size() == 10000, "10,000 examples");
  v.require(missing == 0 && seen.size() == 300, "every reachable transition present");
  v.require(secs < 1.0, "runtime < 1 s");
  return v;
}

Verdict oracle_shape() {
  Verdict v;
  const auto t0 = std::chrono::steady_clock::now();
  const auto rows = audit_splits(0);
  const double secs = seconds_since(t0);
  auto get = [&](SplitName n) -> const OracleScores& {
    for (const auto& r : rows)
      if (r.name == n) return r.scores;
    throw std::logic_error("missing split");
  };
  const auto& iid = get(SplitName::iid_random);
  v.require(iid.local_coverage == 1.0 && iid.local_accuracy == 1.0 && iid.symmetry_accuracy == 1.0, "IID all 1.000");
  for (SplitName s : {SplitName::units_pair_ood, SplitName::tens_carry_ood, SplitName::carry_chain_ood}) {
    v.require(get(s).local_coverage == 0.0 && get(s).local_accuracy == 0.0,
              std::string(split_name(s)) + " local coverage/accuracy 0");
  }
  v.require(get(SplitName::carry_chain_ood).symmetry_accuracy == 0.0, "carry_chain symmetry 0");
  v.require(get(SplitName::ordered_commutativity_ood).symmetry_accuracy == 1.0, "ordered_commutativity symmetry 1");
  // Fractional goldens, recomputed by brute force in the unit tests.
  v.require(std::abs(get(SplitName::units_pair_ood).symmetry_accuracy - 0.400) < 5e-4, "units_pair symmetry 0.400");
  v.require(std::abs(get(SplitName::tens_carry_ood).symmetry_accuracy - 0.500) < 5e-4, "tens_carry symmetry 0.500");
  v.require(get(SplitName::ordered_commutativity_ood).local_coverage == 450.0 / 4950.0, "ordered_commutativity 0.091");
  v.require(secs < 10.0, "runtime < 10 s");
  v.detail << "iid 1/1/1; units_pair 0/0/" << fmt(get(SplitName::units_pair_ood).symmetry_accuracy, 3)
           << "; tens_carry 0/0/" << fmt(get(SplitName::tens_carry_ood).symmetry_accuracy, 3) << "; carry_chain 0/0/0"
           << "; ordered_commutativity " << fmt(get(SplitName::ordered_commutativity_ood).local_coverage, 3) << "/"
           << fmt(get(SplitName::ordered_commutativity_ood).local_accuracy, 3) << "/1; " << fmt(secs, 2) << " s";
  return v;
}

Verdict numerics() {
  using namespace carrylab::testing;
  using namespace carrylab::ops;
  Verdict v;
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<std::pair<std::string, CheckResult>> checks;
  {
    auto a = random_tensor({8, 7}, 1), b = random_tensor({7, 21}, 2);
    checks.emplace_back("matmul", gradcheck([&] { return project(matmul(a, b), 3); }, {a, b}));
  }
  {
    auto x = random_tensor({9, 12}, 11, true, 0.5), w = random_tensor({12, 10}, 12, true, 0.5);
    auto b = random_tensor({10}, 13);
    checks.emplace_back("linear", gradcheck([&] { return project(linear(x, w, b), 14); }, {x, w, b}));
  }
  {
    auto a = random_tensor({6, 10}, 7), b = random_tensor({6, 10}, 8);
    checks.emplace_back("add/mul", gradcheck([&] { return project(mul(add(a, b), b), 10); }, {a, b}));
  }
  {
    auto x = away_from_zero({12, 12}, 15);
    checks.emplace_back("relu", gradcheck([&] { return project(relu(x), 16); }, {x}));
  }
  {
    auto x = random_tensor({3 * 7, 7}, 19);
    checks.emplace_back("masked softmax",
                        gradcheck([&] { return project(softmax_rows(causal_mask(x)), 20); }, {x}));
  }
  {
    auto x = random_tensor({10, 16}, 21), g = random_tensor({16}, 22), b = random_tensor({16}, 23);
    checks.emplace_back("layer_norm", gradcheck([&] { return project(layer_norm(x, g, b), 24); }, {x, g, b}));
  }
  {
    auto table = random_tensor({13, 10}, 25);
    std::vector<int> ids{0, 3, 3, 12, 5, 1, 7, 3, 11, 2, 0, 9};
    checks.emplace_back("embedding", gradcheck([&] { return project(embedding(table, ids), 26); }, {table}));
  }
  {
    auto qkv = random_tensor({2 * 5, 3 * 8}, 27);
    checks.emplace_back("attention", gradcheck([&] { return project(causal_attention(qkv, 2, 5, 2), 28); }, {qkv}));
  }
  {
    auto logits = random_tensor({12, 13}, 29, true, 2.0);
    std::vector<int> targets{1, -1, 4, 12, 0, -1, 7, 7, 3, 10, -1, 5};
    checks.emplace_back("cross_entropy", gradcheck([&] { return cross_entropy(logits, targets); }, {logits}));
  }
  double worst = 0.0;
  for (const auto& [name, r] : checks) {
    worst = std::max(worst, r.worst);
    v.require(r.checked >= 100 && r.kinks == 0 && r.worst <= kRelTol, "gradient of " + name);
  }

  ModelConfig cfg;
  Stage stage{"base", {{PackName::base2digit, 0.5}, {PackName::mixed_layout, 0.5}}, 40};
  stage.batch_size = 64;
  const TrainPlan plan{{stage}};
  const auto a = train_plan(cfg, plan, 7), b = train_plan(cfg, plan, 7);
  v.require(a.params.checksum() == b.params.checksum() && a.losses == b.losses, "bit-identical repeat training");
  const double secs = seconds_since(t0);
  v.require(secs < 60.0, "runtime < 1 min");
  v.detail << checks.size() << " layer types, worst relative error " << fmt(worst, 5) << "; repeat checksum "
           << std::hex << a.params.checksum() << std::dec << " == " << (a.params.checksum() == b.params.checksum())
           << "; " << fmt(secs, 1) << " s";
  return v;
}

Verdict layout_barrier(const SweepReport& r) {
  Verdict v;
  const auto in = Suite::in_support_2digit, lay = Suite::layout_shift_only_lowrange3;
  const double abs_in = mean_of(r, "absolute", "exact", in), abs_lay = mean_of(r, "absolute", "exact", lay);
  const double mixed_lay = mean_of(r, "mixed_layout", "exact", lay);
  const double tf_gap = mean_of(r, "mixed_layout", "teacher_forced", lay) - mean_of(r, "absolute", "teacher_forced", lay);
  v.require(abs_in >= 0.80, "absolute in-support >= 0.80");
  v.require(abs_lay <= 0.05, "absolute layout <= 0.05");
  v.require(mixed_lay >= 0.25, "mixed_layout layout >= 0.25");
  double best_other = 0.0;
  for (const auto& f : r.config.families)
    if (f != "mixed_layout") best_other = std::max(best_other, mean_of(r, f, "exact", lay));
  v.require(mixed_lay > best_other, "mixed_layout dominates on the layout suite");
  v.require(tf_gap >= 0.3, "teacher-forced gap >= 0.3");
  v.detail << "absolute in-support " << fmt(abs_in) << ", layout " << fmt(abs_lay) << "; mixed layout "
           << fmt(mixed_lay) << " vs best other " << fmt(best_other) << "; teacher-forced gap " << fmt(tf_gap);
  return v;
}

Verdict carry_flag(const SweepReport& r) {
  Verdict v;
  for (const char* set : {"probe_h0", "probe_h1", "probe_t1"}) {
    const auto base = probe_means(r, "base", set), ctrl = probe_means(r, "ctrl_dup", set),
               probe = probe_means(r, "probe_all", set);
    v.require(base.first > 0 && ctrl.first > 0, std::string("positive margins for base/ctrl_dup on ") + set);
    v.require(probe.first < 0, std::string("negative margin for probe_all on ") + set);
    v.require(probe.second < base.second, std::string("lower-digit attention drops on ") + set);
    v.detail << set << " margin " << fmt(base.first, 1) << "/" << fmt(ctrl.first, 1) << "/" << fmt(probe.first, 1)
             << " attn " << fmt(base.second, 3) << "->" << fmt(probe.second, 3) << "; ";
  }
  for (Suite s : {Suite::true3_hundreds_no_incarry, Suite::true3_hundreds_with_incarry}) {
    const double p = mean_of(r, "probe_all", "exact", s), c = mean_of(r, "ctrl_dup", "exact", s);
    v.require(p > c, "probe_all > ctrl_dup on " + std::string(suite_name(s)));
    v.detail << suite_name(s) << " " << fmt(p) << " vs " << fmt(c) << "; ";
  }
  return v;
}

void binding_order(Verdict& v, const SweepReport& r) {
  for (Suite s : kTrue3Suites)
    for (const char* m : {"exact", "recomposition"}) {
      const double th = mean_of(r, "tailhigh", m, s), t = mean_of(r, "tail", m, s);
      const double floor = std::max(mean_of(r, "ctrl3", m, s), mean_of(r, "highonly", m, s));
      v.require(th > t && t > floor, std::string(m) + " order on " + std::string(suite_name(s)));
      v.detail << suite_name(s) << " " << m << " " << fmt(th) << ">" << fmt(t) << ">" << fmt(floor) << "; ";
    }
}

Verdict binding_small(const SweepReport& r) {
  Verdict v;
  binding_order(v, r);
  return v;
}

Verdict bridge(const SweepReport& r) {
  Verdict v;
  binding_order(v, r);
  for (Suite s : kTrue3Suites) {
    const auto pc = compare_families(r, "tailhigh", "tail", "exact", s);
    v.require(pc.wins == static_cast<int>(r.config.seeds.size()), "tailhigh beats tail every seed on " +
                                                                       std::string(suite_name(s)));
    const double tens_only = mean_of(r, "tailhigh", "tens_only", s);
    v.require(tens_only >= 0.8, "tens-only >= 0.8 on " + std::string(suite_name(s)));
    v.detail << suite_name(s) << " wins " << pc.wins << "/" << r.config.seeds.size() << " tens-only " << fmt(tens_only)
             << "; ";
  }
  return v;
}

Verdict late_tens(const SweepReport& r) {
  Verdict v;
  const auto th = Suite::true3_thousands_carry;
  const auto pc = compare_families(r, "tenspolarity", "ctrl4", "exact", th);
  v.require(pc.wins >= 7 && pc.mean_delta > 0, "tenspolarity beats ctrl4 in >= 7/10 seeds with positive mean");
  v.detail << "thousands wins " << pc.wins << "/" << pc.seeds.size() << " mean delta " << fmt(pc.mean_delta) << "; ";
  const double nc0 = mean_of(r, "ctrl4", "tens_residual_c2_0", Suite::true3_hundreds_no_incarry);
  const double wc1 = mean_of(r, "ctrl4", "tens_residual_c2_1", Suite::true3_hundreds_with_incarry);
  const double c0 = mean_of(r, "ctrl4", "tens_residual_c2_0", th), c1 = mean_of(r, "ctrl4", "tens_residual_c2_1", th);
  v.require(nc0 < 0 && c0 < 0, "ctrl4 under-shoots on c2=0 branches");
  v.require(wc1 > 0 && c1 > 0, "ctrl4 over-shoots on c2=1 branches");
  const double p0 = mean_of(r, "tenspolarity", "tens_residual_c2_0", th);
  const double p1 = mean_of(r, "tenspolarity", "tens_residual_c2_1", th);
  v.require(std::abs(p0) < std::abs(c0) && std::abs(p1) < std::abs(c1), "tenspolarity contracts both thousands branches");
  v.detail << "ctrl4 residuals no_incarry " << fmt(nc0, 3) << ", with_incarry " << fmt(wc1, 3) << ", thousands c2=0 "
           << fmt(c0, 3) << " c2=1 " << fmt(c1, 3) << "; tenspolarity thousands " << fmt(p0, 3) << " / " << fmt(p1, 3);
  return v;
}

Verdict metric_algebra() {
  Verdict v;
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(derive_seed(0, "acceptance-records"));
  std::vector<EvalRecord> records;
  std::size_t implication = 0, tens_iff = 0;
  for (int i = 0; i < 20000; ++i) {
    const int a = static_cast<int>(uniform_index(rng, 1000)), b = static_cast<int>(uniform_index(rng, 1000));
    const auto ex = render(a, b, Layout::three_digit);
    std::string g = ex.answer;
    for (auto& ch : g)
      if (uniform01(rng) < 0.25) ch = static_cast<char>('0' + uniform_index(rng, 10));
    auto r = make_record(ex, g, g, 4);
    implication += r.exact && !(r.high2_correct && r.low2_correct);
    tens_iff += (r.tens_delta == 0) != (g[2] == ex.answer[2]);
    records.push_back(std::move(r));
  }
  v.require(implication == 0, "exact implies high2 and low2");
  v.require(tens_iff == 0, "tens delta zero iff tens correct");
  std::vector<EvalRecord> no_high2;
  for (const auto& r : records)
    if (!r.high2_correct) no_high2.push_back(r);
  v.require(!recomposition_metric(no_high2).has_value() && !recomposition_metric({}).has_value(),
            "P(exact|high2) absent on empty conditioning sets");
  std::map<std::uint64_t, double> a;
  for (std::uint64_t s = 0; s < 10; ++s) a[s] = uniform01(rng);
  const auto pc = paired_wins(a, a, "exact", Suite::true3_thousands_carry);
  v.require(pc.ties == 10 && pc.wins == 0 && pc.losses == 0 && pc.mean_delta == 0.0, "paired_wins(A,A) all ties");
  const double secs = seconds_since(t0);
  v.require(secs < 1.0, "runtime < 1 s");
  v.detail << records.size() << " synthetic records, " << no_high2.size() << " without high2; paired_wins(A,A) "
           << pc.wins << "/" << pc.losses << "/" << pc.ties << "; " << fmt(secs, 3) << " s";
  return v;
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  CLI::App app{"carrylab acceptance criteria"};
  std::string cache_dir = "acceptance_cache", reports_dir = "acceptance_reports";
  std::vector<int> only;
  app.add_option("--cache", cache_dir, "Stage cache directory");
  app.add_option("--reports", reports_dir, "Where sweep reports are written");
  app.add_option("--only", only, "Criteria to run")->delimiter(',');
  CLI11_PARSE(app, argc, argv);

  StageCache cache(cache_dir);
  auto sweep = [&](Study study) {
    auto cfg = default_sweep(study);
    cfg.keep_records = false;
    const auto t0 = std::chrono::steady_clock::now();
    auto report = run_study(cfg, cache, [&](const RunResult& r) {
      std::cerr << "  [" << fmt(seconds_since(t0), 0) << " s] " << study_name(study) << " " << r.family << " seed "
                << r.seed << (r.ok ? "" : " FAILED: " + r.error) << '\n';
    });
    emit_report(report, std::filesystem::path(reports_dir) / std::string(study_name(study)), false);
    return report;
  };
  auto holes = [](Verdict v, const SweepReport& r) {
    for (const auto& h : r.holes()) v.require(false, "run failed: " + h);
    return v;
  };

  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria{
      {"corpus exactness", corpus_exactness},
      {"oracle audit shape", oracle_shape},
      {"numerics", numerics},
      {"layout barrier", [&] { auto r = sweep(Study::position_family); return holes(layout_barrier(r), r); }},
      {"carry flag", [&] { auto r = sweep(Study::carry_probe); return holes(carry_flag(r), r); }},
      {"binding order", [&] { auto r = sweep(Study::binding_small); return holes(binding_small(r), r); }},
      {"bridge", [&] { auto r = sweep(Study::binding_bridge); return holes(bridge(r), r); }},
      {"tens residual", [&] { auto r = sweep(Study::late_tens); return holes(late_tens(r), r); }},
      {"metric algebra", metric_algebra},
  };

  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v.pass = false;
      v.detail << "error: " << e.what();
    }
    failed += !v.pass;
    std::cout << "criterion " << id << " (" << criteria[i].first << "): " << (v.pass ? "PASS" : "FAIL") << "  "
              << v.line() << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
