#pragma once

// Seed sweeps over study families with shared-stage reuse and paired statistics.

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "carrylab/eval.hpp"
#include "carrylab/packs.hpp"
#include "carrylab/suites.hpp"
#include "carrylab/train.hpp"

namespace carrylab {

struct SweepConfig {
  Study study = Study::position_family;
  std::vector<std::string> families;
  std::vector<std::uint64_t> seeds;
  StageLengths lengths;
  LossOptions loss;
  std::vector<Suite> suites{kAllSuites.begin(), kAllSuites.end()};
  std::size_t suite_size = 1000;
  TensPopulation tens_population = TensPopulation::all_records;
  bool keep_records = true;
  std::string cache_dir;  // empty: in-memory reuse only
  int jobs = 1;
};

inline SweepConfig default_sweep(Study study) {
  SweepConfig c;
  c.study = study;
  c.families = study_families(study);
  const std::uint64_t n = study == Study::late_tens ? 10 : 5;
  for (std::uint64_t s = 0; s < n; ++s) c.seeds.push_back(s);
  return c;
}

// Hundreds-step carry diagnostics on one probe set.
struct ProbeDiagnostic {
  std::string probe_set;
  int flag_digit = 0;
  double mean_margin = 0.0;
  double lower_attention = 0.0;
};

struct RunResult {
  std::string family;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  float final_loss = 0.0f;
  std::uint64_t checksum = 0;
  std::map<Suite, MetricsSummary> metrics;
  std::map<Suite, std::vector<EvalRecord>> records;
  std::vector<ProbeDiagnostic> probes;
};

struct PairedComparison {
  std::string family_a;
  std::string family_b;
  Suite suite = Suite::in_support_2digit;
  std::string metric;
  std::vector<std::uint64_t> seeds;
  std::vector<double> deltas;  // a - b per seed
  int wins = 0;
  int losses = 0;
  int ties = 0;
  double mean_delta = 0.0;
};

struct PooledCell {
  std::optional<double> mean;
  std::size_t seeds = 0;
};

struct SweepReport {
  SweepConfig config;
  std::vector<RunResult> runs;  // sorted by (family order, seed)
  std::vector<PairedComparison> paired;

  const RunResult* find(const std::string& family, std::uint64_t seed) const {
    for (const auto& r : runs)
      if (r.family == family && r.seed == seed) return &r;
    return nullptr;
  }
  std::vector<std::string> holes() const {
    std::vector<std::string> out;
    for (const auto& r : runs)
      if (!r.ok) out.push_back(r.family + "/seed" + std::to_string(r.seed) + ": " + r.error);
    return out;
  }
};

// ----------------------------------------------------------------------------
// Metric access

inline const std::vector<std::string>& metric_names() {
  static const std::vector<std::string> names{"exact",         "format_valid",       "high2",
                                              "low2",          "teacher_forced",     "recomposition",
                                              "tens_only",     "tens_residual_c2_0", "tens_residual_c2_1"};
  return names;
}

inline std::optional<double> metric_value(const MetricsSummary& m, const std::string& name) {
  if (name == "exact") return m.exact;
  if (name == "format_valid") return m.format_valid;
  if (name == "high2") return m.high2;
  if (name == "low2") return m.low2;
  if (name == "teacher_forced") return m.teacher_forced;
  if (name == "recomposition") return m.recomposition;
  if (name == "tens_only") return m.tens_only;
  if (name == "tens_residual_c2_0") return m.tens_residual_c2_0;
  if (name == "tens_residual_c2_1") return m.tens_residual_c2_1;
  throw std::invalid_argument("unknown metric: " + name);
}

// Per-seed values of one metric for one family; failed runs and absent
// conditional metrics are skipped.
inline std::map<std::uint64_t, double> seed_values(const SweepReport& report, const std::string& family,
                                                   const std::string& metric, Suite suite) {
  std::map<std::uint64_t, double> out;
  for (const auto& r : report.runs) {
    if (r.family != family || !r.ok) continue;
    auto it = r.metrics.find(suite);
    if (it == r.metrics.end()) continue;
    if (auto v = metric_value(it->second, metric)) out[r.seed] = *v;
  }
  return out;
}

inline PooledCell pooled(const SweepReport& report, const std::string& family, const std::string& metric, Suite suite) {
  const auto values = seed_values(report, family, metric, suite);
  PooledCell cell;
  cell.seeds = values.size();
  if (values.empty()) return cell;
  double total = 0.0;
  for (const auto& [seed, v] : values) total += v;
  cell.mean = total / static_cast<double>(values.size());
  return cell;
}

inline PairedComparison paired_wins(const std::map<std::uint64_t, double>& a, const std::map<std::uint64_t, double>& b,
                                    const std::string& metric, Suite suite) {
  std::set<std::uint64_t> sa, sb;
  for (const auto& [s, v] : a) sa.insert(s);
  for (const auto& [s, v] : b) sb.insert(s);
  if (sa != sb) throw std::invalid_argument("paired_wins: seed sets differ for metric " + metric);
  PairedComparison pc;
  pc.metric = metric;
  pc.suite = suite;
  for (const auto& [s, va] : a) {
    const double d = va - b.at(s);
    pc.seeds.push_back(s);
    pc.deltas.push_back(d);
    if (d > 0) ++pc.wins;
    else if (d < 0) ++pc.losses;
    else ++pc.ties;
    pc.mean_delta += d;
  }
  if (!pc.deltas.empty()) pc.mean_delta /= static_cast<double>(pc.deltas.size());
  return pc;
}

// Paired comparison restricted to seeds where both families produced a value.
inline PairedComparison compare_families(const SweepReport& report, const std::string& a, const std::string& b,
                                         const std::string& metric, Suite suite) {
  auto va = seed_values(report, a, metric, suite);
  auto vb = seed_values(report, b, metric, suite);
  std::erase_if(va, [&](const auto& kv) { return !vb.count(kv.first); });
  std::erase_if(vb, [&](const auto& kv) { return !va.count(kv.first); });
  auto pc = paired_wins(va, vb, metric, suite);
  pc.family_a = a;
  pc.family_b = b;
  return pc;
}

// Family pairs reported for each study, (treatment, reference).
inline std::vector<std::pair<std::string, std::string>> study_pairs(Study s) {
  switch (s) {
    case Study::position_family:
      return {{"mixed_layout", "absolute"}, {"coupled_significance", "absolute"}, {"digit_aware", "absolute"},
              {"symmetry_aware", "absolute"}, {"none", "absolute"}};
    case Study::carry_probe: return {{"probe_all", "ctrl_dup"}, {"ctrl_dup", "base"}, {"probe_all", "base"}};
    case Study::binding_small:
    case Study::binding_bridge:
      return {{"tailhigh", "tail"}, {"tailhigh", "ctrl3"}, {"tailhigh", "highonly"}, {"tail", "ctrl3"},
              {"tail", "highonly"}};
    case Study::late_tens: return {{"tenspolarity", "ctrl4"}, {"tensboundary", "ctrl4"}, {"tenspolarity", "tensboundary"}};
  }
  return {};
}

inline void finalize_pairs(SweepReport& report) {
  report.paired.clear();
  const auto& fams = report.config.families;
  auto has = [&](const std::string& f) { return std::find(fams.begin(), fams.end(), f) != fams.end(); };
  for (const auto& [a, b] : study_pairs(report.config.study)) {
    if (!has(a) || !has(b)) continue;
    for (Suite s : report.config.suites)
      for (const char* metric : {"exact", "recomposition"})
        report.paired.push_back(compare_families(report, a, b, metric, s));
  }
}

// Content digest of a pack, so cached stages go stale when a pack changes.
inline std::uint64_t pack_digest(const PackSpec& pack) {
  std::uint64_t h = hash_tag(pack_name(pack.name));
  for (const auto& ex : pack.examples) h = mix64(h ^ (static_cast<std::uint64_t>(ex.a) << 32 | static_cast<std::uint64_t>(ex.b) << 1 | (ex.layout == Layout::three_digit)));
  return h;
}

// ----------------------------------------------------------------------------
// Stage cache: training state after every stage prefix, keyed by everything
// that determines it. Families sharing leading stages reuse the same state.

class StageCache {
 public:
  explicit StageCache(std::string dir = {}) : dir_(std::move(dir)) {
    if (!dir_.empty()) std::filesystem::create_directories(dir_);
  }

  static std::string key(const ModelConfig& cfg, std::uint64_t seed, const LossOptions& loss,
                         const std::vector<Stage>& prefix) {
    std::ostringstream os;
    os << "L" << cfg.n_layers << "C" << cfg.width << "H" << cfg.n_heads << "T" << cfg.context_length << "V"
       << cfg.vocab_size << "P" << family_name(cfg.position) << "|seed" << seed << "|answer_only" << loss.answer_only;
    for (const auto& s : prefix) {
      os << '|' << s.describe();
      for (const auto& m : s.mixture) {
        os << ':' << std::hex << pack_digest(build_pack(m.pack, default_pack_size(m.pack), seed)) << std::dec;
      }
    }
    return os.str();
  }

  std::optional<TrainState> get(const std::string& k) {
    {
      std::lock_guard lock(mu_);
      auto it = mem_.find(k);
      if (it != mem_.end()) return it->second.clone();
    }
    if (dir_.empty()) return std::nullopt;
    std::ifstream is(path(k), std::ios::binary);
    if (!is) return std::nullopt;
    std::string stored;
    std::getline(is, stored);
    if (stored != k) return std::nullopt;
    auto st = read_train_state(is);
    std::lock_guard lock(mu_);
    mem_.emplace(k, st.clone());
    return st;
  }

  void put(const std::string& k, const TrainState& st) {
    {
      std::lock_guard lock(mu_);
      mem_.insert_or_assign(k, st.clone());
    }
    if (dir_.empty()) return;
    const auto tmp = path(k) + ".tmp";
    {
      std::ofstream os(tmp, std::ios::binary);
      if (!os) throw std::runtime_error("cannot write stage cache: " + tmp);
      os << k << '\n';
      write_train_state(os, st);
    }
    std::filesystem::rename(tmp, path(k));
  }

 private:
  std::string path(const std::string& k) const {
    std::ostringstream os;
    os << dir_ << "/" << std::hex << hash_tag(k) << ".state";
    return os.str();
  }

  std::string dir_;
  std::mutex mu_;
  std::map<std::string, TrainState> mem_;
};

// Trains `plan` from scratch or from the longest cached prefix.
inline TrainState train_with_cache(const ModelConfig& cfg, const TrainPlan& plan, std::uint64_t seed,
                                   const LossOptions& loss, StageCache& cache) {
  std::optional<TrainState> state;
  std::size_t done = 0;
  for (std::size_t n = plan.stages.size(); n > 0; --n) {
    std::vector<Stage> prefix(plan.stages.begin(), plan.stages.begin() + static_cast<std::ptrdiff_t>(n));
    if ((state = cache.get(StageCache::key(cfg, seed, loss, prefix)))) {
      done = n;
      break;
    }
  }
  if (!state) state = start_training(cfg, seed);
  PackCache packs(seed);
  for (std::size_t i = done; i < plan.stages.size(); ++i) {
    train_stage(*state, plan.stages[i], seed, packs, loss);
    std::vector<Stage> prefix(plan.stages.begin(), plan.stages.begin() + static_cast<std::ptrdiff_t>(i + 1));
    cache.put(StageCache::key(cfg, seed, loss, prefix), *state);
  }
  return std::move(*state);
}

// ----------------------------------------------------------------------------
// Probe sets for hundreds-step diagnostics

// Fixed measurement sets shared by every run: all zero-tail probes and 200
// draws from each of the other two sub-families.
inline std::vector<std::pair<std::string, std::vector<AdditionExample>>> probe_sets() {
  std::vector<std::pair<std::string, std::vector<AdditionExample>>> out;
  for (PackName p : {PackName::probe_h0, PackName::probe_h1, PackName::probe_t1}) {
    auto examples = p == PackName::probe_h0 ? detail::probe_zero_tails() : build_pack(p, 200, 0).examples;
    out.emplace_back(std::string(pack_name(p)), std::move(examples));
  }
  return out;
}

// Flag digits are read off `reference` (the base-stage model of the same seed).
inline std::vector<ProbeDiagnostic> carry_diagnostics(const Params& model, const Params& reference) {
  std::vector<ProbeDiagnostic> out;
  for (const auto& [name, probes] : probe_sets()) {
    ProbeDiagnostic d;
    d.probe_set = name;
    d.flag_digit = modal_hundreds_digit(reference, probes);
    d.mean_margin = logit_margin_probe(model, probes, d.flag_digit).mean_margin;
    d.lower_attention = lower_digit_attention(model, probes);
    out.push_back(d);
  }
  return out;
}

inline bool study_has_carry_diagnostics(Study s) { return s != Study::position_family; }

// ----------------------------------------------------------------------------
// Running a study

inline RunResult run_one(const SweepConfig& cfg, const std::string& family, std::uint64_t seed, StageCache& cache) {
  RunResult r;
  r.family = family;
  r.seed = seed;
  try {
    const auto plan = staged_plan(cfg.study, family, cfg.lengths);
    const auto model = study_model(cfg.study, family_position(cfg.study, family));
    TrainState st = train_with_cache(model, plan, seed, cfg.loss, cache);
    r.final_loss = st.losses.empty() ? 0.0f : st.losses.back();
    r.checksum = st.params.checksum();
    for (Suite s : cfg.suites) {
      auto records = evaluate_examples(st.params, sample_suite(s, cfg.suite_size, derive_seed(seed, "eval")));
      r.metrics[s] = summarize(records, cfg.tens_population);
      if (cfg.keep_records) r.records[s] = std::move(records);
    }
    if (study_has_carry_diagnostics(cfg.study)) {
      const TrainPlan base{{plan.stages.front()}};
      TrainState ref = train_with_cache(model, base, seed, cfg.loss, cache);
      r.probes = carry_diagnostics(st.params, ref.params);
    }
    r.ok = true;
  } catch (const std::exception& e) {
    r.ok = false;
    r.error = e.what();
  }
  return r;
}

using ProgressFn = std::function<void(const RunResult&)>;

inline void validate_sweep(const SweepConfig& cfg) {
  if (cfg.families.empty()) throw std::invalid_argument("sweep: no families");
  if (cfg.seeds.empty()) throw std::invalid_argument("sweep: no seeds");
  const auto known = study_families(cfg.study);
  for (const auto& f : cfg.families) {
    if (std::find(known.begin(), known.end(), f) == known.end()) {
      throw std::invalid_argument("study " + std::string(study_name(cfg.study)) + " has no family '" + f + "'");
    }
  }
  std::set<std::uint64_t> unique(cfg.seeds.begin(), cfg.seeds.end());
  if (unique.size() != cfg.seeds.size()) throw std::invalid_argument("sweep: duplicate seeds");
}

// Seeds are distributed over workers; each worker runs every family of its
// seed in order, so shared stages are trained once per seed.
inline SweepReport run_study(const SweepConfig& cfg, StageCache& cache, const ProgressFn& progress = {}) {
  validate_sweep(cfg);
  std::vector<std::vector<RunResult>> by_seed(cfg.seeds.size());
  std::atomic<std::size_t> next{0};
  std::mutex progress_mu;
  auto worker = [&] {
    for (std::size_t i; (i = next++) < cfg.seeds.size();) {
      for (const auto& fam : cfg.families) {
        by_seed[i].push_back(run_one(cfg, fam, cfg.seeds[i], cache));
        if (progress) {
          std::lock_guard lock(progress_mu);
          progress(by_seed[i].back());
        }
      }
    }
  };
  const int jobs = std::max(1, std::min<int>(cfg.jobs, static_cast<int>(cfg.seeds.size())));
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  SweepReport report;
  report.config = cfg;
  for (std::size_t f = 0; f < cfg.families.size(); ++f)
    for (std::size_t i = 0; i < cfg.seeds.size(); ++i) report.runs.push_back(std::move(by_seed[i][f]));
  std::sort(report.runs.begin(), report.runs.end(), [&](const RunResult& x, const RunResult& y) {
    auto rank = [&](const std::string& f) { return std::find(cfg.families.begin(), cfg.families.end(), f) - cfg.families.begin(); };
    return std::pair(rank(x.family), x.seed) < std::pair(rank(y.family), y.seed);
  });
  finalize_pairs(report);
  return report;
}

inline SweepReport run_study(const SweepConfig& cfg, const ProgressFn& progress = {}) {
  StageCache cache(cfg.cache_dir);
  return run_study(cfg, cache, progress);
}

}  // namespace carrylab
