// carrylab command line: corpora, split audits, training, evaluation, sweeps.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "carrylab/allocator.hpp"
#include "carrylab/corpus.hpp"
#include "carrylab/eval.hpp"
#include "carrylab/harness.hpp"
#include "carrylab/packs.hpp"
#include "carrylab/report.hpp"
#include "carrylab/suites.hpp"
#include "carrylab/train.hpp"

namespace fs = std::filesystem;
using namespace carrylab;

namespace {

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  // "0-4" or "0,1,2"
  std::vector<std::uint64_t> out;
  std::stringstream ss(text);
  for (std::string part; std::getline(ss, part, ',');) {
    if (part.empty()) continue;
    const auto dash = part.find('-');
    if (dash == std::string::npos) {
      out.push_back(std::stoull(part));
    } else {
      const auto lo = std::stoull(part.substr(0, dash)), hi = std::stoull(part.substr(dash + 1));
      if (hi < lo) throw std::invalid_argument("bad seed range: " + part);
      for (auto s = lo; s <= hi; ++s) out.push_back(s);
    }
  }
  return out;
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  for (std::string part; std::getline(ss, part, ',');)
    if (!part.empty()) out.push_back(part);
  return out;
}

json load_json(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open config " + path);
  return json::parse(is);
}

std::ostream& open_or_stdout(const std::string& path, std::ofstream& file) {
  if (path.empty() || path == "-") return std::cout;
  file.open(path);
  if (!file) throw std::runtime_error("cannot write " + path);
  return file;
}

struct SweepArgs {
  std::string config;
  std::string study;
  std::string families;
  std::string seeds;
  std::string out;
  std::string cache;
  int jobs = 1;
  long base_steps = -1;
  long repair_steps = -1;
  long suite_size = -1;
  bool answer_only = false;
  bool no_records = false;
};

SweepConfig resolve_sweep(const SweepArgs& a) {
  SweepConfig c;
  if (!a.config.empty()) c = sweep_from_json(load_json(a.config));
  if (!a.study.empty()) {
    const Study s = parse_study(a.study);
    if (a.config.empty() || s != c.study) {
      auto fresh = default_sweep(s);
      fresh.lengths = c.lengths;
      fresh.loss = c.loss;
      fresh.suite_size = c.suite_size;
      fresh.tens_population = c.tens_population;
      c = fresh;
    }
  }
  if (a.config.empty() && a.study.empty()) throw std::invalid_argument("sweep needs --study or --config");
  if (!a.families.empty()) c.families = split_list(a.families);
  if (!a.seeds.empty()) c.seeds = parse_seeds(a.seeds);
  if (a.base_steps >= 0) c.lengths.base_steps = static_cast<std::size_t>(a.base_steps);
  if (a.repair_steps >= 0) c.lengths.repair_steps = static_cast<std::size_t>(a.repair_steps);
  if (a.suite_size > 0) c.suite_size = static_cast<std::size_t>(a.suite_size);
  if (a.answer_only) c.loss.answer_only = true;
  c.keep_records = !a.no_records;
  c.cache_dir = a.cache;
  c.jobs = a.jobs;
  return c;
}

void print_pooled(const SweepReport& report) {
  std::printf("%-22s", "family");
  for (Suite s : report.config.suites) std::printf(" %14.14s", std::string(suite_name(s)).c_str());
  std::printf("\n");
  for (const auto& f : report.config.families) {
    std::printf("%-22s", f.c_str());
    for (Suite s : report.config.suites) {
      const auto cell = pooled(report, f, "exact", s);
      if (cell.mean) std::printf(" %14.4f", *cell.mean);
      else std::printf(" %14s", "-");
    }
    std::printf("\n");
  }
}

int cmd_generate(const std::string& what, const std::string& name, std::size_t size, std::uint64_t seed,
                 const std::string& out) {
  std::ofstream file;
  std::ostream& os = open_or_stdout(out, file);
  if (what == "exhaustive2") {
    write_dataset(os, gen_exhaustive_2digit());
  } else if (what == "lowrange3") {
    write_dataset(os, gen_lowrange3());
  } else if (what == "pack") {
    const auto p = parse_pack(name);
    write_pack(os, build_pack(p, size ? size : default_pack_size(p), seed));
  } else if (what == "suite") {
    write_dataset(os, sample_suite(parse_suite(name), size ? size : 1000, seed));
  } else if (what == "split") {
    const auto split = build_split(parse_split(name), seed);
    os << "# split=" << split_name(split.name) << " train=" << split.train.size() << " test=" << split.test.size()
       << " definition=" << split_definition(split.name) << '\n';
    os << "# train\n";
    write_dataset(os, split.train);
    os << "# test\n";
    write_dataset(os, split.test);
  } else {
    throw std::invalid_argument("unknown generate target: " + what);
  }
  return 0;
}

int cmd_audit(std::uint64_t seed, const std::string& out) {
  const auto rows = audit_splits(seed);
  std::cout << audit_text(rows);
  if (!out.empty()) {
    fs::create_directories(out);
    std::ofstream(fs::path(out) / "audit_splits.csv") << audit_csv(rows);
  }
  return 0;
}

int cmd_train(const std::string& study_text, const std::string& family, std::uint64_t seed, long base_steps,
              long repair_steps, bool answer_only, const std::string& out) {
  const Study study = parse_study(study_text);
  StageLengths len;
  if (base_steps >= 0) len.base_steps = static_cast<std::size_t>(base_steps);
  if (repair_steps >= 0) len.repair_steps = static_cast<std::size_t>(repair_steps);
  const auto plan = staged_plan(study, family, len);
  const auto model = study_model(study, family_position(study, family));
  LossOptions loss{answer_only};
  TrainState st = start_training(model, seed);
  PackCache packs(seed);
  for (const auto& stage : plan.stages) {
    const auto t0 = std::chrono::steady_clock::now();
    train_stage(st, stage, seed, packs, loss);
    const double sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::fprintf(stderr, "stage %-14s %6zu steps  %6.1fs  loss %.4f\n", stage.name.c_str(), stage.steps, sec,
                 st.losses.empty() ? 0.0 : st.losses.back());
  }
  save_checkpoint(st.params, out);
  std::ofstream curve(out + ".loss.csv");
  curve << "step,loss\n";
  for (std::size_t i = 0; i < st.losses.size(); ++i) curve << i << ',' << st.losses[i] << '\n';
  std::printf("checkpoint %s  params %zu  checksum %016llx\n", out.c_str(), st.params.parameter_count(),
              static_cast<unsigned long long>(st.params.checksum()));
  return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& suites, std::size_t n, std::uint64_t seed,
             const std::string& out) {
  const Params p = load_checkpoint(checkpoint);
  std::vector<Suite> chosen;
  if (suites.empty()) chosen.assign(kAllSuites.begin(), kAllSuites.end());
  else
    for (const auto& s : split_list(suites)) chosen.push_back(parse_suite(s));
  std::ofstream records_file, summary_file;
  if (!out.empty()) {
    fs::create_directories(out);
    records_file.open(fs::path(out) / "records.jsonl");
    summary_file.open(fs::path(out) / "summary.csv");
    summary_file << "suite,n,exact,format_valid,high2,low2,teacher_forced,recomposition,tens_only,"
                    "tens_residual_c2_0,tens_residual_c2_1\n";
  }
  for (Suite s : chosen) {
    const auto records = evaluate_examples(p, sample_suite(s, n, derive_seed(seed, "eval")));
    const auto m = summarize(records);
    std::printf("%-30s exact %.4f  tf %.4f  format %.4f  high2 %.4f  low2 %.4f\n",
                std::string(suite_name(s)).c_str(), m.exact, m.teacher_forced, m.format_valid, m.high2, m.low2);
    if (!out.empty()) {
      for (const auto& r : records) {
        json j = to_json(r);
        j["suite"] = suite_name(s);
        records_file << j.dump() << '\n';
      }
      summary_file << suite_name(s) << ',' << m.n << ',' << m.exact << ',' << m.format_valid << ',' << m.high2 << ','
                   << m.low2 << ',' << m.teacher_forced << ',' << detail::num_opt(m.recomposition) << ','
                   << detail::num_opt(m.tens_only) << ',' << detail::num_opt(m.tens_residual_c2_0) << ','
                   << detail::num_opt(m.tens_residual_c2_1) << '\n';
    }
  }
  return 0;
}

int cmd_sweep(const SweepArgs& args) {
  const SweepConfig cfg = resolve_sweep(args);
  validate_sweep(cfg);
  if (args.out.empty()) throw std::invalid_argument("sweep needs --out");
  const auto t0 = std::chrono::steady_clock::now();
  const auto report = run_study(cfg, [&](const RunResult& r) {
    const double sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::fprintf(stderr, "[%7.1fs] %-20s seed %-3llu %s\n", sec, r.family.c_str(),
                 static_cast<unsigned long long>(r.seed), r.ok ? "ok" : ("FAILED: " + r.error).c_str());
  });
  emit_report(report, args.out, cfg.keep_records);
  print_pooled(report);
  const auto holes = report.holes();
  for (const auto& h : holes) std::fprintf(stderr, "hole: %s\n", h.c_str());
  return holes.empty() ? 0 : 1;
}

int cmd_report(const std::string& in, const std::string& out) {
  const auto report = report_from_files(in);
  const fs::path dest = out.empty() ? fs::path(in) : fs::path(out);
  fs::create_directories(dest);
  if (dest != fs::path(in)) {
    std::ofstream(dest / "config.json") << to_json(report.config).dump(2) << '\n';
    std::ofstream runs(dest / "runs.jsonl");
    write_runs_jsonl(runs, report);
  }
  std::ofstream(dest / "summary.csv") << summary_csv(report);
  std::ofstream(dest / "per_seed.csv") << per_seed_csv(report);
  std::ofstream(dest / "paired.csv") << paired_csv(report);
  std::ofstream(dest / "diagnostics.csv") << diagnostics_csv(report);
  write_plots(report, dest);
  print_pooled(report);
  return report.holes().empty() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  CLI::App app{"carrylab: staged arithmetic generalization experiments"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("generate", "dump a corpus, pack, suite sample or split");
  std::string gen_what, gen_name, gen_out;
  std::size_t gen_size = 0;
  std::uint64_t gen_seed = 0;
  gen->add_option("what", gen_what, "exhaustive2 | lowrange3 | pack | suite | split")->required();
  gen->add_option("--name", gen_name, "pack, suite or split name");
  gen->add_option("--size", gen_size, "pack or sample size");
  gen->add_option("--seed", gen_seed, "seed");
  gen->add_option("--out", gen_out, "output file (default stdout)");

  auto* audit = app.add_subcommand("audit-splits", "oracle coverage and accuracy for every split");
  std::uint64_t audit_seed = 0;
  std::string audit_out;
  audit->add_option("--seed", audit_seed, "seed for the random split");
  audit->add_option("--out", audit_out, "directory for audit_splits.csv");

  auto* train = app.add_subcommand("train", "train one (study, family, seed) run and save a checkpoint");
  std::string train_study, train_family, train_out;
  std::uint64_t train_seed = 0;
  long train_base = -1, train_repair = -1;
  bool train_answer_only = false;
  train->add_option("--study", train_study, "study name")->required();
  train->add_option("--family", train_family, "family within the study")->required();
  train->add_option("--seed", train_seed, "run seed");
  train->add_option("--base-steps", train_base, "override base stage length");
  train->add_option("--repair-steps", train_repair, "override repair stage length");
  train->add_flag("--answer-only", train_answer_only, "score only answer characters");
  train->add_option("--out", train_out, "checkpoint path")->required();

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on suites");
  std::string eval_ckpt, eval_suites, eval_out;
  std::size_t eval_n = 1000;
  std::uint64_t eval_seed = 0;
  eval->add_option("--checkpoint", eval_ckpt, "checkpoint path")->required();
  eval->add_option("--suites", eval_suites, "comma-separated suite names (default all)");
  eval->add_option("--n", eval_n, "examples per suite");
  eval->add_option("--seed", eval_seed, "suite sampling seed");
  eval->add_option("--out", eval_out, "directory for records.jsonl and summary.csv");

  auto* sweep = app.add_subcommand("sweep", "run a study over families and seeds");
  SweepArgs sargs;
  sweep->add_option("--config", sargs.config, "JSON sweep config");
  sweep->add_option("--study", sargs.study, "study name");
  sweep->add_option("--families", sargs.families, "comma-separated families (default all)");
  sweep->add_option("--seeds", sargs.seeds, "seed list, e.g. 0-4 or 1,3,5");
  sweep->add_option("--seed", sargs.seeds, "single seed");
  sweep->add_option("--out", sargs.out, "output directory")->required();
  sweep->add_option("--cache", sargs.cache, "stage checkpoint cache directory");
  sweep->add_option("--jobs", sargs.jobs, "parallel workers");
  sweep->add_option("--base-steps", sargs.base_steps, "override base stage length");
  sweep->add_option("--repair-steps", sargs.repair_steps, "override repair stage length");
  sweep->add_option("--suite-size", sargs.suite_size, "examples per suite");
  sweep->add_flag("--answer-only", sargs.answer_only, "score only answer characters");
  sweep->add_flag("--no-records", sargs.no_records, "skip records.jsonl");

  auto* rep = app.add_subcommand("report", "re-emit tables and plots from a sweep directory");
  std::string rep_in, rep_out;
  rep->add_option("--in", rep_in, "sweep output directory")->required();
  rep->add_option("--out", rep_out, "destination (default: in place)");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*gen) return cmd_generate(gen_what, gen_name, gen_size, gen_seed, gen_out);
    if (*audit) return cmd_audit(audit_seed, audit_out);
    if (*train)
      return cmd_train(train_study, train_family, train_seed, train_base, train_repair, train_answer_only, train_out);
    if (*eval) return cmd_eval(eval_ckpt, eval_suites, eval_n, eval_seed, eval_out);
    if (*sweep) return cmd_sweep(sargs);
    if (*rep) return cmd_report(rep_in, rep_out);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
