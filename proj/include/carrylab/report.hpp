#pragma once

// Report emission: CSV tables, JSON-lines rows and records, SVG plots.
//
// Files written into the output directory:
//   config.json        sweep configuration and plan echo (enough to rerun)
//   runs.jsonl         one object per (family, seed) run; `report` rebuilds from it
//   records.jsonl      one object per evaluated example
//   summary.csv        pooled per-family per-suite means of every metric
//   per_seed.csv       per-seed metric values
//   paired.csv         paired-seed comparisons
//   diagnostics.csv    hundreds-step margins and lower-digit attention
//   audit_splits.csv   oracle scores per split (audit-splits only)
//   exact_match.svg, teacher_forced.svg, tens_residuals.svg, margins.svg

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "carrylab/harness.hpp"

namespace carrylab {

inline constexpr std::string_view kVersion = "carrylab 1.0.0";

using json = nlohmann::json;

namespace detail {

inline json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

inline std::optional<double> json_optional(const json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

// Text that parses back to the same double.
inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string num_opt(const std::optional<double>& v) { return v ? num(*v) : ""; }

inline std::ofstream open_out(const std::filesystem::path& p) {
  std::ofstream os(p);
  if (!os) throw std::runtime_error("cannot write " + p.string());
  return os;
}

}  // namespace detail

// ----------------------------------------------------------------------------
// JSON round trip

inline json to_json(const MetricsSummary& m) {
  return {{"n", m.n},
          {"exact", m.exact},
          {"format_valid", m.format_valid},
          {"high2", m.high2},
          {"low2", m.low2},
          {"teacher_forced", m.teacher_forced},
          {"digit_accuracy", m.digit_accuracy},
          {"recomposition", detail::optional_json(m.recomposition)},
          {"tens_only", detail::optional_json(m.tens_only)},
          {"tens_residual_c2_0", detail::optional_json(m.tens_residual_c2_0)},
          {"tens_residual_c2_1", detail::optional_json(m.tens_residual_c2_1)}};
}

inline MetricsSummary metrics_from_json(const json& j) {
  MetricsSummary m;
  m.n = j.at("n").get<std::size_t>();
  m.exact = j.at("exact").get<double>();
  m.format_valid = j.at("format_valid").get<double>();
  m.high2 = j.at("high2").get<double>();
  m.low2 = j.at("low2").get<double>();
  m.teacher_forced = j.at("teacher_forced").get<double>();
  m.digit_accuracy = j.at("digit_accuracy").get<std::vector<double>>();
  m.recomposition = detail::json_optional(j.at("recomposition"));
  m.tens_only = detail::json_optional(j.at("tens_only"));
  m.tens_residual_c2_0 = detail::json_optional(j.at("tens_residual_c2_0"));
  m.tens_residual_c2_1 = detail::json_optional(j.at("tens_residual_c2_1"));
  return m;
}

inline json to_json(const EvalRecord& r) {
  return {{"a", r.a},
          {"b", r.b},
          {"layout", layout_name(r.layout)},
          {"truth", r.truth},
          {"generated", r.generated},
          {"free", r.free_text},
          {"format_valid", r.format_valid},
          {"exact", r.exact},
          {"high2_correct", r.high2_correct},
          {"low2_correct", r.low2_correct},
          {"digit_correct", r.digit_correct},
          {"tens_delta", r.tens_delta},
          {"c2", r.c2},
          {"c3", r.c3},
          {"teacher_forced_hits", r.teacher_forced_hits}};
}

inline json to_json(const RunResult& r) {
  json metrics = json::object();
  for (const auto& [s, m] : r.metrics) metrics[std::string(suite_name(s))] = to_json(m);
  json probes = json::array();
  for (const auto& p : r.probes) {
    probes.push_back({{"probe_set", p.probe_set},
                      {"flag_digit", p.flag_digit},
                      {"mean_margin", p.mean_margin},
                      {"lower_attention", p.lower_attention}});
  }
  return {{"family", r.family},   {"seed", r.seed},         {"ok", r.ok},         {"error", r.error},
          {"final_loss", r.final_loss}, {"checksum", r.checksum}, {"metrics", metrics}, {"probes", probes}};
}

inline RunResult run_from_json(const json& j) {
  RunResult r;
  r.family = j.at("family").get<std::string>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.ok = j.at("ok").get<bool>();
  r.error = j.at("error").get<std::string>();
  r.final_loss = j.at("final_loss").get<float>();
  r.checksum = j.at("checksum").get<std::uint64_t>();
  for (const auto& [name, m] : j.at("metrics").items()) r.metrics[parse_suite(name)] = metrics_from_json(m);
  for (const auto& p : j.at("probes")) {
    r.probes.push_back({p.at("probe_set").get<std::string>(), p.at("flag_digit").get<int>(),
                        p.at("mean_margin").get<double>(), p.at("lower_attention").get<double>()});
  }
  return r;
}

inline json stage_json(const Stage& s) {
  json mix = json::array();
  for (const auto& m : s.mixture) mix.push_back({{"pack", pack_name(m.pack)}, {"weight", m.weight}});
  return {{"name", s.name}, {"mixture", mix}, {"steps", s.steps}, {"batch_size", s.batch_size},
          {"learning_rate", s.learning_rate}};
}

inline json to_json(const SweepConfig& c) {
  json suites = json::array();
  for (Suite s : c.suites) suites.push_back(suite_name(s));
  json plans = json::object();
  for (const auto& f : c.families) {
    json stages = json::array();
    for (const auto& s : staged_plan(c.study, f, c.lengths).stages) stages.push_back(stage_json(s));
    const auto m = study_model(c.study, family_position(c.study, f));
    plans[f] = {{"model",
                 {{"n_layers", m.n_layers},
                  {"width", m.width},
                  {"n_heads", m.n_heads},
                  {"context_length", m.context_length},
                  {"vocab_size", m.vocab_size},
                  {"position", family_name(m.position)}}},
                {"stages", stages}};
  }
  return {{"version", kVersion},
          {"study", study_name(c.study)},
          {"families", c.families},
          {"seeds", c.seeds},
          {"base_steps", c.lengths.base_steps},
          {"repair_steps", c.lengths.repair_steps},
          {"batch_size", c.lengths.batch_size},
          {"learning_rate", c.lengths.learning_rate},
          {"repair_share", c.lengths.repair_share},
          {"answer_only_loss", c.loss.answer_only},
          {"suites", suites},
          {"suite_size", c.suite_size},
          {"tens_population", c.tens_population == TensPopulation::all_records ? "all_records" : "errors_only"},
          {"plans", plans}};
}

// Reads the fields written by to_json(SweepConfig); absent keys keep defaults.
inline SweepConfig sweep_from_json(const json& j) {
  SweepConfig c;
  if (j.contains("study")) c = default_sweep(parse_study(j.at("study").get<std::string>()));
  if (j.contains("families")) c.families = j.at("families").get<std::vector<std::string>>();
  if (j.contains("seeds")) c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  if (j.contains("base_steps")) c.lengths.base_steps = j.at("base_steps").get<std::size_t>();
  if (j.contains("repair_steps")) c.lengths.repair_steps = j.at("repair_steps").get<std::size_t>();
  if (j.contains("batch_size")) c.lengths.batch_size = j.at("batch_size").get<std::size_t>();
  if (j.contains("learning_rate")) c.lengths.learning_rate = j.at("learning_rate").get<float>();
  if (j.contains("repair_share")) c.lengths.repair_share = j.at("repair_share").get<double>();
  if (j.contains("answer_only_loss")) c.loss.answer_only = j.at("answer_only_loss").get<bool>();
  if (j.contains("suites")) {
    c.suites.clear();
    for (const auto& s : j.at("suites")) c.suites.push_back(parse_suite(s.get<std::string>()));
  }
  if (j.contains("suite_size")) c.suite_size = j.at("suite_size").get<std::size_t>();
  if (j.contains("tens_population")) {
    const auto p = j.at("tens_population").get<std::string>();
    if (p == "all_records") c.tens_population = TensPopulation::all_records;
    else if (p == "errors_only") c.tens_population = TensPopulation::errors_only;
    else throw std::invalid_argument("unknown tens_population: " + p);
  }
  return c;
}

// ----------------------------------------------------------------------------
// SVG

namespace svg {

inline std::string esc(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

inline const char* palette(std::size_t i) {
  static const char* colors[] = {"#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f", "#edc948", "#b07aa1"};
  return colors[i % 7];
}

struct Series {
  std::string label;
  std::vector<std::optional<double>> means;          // one per group
  std::vector<std::vector<double>> points;           // per-seed values per group
};

// Grouped bars with per-seed dots. Values may be negative.
inline std::string grouped_bars(const std::string& title, const std::vector<std::string>& groups,
                                const std::vector<Series>& series, double lo, double hi) {
  const double width = 160.0 * static_cast<double>(groups.size()) + 200.0, height = 360.0;
  const double left = 60.0, top = 40.0, plot_w = width - left - 180.0, plot_h = height - top - 70.0;
  auto y = [&](double v) { return top + plot_h * (hi - std::clamp(v, lo, hi)) / (hi - lo); };
  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
     << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
     << "\" font-family=\"sans-serif\" font-size=\"11\">\n"
     << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
     << "<text x=\"" << left << "\" y=\"20\" font-size=\"14\">" << esc(title) << "</text>\n";
  for (int t = 0; t <= 4; ++t) {
    const double v = lo + (hi - lo) * t / 4.0;
    os << "<line x1=\"" << left << "\" x2=\"" << left + plot_w << "\" y1=\"" << y(v) << "\" y2=\"" << y(v)
       << "\" stroke=\"#ddd\"/>\n"
       << "<text x=\"" << left - 6 << "\" y=\"" << y(v) + 4 << "\" text-anchor=\"end\">" << v << "</text>\n";
  }
  const double zero = y(std::clamp(0.0, lo, hi));
  os << "<line x1=\"" << left << "\" x2=\"" << left + plot_w << "\" y1=\"" << zero << "\" y2=\"" << zero
     << "\" stroke=\"#333\"/>\n";
  const double group_w = plot_w / static_cast<double>(std::max<std::size_t>(1, groups.size()));
  const double bar_w = group_w * 0.8 / static_cast<double>(std::max<std::size_t>(1, series.size()));
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const double gx = left + group_w * static_cast<double>(g);
    os << "<text x=\"" << gx + group_w / 2 << "\" y=\"" << top + plot_h + 18 << "\" text-anchor=\"middle\">"
       << esc(groups[g]) << "</text>\n";
    for (std::size_t s = 0; s < series.size(); ++s) {
      const double x = gx + group_w * 0.1 + bar_w * static_cast<double>(s);
      if (g < series[s].means.size() && series[s].means[g]) {
        const double v = *series[s].means[g];
        os << "<rect x=\"" << x << "\" y=\"" << std::min(y(v), zero) << "\" width=\"" << bar_w * 0.9
           << "\" height=\"" << std::abs(zero - y(v)) << "\" fill=\"" << palette(s) << "\"><title>"
           << esc(series[s].label) << ": " << v << "</title></rect>\n";
      }
      if (g < series[s].points.size()) {
        for (double p : series[s].points[g]) {
          os << "<circle cx=\"" << x + bar_w * 0.45 << "\" cy=\"" << y(p) << "\" r=\"2.5\" fill=\"#222\"/>\n";
        }
      }
    }
  }
  for (std::size_t s = 0; s < series.size(); ++s) {
    const double ly = top + 16.0 * static_cast<double>(s);
    os << "<rect x=\"" << left + plot_w + 16 << "\" y=\"" << ly << "\" width=\"10\" height=\"10\" fill=\""
       << palette(s) << "\"/>\n"
       << "<text x=\"" << left + plot_w + 32 << "\" y=\"" << ly + 9 << "\">" << esc(series[s].label) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace svg

// ----------------------------------------------------------------------------
// Emission

inline void write_runs_jsonl(std::ostream& os, const SweepReport& report) {
  for (const auto& r : report.runs) os << to_json(r).dump() << '\n';
}

inline SweepReport report_from_files(const std::filesystem::path& dir) {
  std::ifstream cfg_in(dir / "config.json");
  if (!cfg_in) throw std::runtime_error("missing " + (dir / "config.json").string());
  SweepReport report;
  report.config = sweep_from_json(json::parse(cfg_in));
  std::ifstream runs_in(dir / "runs.jsonl");
  if (!runs_in) throw std::runtime_error("missing " + (dir / "runs.jsonl").string());
  for (std::string line; std::getline(runs_in, line);)
    if (!line.empty()) report.runs.push_back(run_from_json(json::parse(line)));
  finalize_pairs(report);
  return report;
}

inline std::string summary_csv(const SweepReport& report) {
  std::ostringstream os;
  os << "family,suite,metric,mean,seeds\n";
  for (const auto& f : report.config.families)
    for (Suite s : report.config.suites)
      for (const auto& m : metric_names()) {
        const auto cell = pooled(report, f, m, s);
        os << f << ',' << suite_name(s) << ',' << m << ',' << detail::num_opt(cell.mean) << ',' << cell.seeds << '\n';
      }
  return os.str();
}

inline std::string per_seed_csv(const SweepReport& report) {
  std::ostringstream os;
  os << "family,seed,ok,suite,metric,value\n";
  for (const auto& r : report.runs) {
    if (!r.ok) {
      os << r.family << ',' << r.seed << ",0,,,\n";
      continue;
    }
    for (const auto& [s, summary] : r.metrics)
      for (const auto& m : metric_names())
        os << r.family << ',' << r.seed << ",1," << suite_name(s) << ',' << m << ','
           << detail::num_opt(metric_value(summary, m)) << '\n';
  }
  return os.str();
}

inline std::string paired_csv(const SweepReport& report) {
  std::ostringstream os;
  os << "family_a,family_b,suite,metric,seeds,wins,losses,ties,mean_delta,deltas\n";
  for (const auto& p : report.paired) {
    os << p.family_a << ',' << p.family_b << ',' << suite_name(p.suite) << ',' << p.metric << ',' << p.seeds.size()
       << ',' << p.wins << ',' << p.losses << ',' << p.ties << ',' << detail::num(p.mean_delta) << ',';
    for (std::size_t i = 0; i < p.deltas.size(); ++i) os << (i ? ";" : "") << detail::num(p.deltas[i]);
    os << '\n';
  }
  return os.str();
}

inline std::string diagnostics_csv(const SweepReport& report) {
  std::ostringstream os;
  os << "family,seed,probe_set,flag_digit,mean_margin,lower_attention\n";
  for (const auto& r : report.runs)
    for (const auto& p : r.probes)
      os << r.family << ',' << r.seed << ',' << p.probe_set << ',' << p.flag_digit << ',' << detail::num(p.mean_margin)
         << ',' << detail::num(p.lower_attention) << '\n';
  return os.str();
}

inline std::string audit_csv(const std::vector<SplitAuditRow>& rows) {
  std::ostringstream os;
  os << "split,train,test,local_coverage,local_accuracy,symmetry_accuracy,definition\n";
  for (const auto& r : rows)
    os << split_name(r.name) << ',' << r.train_size << ',' << r.test_size << ',' << std::fixed << std::setprecision(3)
       << r.scores.local_coverage << ',' << r.scores.local_accuracy << ',' << r.scores.symmetry_accuracy << ",\""
       << split_definition(r.name) << "\"\n";
  return os.str();
}

inline std::string audit_text(const std::vector<SplitAuditRow>& rows) {
  std::ostringstream os;
  os << std::left << std::setw(28) << "split" << std::right << std::setw(8) << "train" << std::setw(8) << "test"
     << std::setw(12) << "coverage" << std::setw(12) << "local" << std::setw(12) << "symmetry" << '\n';
  for (const auto& r : rows)
    os << std::left << std::setw(28) << split_name(r.name) << std::right << std::setw(8) << r.train_size
       << std::setw(8) << r.test_size << std::fixed << std::setprecision(3) << std::setw(12)
       << r.scores.local_coverage << std::setw(12) << r.scores.local_accuracy << std::setw(12)
       << r.scores.symmetry_accuracy << '\n';
  return os.str();
}

inline svg::Series metric_series(const SweepReport& report, const std::string& family, const std::string& metric) {
  svg::Series s;
  s.label = family;
  for (Suite suite : report.config.suites) {
    s.means.push_back(pooled(report, family, metric, suite).mean);
    std::vector<double> pts;
    for (const auto& [seed, v] : seed_values(report, family, metric, suite)) pts.push_back(v);
    s.points.push_back(std::move(pts));
  }
  return s;
}

inline void write_plots(const SweepReport& report, const std::filesystem::path& dir) {
  std::vector<std::string> groups;
  for (Suite s : report.config.suites) groups.emplace_back(suite_name(s));
  for (const char* metric : {"exact", "teacher_forced"}) {
    std::vector<svg::Series> series;
    for (const auto& f : report.config.families) series.push_back(metric_series(report, f, metric));
    auto os = detail::open_out(dir / (std::string(metric == std::string("exact") ? "exact_match" : metric) + ".svg"));
    os << svg::grouped_bars(std::string(study_name(report.config.study)) + ": " + metric + " by suite", groups, series,
                            0.0, 1.0);
  }
  {
    // Signed tens residuals on each true three-digit suite, split by c2 branch.
    std::vector<std::string> bgroups;
    std::vector<std::pair<Suite, std::string>> cells;
    for (Suite s : report.config.suites) {
      if (s == Suite::in_support_2digit || s == Suite::layout_shift_only_lowrange3) continue;
      for (const char* m : {"tens_residual_c2_0", "tens_residual_c2_1"}) {
        bgroups.push_back(std::string(suite_name(s)).substr(6) + (std::string_view(m).ends_with('0') ? " c2=0" : " c2=1"));
        cells.emplace_back(s, m);
      }
    }
    std::vector<svg::Series> series;
    double extent = 0.5;
    for (const auto& f : report.config.families) {
      svg::Series s;
      s.label = f;
      for (const auto& [suite, m] : cells) {
        auto cell = pooled(report, f, m, suite);
        s.means.push_back(cell.mean);
        std::vector<double> pts;
        for (const auto& [seed, v] : seed_values(report, f, m, suite)) {
          pts.push_back(v);
          extent = std::max(extent, std::abs(v));
        }
        s.points.push_back(std::move(pts));
      }
      series.push_back(std::move(s));
    }
    extent = std::ceil(extent);
    auto os = detail::open_out(dir / "tens_residuals.svg");
    os << svg::grouped_bars("mean signed tens residual (predicted - true)", bgroups, series, -extent, extent);
  }
  bool any_probes = false;
  for (const auto& r : report.runs) any_probes = any_probes || !r.probes.empty();
  if (any_probes) {
    std::vector<std::string> pgroups;
    for (const auto& [name, probes] : probe_sets()) pgroups.push_back(name);
    std::vector<svg::Series> series;
    double extent = 1.0;
    for (const auto& f : report.config.families) {
      svg::Series s;
      s.label = f;
      for (std::size_t k = 0; k < pgroups.size(); ++k) {
        std::vector<double> pts;
        for (const auto& r : report.runs)
          if (r.family == f && r.ok && k < r.probes.size()) {
            pts.push_back(r.probes[k].mean_margin);
            extent = std::max(extent, std::abs(r.probes[k].mean_margin));
          }
        std::optional<double> mean;
        if (!pts.empty()) {
          double t = 0.0;
          for (double p : pts) t += p;
          mean = t / static_cast<double>(pts.size());
        }
        s.means.push_back(mean);
        s.points.push_back(std::move(pts));
      }
      series.push_back(std::move(s));
    }
    extent = std::ceil(extent);
    auto os = detail::open_out(dir / "margins.svg");
    os << svg::grouped_bars("hundreds-step logit margin, flag minus true", pgroups, series, -extent, extent);
  }
}

inline void emit_report(const SweepReport& report, const std::filesystem::path& dir, bool with_records = true) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir)) throw std::runtime_error("cannot create output directory " + dir.string());
  detail::open_out(dir / "config.json") << to_json(report.config).dump(2) << '\n';
  {
    auto os = detail::open_out(dir / "runs.jsonl");
    write_runs_jsonl(os, report);
  }
  if (with_records) {
    auto os = detail::open_out(dir / "records.jsonl");
    for (const auto& r : report.runs)
      for (const auto& [suite, records] : r.records)
        for (const auto& rec : records) {
          json j = to_json(rec);
          j["family"] = r.family;
          j["seed"] = r.seed;
          j["suite"] = suite_name(suite);
          os << j.dump() << '\n';
        }
  }
  detail::open_out(dir / "summary.csv") << summary_csv(report);
  detail::open_out(dir / "per_seed.csv") << per_seed_csv(report);
  detail::open_out(dir / "paired.csv") << paired_csv(report);
  detail::open_out(dir / "diagnostics.csv") << diagnostics_csv(report);
  write_plots(report, dir);
}

}  // namespace carrylab
