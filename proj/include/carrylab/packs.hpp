#pragma once

// Named training packs and the staged plans that consume them.

#include <algorithm>
#include <array>
#include <cstdint>
#include <map>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "carrylab/corpus.hpp"
#include "carrylab/model.hpp"
#include "carrylab/numerics/rng.hpp"

namespace carrylab {

enum class PackName {
  base2digit,
  mixed_layout,
  ctrl_dup,
  probe_all,
  ctrl3,
  highonly,
  tail,
  tailhigh,
  ctrl4,
  tensboundary,
  tenspolarity,
  probe_h0,
  probe_h1,
  probe_t1,
};

inline constexpr std::array<PackName, 14> kAllPacks{
    PackName::base2digit, PackName::mixed_layout, PackName::ctrl_dup,     PackName::probe_all, PackName::ctrl3,
    PackName::highonly,   PackName::tail,         PackName::tailhigh,     PackName::ctrl4,     PackName::tensboundary,
    PackName::tenspolarity, PackName::probe_h0,   PackName::probe_h1,     PackName::probe_t1};

inline std::string_view pack_name(PackName p) {
  switch (p) {
    case PackName::base2digit: return "base2digit";
    case PackName::mixed_layout: return "mixed_layout";
    case PackName::ctrl_dup: return "ctrl_dup";
    case PackName::probe_all: return "probe_all";
    case PackName::ctrl3: return "ctrl3";
    case PackName::highonly: return "highonly";
    case PackName::tail: return "tail";
    case PackName::tailhigh: return "tailhigh";
    case PackName::ctrl4: return "ctrl4";
    case PackName::tensboundary: return "tensboundary";
    case PackName::tenspolarity: return "tenspolarity";
    case PackName::probe_h0: return "probe_h0";
    case PackName::probe_h1: return "probe_h1";
    case PackName::probe_t1: return "probe_t1";
  }
  return "?";
}

inline PackName parse_pack(std::string_view name) {
  for (PackName p : kAllPacks)
    if (pack_name(p) == name) return p;
  throw std::invalid_argument("unknown pack: " + std::string(name));
}

inline std::string_view pack_provenance(PackName p) {
  switch (p) {
    case PackName::base2digit: return "exhaustive two-digit pairs";
    case PackName::mixed_layout: return "low-range three-digit renderings of the two-digit pairs";
    case PackName::ctrl_dup:
    case PackName::ctrl3:
    case PackName::ctrl4: return "duplicates of in-support material (two-digit and low-range three-digit)";
    case PackName::probe_all: return "hundreds probes in thirds: zero tails, c2=1 free tails, c3=1 free tails";
    case PackName::highonly: return "multiples of 100";
    case PackName::tail: return "hundreds fixed to 3 and 5, free tails";
    case PackName::tailhigh: return "nonzero hundreds, free tails, stratified over c1 x upper carry state";
    case PackName::tensboundary: return "tens column sum plus c1 in 8..11";
    case PackName::tenspolarity: return "c2=0 with tens out 5..9 and c2=1 with tens out 0..4, balanced per digit";
    case PackName::probe_h0: return "probe set: multiples of 100, c2=0, c3=0";
    case PackName::probe_h1: return "probe set: c2=1, c3=0, free tails";
    case PackName::probe_t1: return "probe set: c3=1, free tails";
  }
  return "?";
}

inline constexpr std::size_t kExhaustiveSize = 10000;
inline constexpr std::size_t kDefaultPackSize = 2000;

struct PackSpec {
  PackName name = PackName::base2digit;
  std::uint64_t seed = 0;
  std::vector<AdditionExample> examples;

  std::size_t volume() const { return examples.size(); }
};

namespace detail {

inline AdditionExample r3(int a, int b) { return render(a, b, Layout::three_digit); }

// Draw `n` examples with replacement from `pool`, cycling through shuffled copies
// so every pool member appears before any repeats.
inline std::vector<AdditionExample> cycle_draw(const std::vector<AdditionExample>& pool, std::size_t n, Rng& rng) {
  if (pool.empty()) throw std::logic_error("cycle_draw: empty pool");
  std::vector<AdditionExample> out;
  out.reserve(n);
  std::vector<std::size_t> order(pool.size());
  while (out.size() < n) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    shuffle(order, rng);
    for (std::size_t i = 0; i < order.size() && out.size() < n; ++i) out.push_back(pool[order[i]]);
  }
  return out;
}

inline std::vector<AdditionExample> in_support_pool() {
  auto pool = gen_exhaustive_2digit();
  auto low = gen_lowrange3();
  pool.insert(pool.end(), low.begin(), low.end());
  return pool;
}

// Probe sub-family A: multiples of 100 with no carry into the thousands.
inline std::vector<AdditionExample> probe_zero_tails() {
  std::vector<AdditionExample> out;
  for (int i = 0; i <= 9; ++i)
    for (int j = 0; i + j <= 9; ++j)
      if (i + j > 0) out.push_back(r3(100 * i, 100 * j));
  return out;
}

template <typename Pred>
AdditionExample rejection_draw(Rng& rng, int lo, int hi, Pred pred) {
  for (;;) {
    const int a = lo + static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(hi - lo + 1)));
    const int b = lo + static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(hi - lo + 1)));
    auto ex = r3(a, b);
    if (pred(ex)) return ex;
  }
}

inline int tens_out(const AdditionExample& ex) { return digit_at(ex.sum(), 1); }
inline int tens_load(const AdditionExample& ex) { return digit_at(ex.a, 1) + digit_at(ex.b, 1) + ex.c1; }

// Sub-family B: carry into the hundreds (c2=1, c3=0) with free tails; the
// k-th draw has hundreds output 2 + k % 8, every output a true three-digit
// pair reaches under those carries.
inline std::vector<AdditionExample> draw_carry_in(std::size_t n, Rng& rng) {
  std::vector<AdditionExample> out;
  for (std::size_t k = 0; k < n; ++k) {
    const int h = 2 + static_cast<int>(k % 8);
    out.push_back(rejection_draw(rng, 0, 999, [h](const AdditionExample& ex) {
      return ex.true_three_digit() && ex.c2 == 1 && ex.c3 == 0 && digit_at(ex.sum(), 2) == h;
    }));
  }
  return out;
}

// Sub-family C: thousands carry (c3=1) with free tails; the k-th draw has
// hundreds output k % 10.
inline std::vector<AdditionExample> draw_thousands(std::size_t n, Rng& rng) {
  std::vector<AdditionExample> out;
  for (std::size_t k = 0; k < n; ++k) {
    const int h = static_cast<int>(k % 10);
    out.push_back(rejection_draw(rng, 100, 999, [h](const AdditionExample& ex) {
      return ex.c3 == 1 && digit_at(ex.sum(), 2) == h;
    }));
  }
  return out;
}

}  // namespace detail

inline PackSpec build_pack(PackName name, std::size_t size, std::uint64_t seed) {
  if (size == 0) throw std::invalid_argument("build_pack: size must be at least 1");
  PackSpec pack;
  pack.name = name;
  pack.seed = seed;
  Rng rng(derive_seed(seed, "pack:" + std::string(pack_name(name))));
  auto& out = pack.examples;

  auto subset_of = [&](std::vector<AdditionExample> all) {
    if (size > all.size()) {
      throw std::invalid_argument("build_pack: " + std::string(pack_name(name)) + " has only " +
                                  std::to_string(all.size()) + " distinct examples");
    }
    if (size == all.size()) return all;
    std::vector<AdditionExample> picked;
    for (auto i : sample_without_replacement(all.size(), size, rng)) picked.push_back(all[i]);
    return picked;
  };

  switch (name) {
    case PackName::base2digit: out = subset_of(gen_exhaustive_2digit()); break;
    case PackName::mixed_layout: out = subset_of(gen_lowrange3()); break;
    case PackName::ctrl_dup:
    case PackName::ctrl3:
    case PackName::ctrl4: out = detail::cycle_draw(detail::in_support_pool(), size, rng); break;
    case PackName::probe_all: {
      const std::size_t third = size / 3;
      out = detail::cycle_draw(detail::probe_zero_tails(), size - 2 * third, rng);
      for (auto& ex : detail::draw_carry_in(third, rng)) out.push_back(std::move(ex));
      for (auto& ex : detail::draw_thousands(third, rng)) out.push_back(std::move(ex));
      break;
    }
    case PackName::probe_h0: out = detail::cycle_draw(detail::probe_zero_tails(), size, rng); break;
    case PackName::probe_h1: out = detail::draw_carry_in(size, rng); break;
    case PackName::probe_t1: out = detail::draw_thousands(size, rng); break;
    case PackName::highonly: {
      std::vector<AdditionExample> pool;
      for (int i = 0; i <= 9; ++i)
        for (int j = 0; j <= 9; ++j)
          if (i + j > 0) pool.push_back(detail::r3(100 * i, 100 * j));
      out = detail::cycle_draw(pool, size, rng);
      break;
    }
    case PackName::tail:
      for (std::size_t k = 0; k < size; ++k) {
        const int x = static_cast<int>(uniform_index(rng, 100));
        const int y = static_cast<int>(uniform_index(rng, 100));
        out.push_back(detail::r3(300 + x, 500 + y));
      }
      break;
    case PackName::tailhigh:
      // Upper states: no carry into or out of hundreds, carry in only, carry
      // out. Crossed with c1, one cell per draw in rotation.
      for (std::size_t k = 0; k < size; ++k) {
        const int upper = static_cast<int>(k % 3), c1 = static_cast<int>((k / 3) % 2);
        out.push_back(detail::rejection_draw(rng, 100, 999, [upper, c1](const AdditionExample& ex) {
          if (ex.c1 != c1) return false;
          if (upper == 2) return ex.c3 == 1;
          return ex.c3 == 0 && ex.c2 == upper;
        }));
      }
      break;
    case PackName::tensboundary:
      for (std::size_t k = 0; k < size; ++k) {
        const int load = 8 + static_cast<int>(k % 4);
        out.push_back(detail::rejection_draw(
            rng, 0, 999, [load](const AdditionExample& ex) { return ex.true_three_digit() && detail::tens_load(ex) == load; }));
      }
      break;
    case PackName::tenspolarity:
      for (std::size_t k = 0; k < size; ++k) {
        // Alternate branches; within a branch cycle through its five tens digits.
        const int c2 = static_cast<int>(k % 2);
        const int digit = (c2 == 0 ? 5 : 0) + static_cast<int>((k / 2) % 5);
        out.push_back(detail::rejection_draw(rng, 0, 999, [c2, digit](const AdditionExample& ex) {
          return ex.true_three_digit() && ex.c2 == c2 && detail::tens_out(ex) == digit;
        }));
      }
      break;
  }
  return pack;
}

inline std::size_t default_pack_size(PackName name) {
  return name == PackName::base2digit || name == PackName::mixed_layout ? kExhaustiveSize : kDefaultPackSize;
}

struct VolumeReport {
  bool ok = true;
  std::string message;
};

inline VolumeReport volume_match_check(const std::vector<const PackSpec*>& packs) {
  if (packs.empty()) throw std::invalid_argument("volume_match_check: no packs given");
  VolumeReport report;
  const std::size_t ref = packs.front()->volume();
  std::ostringstream os;
  for (const auto* p : packs) {
    if (p->volume() != ref) report.ok = false;
  }
  if (!report.ok) {
    os << "volume mismatch:";
    for (const auto* p : packs) os << ' ' << pack_name(p->name) << '=' << p->volume();
  }
  report.message = os.str();
  return report;
}

// Corpus dump plus one manifest line.
inline void write_pack(std::ostream& os, const PackSpec& pack) {
  os << "# pack=" << pack_name(pack.name) << " size=" << pack.volume() << " seed=" << pack.seed
     << " provenance=" << pack_provenance(pack.name) << '\n';
  write_dataset(os, pack.examples);
}

// ----------------------------------------------------------------------------
// Staged plans

struct MixtureItem {
  PackName pack;
  double weight = 1.0;
};

struct Stage {
  std::string name;
  std::vector<MixtureItem> mixture;
  std::size_t steps = 0;
  std::size_t batch_size = 256;
  float learning_rate = 3e-3f;

  // Everything that determines what this stage does, for cache keys and echoes.
  std::string describe() const {
    std::ostringstream os;
    os << name << '{';
    for (const auto& m : mixture) os << pack_name(m.pack) << ':' << m.weight << ',';
    os << "steps=" << steps << ",batch=" << batch_size << ",lr=" << learning_rate << '}';
    return os.str();
  }
};

struct TrainPlan {
  std::vector<Stage> stages;

  std::size_t total_steps() const {
    std::size_t n = 0;
    for (const auto& s : stages) n += s.steps;
    return n;
  }
};

enum class Study { position_family, carry_probe, binding_small, binding_bridge, late_tens };

inline constexpr std::array<Study, 5> kAllStudies{Study::position_family, Study::carry_probe, Study::binding_small,
                                                  Study::binding_bridge, Study::late_tens};

inline std::string_view study_name(Study s) {
  switch (s) {
    case Study::position_family: return "position_family";
    case Study::carry_probe: return "carry_probe";
    case Study::binding_small: return "binding_small";
    case Study::binding_bridge: return "binding_bridge";
    case Study::late_tens: return "late_tens";
  }
  return "?";
}

inline Study parse_study(std::string_view name) {
  for (Study s : kAllStudies)
    if (study_name(s) == name) return s;
  if (name == "bridge") return Study::binding_bridge;
  throw std::invalid_argument("unknown study: " + std::string(name));
}

inline std::vector<std::string> study_families(Study s) {
  switch (s) {
    case Study::position_family:
      return {"absolute", "coupled_significance", "digit_aware", "symmetry_aware", "none", "mixed_layout"};
    case Study::carry_probe: return {"base", "ctrl_dup", "probe_all"};
    case Study::binding_small:
    case Study::binding_bridge: return {"ctrl3", "highonly", "tail", "tailhigh"};
    case Study::late_tens: return {"ctrl4", "tensboundary", "tenspolarity"};
  }
  return {};
}

inline ModelConfig study_model(Study s, PositionFamily position = PositionFamily::absolute) {
  ModelConfig cfg;
  cfg.position = position;
  if (s == Study::binding_bridge || s == Study::late_tens) {
    cfg.n_layers = 2;
    cfg.width = 32;
  }
  return cfg;
}

// Position family used by a study family; only the position study varies it.
inline PositionFamily family_position(Study s, std::string_view family) {
  if (s == Study::position_family && family != "mixed_layout") return parse_position_family(family);
  return PositionFamily::absolute;
}

struct StageLengths {
  std::size_t base_steps = 5000;
  std::size_t repair_steps = 1500;
  std::size_t batch_size = 256;
  float learning_rate = 3e-3f;
  // Share of each repair batch taken by the stage's own pack; the rest replays
  // earlier material.
  double repair_share = 0.5;
};

inline TrainPlan staged_plan(Study study, std::string_view family, const StageLengths& len = {}) {
  const auto families = study_families(study);
  if (std::find(families.begin(), families.end(), family) == families.end()) {
    throw std::invalid_argument("study " + std::string(study_name(study)) + " has no family '" + std::string(family) + "'");
  }
  auto stage = [&](std::string name, std::vector<MixtureItem> mix, std::size_t steps) {
    return Stage{std::move(name), std::move(mix), steps, len.batch_size, len.learning_rate};
  };
  // Repair stage: the pack takes repair_share, the replay items split the rest
  // in proportion to their weights.
  auto repair = [&](PackName pack, std::vector<MixtureItem> replay) {
    double total = 0.0;
    for (const auto& r : replay) total += r.weight;
    std::vector<MixtureItem> mix{{pack, len.repair_share}};
    for (const auto& r : replay) mix.push_back({r.pack, (1.0 - len.repair_share) * r.weight / total});
    return stage(std::string(pack_name(pack)), std::move(mix), len.repair_steps);
  };
  const Stage base_mixed =
      stage("base_mixed", {{PackName::base2digit, 0.5}, {PackName::mixed_layout, 0.5}}, len.base_steps);

  TrainPlan plan;
  switch (study) {
    case Study::position_family:
      if (family == "mixed_layout") {
        plan.stages.push_back(base_mixed);
      } else {
        plan.stages.push_back(stage("base", {{PackName::base2digit, 1.0}}, len.base_steps));
      }
      break;
    case Study::carry_probe:
      plan.stages.push_back(base_mixed);
      if (family != "base") {
        plan.stages.push_back(repair(parse_pack(family), {{PackName::base2digit, 1}, {PackName::mixed_layout, 1}}));
      }
      break;
    case Study::binding_small:
    case Study::binding_bridge:
      plan.stages.push_back(base_mixed);
      plan.stages.push_back(repair(PackName::probe_all, {{PackName::base2digit, 1}, {PackName::mixed_layout, 1}}));
      plan.stages.push_back(repair(parse_pack(family), {{PackName::base2digit, 1},
                                                        {PackName::mixed_layout, 1},
                                                        {PackName::probe_all, 2}}));
      break;
    case Study::late_tens:
      plan.stages.push_back(base_mixed);
      plan.stages.push_back(repair(PackName::probe_all, {{PackName::base2digit, 1}, {PackName::mixed_layout, 1}}));
      plan.stages.push_back(repair(PackName::tailhigh, {{PackName::base2digit, 1},
                                                        {PackName::mixed_layout, 1},
                                                        {PackName::probe_all, 2}}));
      plan.stages.push_back(repair(parse_pack(family), {{PackName::base2digit, 1},
                                                        {PackName::mixed_layout, 1},
                                                        {PackName::probe_all, 1},
                                                        {PackName::tailhigh, 1}}));
      break;
  }
  return plan;
}

}  // namespace carrylab
