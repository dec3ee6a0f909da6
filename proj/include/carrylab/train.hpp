#pragma once

// Staged training of a model over pack mixtures.

#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "carrylab/corpus.hpp"
#include "carrylab/model.hpp"
#include "carrylab/numerics/adam.hpp"
#include "carrylab/numerics/ops.hpp"
#include "carrylab/numerics/rng.hpp"
#include "carrylab/packs.hpp"

namespace carrylab {

struct LossOptions {
  // Score only the answer characters instead of every character after BOS.
  bool answer_only = false;
};

// Inputs and next-token targets for a batch of examples, right-padded to the
// longest layout in the batch. Padding targets are -1 (ignored).
struct EncodedBatch {
  TokenBatch tokens;
  std::vector<int> targets;
};

inline EncodedBatch encode_batch(const std::vector<const AdditionExample*>& examples, const LossOptions& loss = {}) {
  EncodedBatch out;
  std::size_t seq = 0;
  for (const auto* ex : examples) seq = std::max(seq, static_cast<std::size_t>(string_length(ex->layout)));
  // Inputs cover BOS plus every character except the last.
  out.tokens.batch = examples.size();
  out.tokens.seq = seq;
  out.tokens.tokens.assign(examples.size() * seq, Vocab::bos);
  out.targets.assign(examples.size() * seq, -1);
  for (std::size_t r = 0; r < examples.size(); ++r) {
    const auto& ex = *examples[r];
    const auto ids = tokenize(ex.text());
    const std::size_t len = ids.size() - 1;
    const std::size_t first = loss.answer_only ? static_cast<std::size_t>(prompt_length(ex.layout)) : 0;
    for (std::size_t t = 0; t < len; ++t) {
      out.tokens.tokens[r * seq + t] = ids[t];
      if (t >= first) out.targets[r * seq + t] = ids[t + 1];
    }
    out.tokens.layouts.push_back(ex.layout);
  }
  return out;
}

// Integer example counts per mixture item summing to `batch` (largest remainder).
inline std::vector<std::size_t> mixture_counts(const std::vector<MixtureItem>& mixture, std::size_t batch) {
  double total = 0.0;
  for (const auto& m : mixture) {
    if (!(m.weight > 0.0)) throw std::invalid_argument("mixture weights must be positive");
    total += m.weight;
  }
  std::vector<std::size_t> counts(mixture.size());
  std::vector<std::pair<double, std::size_t>> rema;
  std::size_t used = 0;
  for (std::size_t i = 0; i < mixture.size(); ++i) {
    const double exact = static_cast<double>(batch) * mixture[i].weight / total;
    counts[i] = static_cast<std::size_t>(std::floor(exact));
    used += counts[i];
    rema.push_back({exact - std::floor(exact), i});
  }
  std::stable_sort(rema.begin(), rema.end(), [](auto& x, auto& y) { return x.first > y.first; });
  for (std::size_t k = 0; used < batch; ++k, ++used) ++counts[rema[k % rema.size()].second];
  return counts;
}

// Endless shuffled-epoch iterator over one pack.
class EpochCursor {
 public:
  EpochCursor(const PackSpec* pack, std::uint64_t stream) : pack_(pack), stream_(stream) { reshuffle(); }

  const AdditionExample* next() {
    if (pos_ == order_.size()) reshuffle();
    return &pack_->examples[order_[pos_++]];
  }

 private:
  void reshuffle() {
    Rng rng(derive_seed(stream_, "epoch", epoch_++));
    order_.resize(pack_->examples.size());
    for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
    shuffle(order_, rng);
    pos_ = 0;
  }

  const PackSpec* pack_;
  std::uint64_t stream_;
  std::uint64_t epoch_ = 0;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
};

class Diverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Model and optimizer state carried from stage to stage.
struct TrainState {
  Params params;
  Adam optimizer;
  std::vector<float> losses;  // one per step, across all stages

  TrainState clone() const { return {params.clone(), optimizer, losses}; }
};

// Params checkpoint followed by optimizer moments, step count and loss curve.
inline void write_train_state(std::ostream& os, const TrainState& st) {
  write_params(os, st.params);
  detail::put<std::uint64_t>(os, st.optimizer.step_count());
  detail::put<std::uint64_t>(os, st.optimizer.moments().size());
  for (const auto& m : st.optimizer.moments()) {
    detail::put<std::uint64_t>(os, m.m.size());
    os.write(reinterpret_cast<const char*>(m.m.data()), static_cast<std::streamsize>(m.m.size() * sizeof(float)));
    os.write(reinterpret_cast<const char*>(m.v.data()), static_cast<std::streamsize>(m.v.size() * sizeof(float)));
  }
  detail::put<std::uint64_t>(os, st.losses.size());
  os.write(reinterpret_cast<const char*>(st.losses.data()), static_cast<std::streamsize>(st.losses.size() * sizeof(float)));
}

inline TrainState read_train_state(std::istream& is) {
  TrainState st{read_params(is), Adam{}, {}};
  const auto step = detail::get<std::uint64_t>(is);
  std::vector<Adam::Moments> moments(detail::get<std::uint64_t>(is));
  for (auto& m : moments) {
    const auto n = detail::get<std::uint64_t>(is);
    m.m.resize(n);
    m.v.resize(n);
    is.read(reinterpret_cast<char*>(m.m.data()), static_cast<std::streamsize>(n * sizeof(float)));
    is.read(reinterpret_cast<char*>(m.v.data()), static_cast<std::streamsize>(n * sizeof(float)));
  }
  st.optimizer.restore(std::move(moments), step);
  st.losses.resize(detail::get<std::uint64_t>(is));
  is.read(reinterpret_cast<char*>(st.losses.data()), static_cast<std::streamsize>(st.losses.size() * sizeof(float)));
  if (!is) throw std::runtime_error("training state: truncated stream");
  return st;
}

inline TrainState start_training(const ModelConfig& config, std::uint64_t seed) {
  return {init_model(config, derive_seed(seed, "init")), Adam{}, {}};
}

// Packs are pure functions of (name, size, seed); a run builds each once.
class PackCache {
 public:
  explicit PackCache(std::uint64_t seed) : seed_(seed) {}

  const PackSpec& get(PackName name) {
    auto it = packs_.find(name);
    if (it == packs_.end()) it = packs_.emplace(name, build_pack(name, default_pack_size(name), seed_)).first;
    return it->second;
  }

 private:
  std::uint64_t seed_;
  std::map<PackName, PackSpec> packs_;
};

inline void train_stage(TrainState& state, const Stage& stage, std::uint64_t seed, PackCache& packs,
                        const LossOptions& loss = {}) {
  std::vector<EpochCursor> cursors;
  for (const auto& m : stage.mixture) {
    cursors.emplace_back(&packs.get(m.pack),
                         derive_seed(seed, "order:" + stage.name + ":" + std::string(pack_name(m.pack))));
  }
  const auto counts = mixture_counts(stage.mixture, stage.batch_size);
  state.optimizer.set_learning_rate(stage.learning_rate);
  auto named = state.params.named();
  std::vector<const AdditionExample*> picked;
  for (std::size_t step = 0; step < stage.steps; ++step) {
    picked.clear();
    for (std::size_t k = 0; k < cursors.size(); ++k)
      for (std::size_t i = 0; i < counts[k]; ++i) picked.push_back(cursors[k].next());
    const auto batch = encode_batch(picked, loss);
    state.params.zero_grad();
    Tensor logits = forward(state.params, batch.tokens);
    Tensor l = ops::cross_entropy(logits, batch.targets);
    const float value = l.item();
    if (!std::isfinite(value)) {
      throw Diverged("non-finite loss at stage " + stage.name + " step " + std::to_string(step));
    }
    backward(l);
    state.optimizer.step(named);
    state.losses.push_back(value);
  }
}

inline TrainState train_plan(const ModelConfig& config, const TrainPlan& plan, std::uint64_t seed,
                             const LossOptions& loss = {}) {
  TrainState state = start_training(config, seed);
  PackCache packs(seed);
  for (const auto& stage : plan.stages) train_stage(state, stage, seed, packs, loss);
  return state;
}

}  // namespace carrylab
