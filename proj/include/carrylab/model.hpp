#pragma once

// Minimal pre-norm decoder-only transformer with pluggable position families.
//
// Block: x += Wo * attn(LN(x));  x += W2 * relu(W1 * LN(x))
// Head:  logits = Wh * LN(x) + bh   (untied from the token embedding)
//
// Position families (what is added to the token embedding):
//   absolute             wpe[raw index]
//   coupled_significance wsig[digit significance] + wrole[operand-1|operand-2|answer|symbol|BOS]
//   digit_aware          wpe[raw index] + wdig[offset from least significant digit]
//   symmetry_aware       wsig[significance] + wrole[operand|answer|symbol|BOS]
//   none                 nothing

#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "carrylab/corpus.hpp"
#include "carrylab/numerics/adam.hpp"
#include "carrylab/numerics/ops.hpp"
#include "carrylab/numerics/rng.hpp"
#include "carrylab/numerics/tensor.hpp"

namespace carrylab {

enum class PositionFamily { absolute, coupled_significance, digit_aware, symmetry_aware, none };

inline std::string_view family_name(PositionFamily f) {
  switch (f) {
    case PositionFamily::absolute: return "absolute";
    case PositionFamily::coupled_significance: return "coupled_significance";
    case PositionFamily::digit_aware: return "digit_aware";
    case PositionFamily::symmetry_aware: return "symmetry_aware";
    case PositionFamily::none: return "none";
  }
  return "?";
}

inline PositionFamily parse_position_family(std::string_view name) {
  for (auto f : {PositionFamily::absolute, PositionFamily::coupled_significance, PositionFamily::digit_aware,
                 PositionFamily::symmetry_aware, PositionFamily::none}) {
    if (family_name(f) == name) return f;
  }
  throw std::invalid_argument("unknown position family: " + std::string(name));
}

struct ModelConfig {
  int n_layers = 1;
  int width = 16;
  int n_heads = 4;
  int context_length = 13;
  int vocab_size = Vocab::size;
  PositionFamily position = PositionFamily::absolute;

  void validate() const {
    if (n_layers < 1) throw std::invalid_argument("ModelConfig: n_layers must be >= 1");
    if (n_heads < 1 || width < 1 || width % n_heads != 0) {
      throw std::invalid_argument("ModelConfig: width " + std::to_string(width) + " not divisible by " +
                                  std::to_string(n_heads) + " heads");
    }
    if (context_length < string_length(Layout::three_digit) + 1) {
      throw std::invalid_argument("ModelConfig: context_length " + std::to_string(context_length) +
                                  " cannot hold a three-digit example plus BOS");
    }
    if (vocab_size != Vocab::size) throw std::invalid_argument("ModelConfig: vocab_size must be 13");
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// ----------------------------------------------------------------------------
// Position assignment

constexpr int kSignificanceSlots = 5;  // units, tens, hundreds, thousands, none
constexpr int kNoSignificance = 4;

enum class TokenRole { operand1, operand2, answer, symbol, bos };

// Per-token indices into the active positional tables. Unused tables are empty.
struct PositionAssignment {
  std::vector<int> raw;
  std::vector<int> significance;
  std::vector<int> role;

  friend bool operator==(const PositionAssignment&, const PositionAssignment&) = default;
};

struct TokenSlot {
  TokenRole role;
  int significance;  // kNoSignificance for non-digits
};

// Roles of every position of a full BOS-prefixed sequence in `layout`.
inline std::vector<TokenSlot> layout_slots(Layout layout) {
  const int w = operand_digits(layout);
  std::vector<TokenSlot> slots;
  slots.push_back({TokenRole::bos, kNoSignificance});
  for (int i = 0; i < w; ++i) slots.push_back({TokenRole::operand1, w - 1 - i});
  slots.push_back({TokenRole::symbol, kNoSignificance});
  for (int i = 0; i < w; ++i) slots.push_back({TokenRole::operand2, w - 1 - i});
  slots.push_back({TokenRole::symbol, kNoSignificance});
  for (int i = 0; i <= w; ++i) slots.push_back({TokenRole::answer, w - i});
  return slots;
}

inline int role_slots(PositionFamily f) { return f == PositionFamily::symmetry_aware ? 4 : 5; }

inline int role_index(PositionFamily f, TokenRole r) {
  const int i = static_cast<int>(r);
  if (f != PositionFamily::symmetry_aware) return i;
  return i == 0 ? 0 : i - 1;  // operand-1 and operand-2 share a row
}

// Positions of a BOS-prefixed sequence of `length` tokens in `layout`.
// Positions past the rendered string (padding) get symbol/no-significance slots.
inline PositionAssignment assign_positions(PositionFamily family, Layout layout, std::size_t length) {
  PositionAssignment out;
  if (family == PositionFamily::none) return out;
  const auto slots = layout_slots(layout);
  const bool raw = family == PositionFamily::absolute || family == PositionFamily::digit_aware;
  const bool sig = family != PositionFamily::absolute;
  const bool role = family == PositionFamily::coupled_significance || family == PositionFamily::symmetry_aware;
  for (std::size_t i = 0; i < length; ++i) {
    const TokenSlot slot = i < slots.size() ? slots[i] : TokenSlot{TokenRole::symbol, kNoSignificance};
    if (raw) out.raw.push_back(static_cast<int>(i));
    if (sig) out.significance.push_back(slot.significance);
    if (role) out.role.push_back(role_index(family, slot.role));
  }
  return out;
}

inline PositionAssignment assign_positions(PositionFamily family, Layout layout) {
  return assign_positions(family, layout, static_cast<std::size_t>(string_length(layout) + 1));
}

// ----------------------------------------------------------------------------
// Parameters

struct BlockParams {
  Tensor ln1_g, ln1_b, w_qkv, b_qkv, w_proj, b_proj;
  Tensor ln2_g, ln2_b, w_fc, b_fc, w_out, b_out;
};

struct Params {
  ModelConfig config;
  Tensor wte;
  Tensor wpe;   // absolute, digit_aware
  Tensor wsig;  // coupled_significance, symmetry_aware, digit_aware
  Tensor wrole; // coupled_significance, symmetry_aware
  std::vector<BlockParams> blocks;
  Tensor lnf_g, lnf_b, w_head, b_head;

  // Every allocated parameter in a fixed order; handles alias the storage.
  std::vector<NamedTensor> named() const {
    std::vector<NamedTensor> out;
    out.push_back({"wte", wte});
    if (wpe.defined()) out.push_back({"wpe", wpe});
    if (wsig.defined()) out.push_back({"wsig", wsig});
    if (wrole.defined()) out.push_back({"wrole", wrole});
    for (std::size_t l = 0; l < blocks.size(); ++l) {
      const auto& b = blocks[l];
      const std::string p = "h" + std::to_string(l) + ".";
      out.push_back({p + "ln1_g", b.ln1_g});
      out.push_back({p + "ln1_b", b.ln1_b});
      out.push_back({p + "w_qkv", b.w_qkv});
      out.push_back({p + "b_qkv", b.b_qkv});
      out.push_back({p + "w_proj", b.w_proj});
      out.push_back({p + "b_proj", b.b_proj});
      out.push_back({p + "ln2_g", b.ln2_g});
      out.push_back({p + "ln2_b", b.ln2_b});
      out.push_back({p + "w_fc", b.w_fc});
      out.push_back({p + "b_fc", b.b_fc});
      out.push_back({p + "w_out", b.w_out});
      out.push_back({p + "b_out", b.b_out});
    }
    out.push_back({"lnf_g", lnf_g});
    out.push_back({"lnf_b", lnf_b});
    out.push_back({"w_head", w_head});
    out.push_back({"b_head", b_head});
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : named()) n += p.tensor.numel();
    return n;
  }

  void zero_grad() {
    for (auto& p : named()) p.tensor.zero_grad();
  }

  // Deep copy with fresh storage.
  Params clone() const {
    Params out = *this;
    auto copy = [](const Tensor& t) { return t.defined() ? Tensor::from(t.shape(), {t.data().begin(), t.data().end()}, true) : t; };
    out.wte = copy(wte);
    out.wpe = copy(wpe);
    out.wsig = copy(wsig);
    out.wrole = copy(wrole);
    for (auto& b : out.blocks) {
      for (Tensor* t : {&b.ln1_g, &b.ln1_b, &b.w_qkv, &b.b_qkv, &b.w_proj, &b.b_proj, &b.ln2_g, &b.ln2_b, &b.w_fc,
                        &b.b_fc, &b.w_out, &b.b_out}) {
        *t = copy(*t);
      }
    }
    out.lnf_g = copy(lnf_g);
    out.lnf_b = copy(lnf_b);
    out.w_head = copy(w_head);
    out.b_head = copy(b_head);
    return out;
  }

  // Order-sensitive FNV digest of every parameter bit pattern.
  std::uint64_t checksum() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& p : named()) {
      for (float v : p.tensor.data()) {
        std::uint32_t bits;
        std::memcpy(&bits, &v, sizeof bits);
        h = (h ^ bits) * 0x100000001b3ULL;
      }
    }
    return h;
  }
};

inline Params init_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  const auto c = static_cast<std::size_t>(config.width);
  const auto v = static_cast<std::size_t>(config.vocab_size);
  std::uint64_t stream = 0;
  auto gauss = [&](Shape shape) {
    Rng rng(derive_seed(seed, "init", stream++));
    std::vector<float> values(numel_of(shape));
    for (auto& x : values) x = static_cast<float>(0.02 * gaussian(rng));
    return Tensor::from(std::move(shape), std::move(values), true);
  };
  auto fill = [](Shape shape, float value) {
    auto n = numel_of(shape);
    return Tensor::from(std::move(shape), std::vector<float>(n, value), true);
  };

  Params p;
  p.config = config;
  p.wte = gauss({v, c});
  const auto f = config.position;
  if (f == PositionFamily::absolute || f == PositionFamily::digit_aware) {
    p.wpe = gauss({static_cast<std::size_t>(config.context_length), c});
  }
  if (f == PositionFamily::coupled_significance || f == PositionFamily::symmetry_aware ||
      f == PositionFamily::digit_aware) {
    p.wsig = gauss({kSignificanceSlots, c});
  }
  if (f == PositionFamily::coupled_significance || f == PositionFamily::symmetry_aware) {
    p.wrole = gauss({static_cast<std::size_t>(role_slots(f)), c});
  }
  for (int l = 0; l < config.n_layers; ++l) {
    BlockParams b;
    b.ln1_g = fill({c}, 1.0f);
    b.ln1_b = fill({c}, 0.0f);
    b.w_qkv = gauss({c, 3 * c});
    b.b_qkv = fill({3 * c}, 0.0f);
    b.w_proj = gauss({c, c});
    b.b_proj = fill({c}, 0.0f);
    b.ln2_g = fill({c}, 1.0f);
    b.ln2_b = fill({c}, 0.0f);
    b.w_fc = gauss({c, 4 * c});
    b.b_fc = fill({4 * c}, 0.0f);
    b.w_out = gauss({4 * c, c});
    b.b_out = fill({c}, 0.0f);
    p.blocks.push_back(std::move(b));
  }
  p.lnf_g = fill({c}, 1.0f);
  p.lnf_b = fill({c}, 0.0f);
  p.w_head = gauss({c, v});
  p.b_head = fill({v}, 0.0f);
  return p;
}

// ----------------------------------------------------------------------------
// Forward

// A right-padded batch of BOS-prefixed token sequences sharing one length.
struct TokenBatch {
  std::size_t batch = 0;
  std::size_t seq = 0;
  std::vector<int> tokens;      // batch * seq
  std::vector<Layout> layouts;  // one per row

  static TokenBatch single(std::vector<int> tokens, Layout layout) {
    TokenBatch b;
    b.batch = 1;
    b.seq = tokens.size();
    b.tokens = std::move(tokens);
    b.layouts = {layout};
    return b;
  }
};

// Attention weights captured during a forward pass, one [B, H, T, T] block per layer.
struct ForwardTrace {
  std::vector<std::vector<float>> attention;
};

// Logits [batch * seq, vocab].
inline Tensor forward(const Params& p, const TokenBatch& in, ForwardTrace* trace = nullptr) {
  const auto& cfg = p.config;
  if (in.seq == 0 || in.seq > static_cast<std::size_t>(cfg.context_length)) {
    throw std::invalid_argument("forward: sequence length " + std::to_string(in.seq) + " exceeds context length " +
                                std::to_string(cfg.context_length));
  }
  if (in.tokens.size() != in.batch * in.seq || in.layouts.size() != in.batch) {
    throw std::invalid_argument("forward: malformed token batch");
  }
  Tensor x = ops::embedding(p.wte, in.tokens);
  if (cfg.position != PositionFamily::none) {
    std::vector<int> raw, sig, role;
    for (std::size_t b = 0; b < in.batch; ++b) {
      auto a = assign_positions(cfg.position, in.layouts[b], in.seq);
      raw.insert(raw.end(), a.raw.begin(), a.raw.end());
      sig.insert(sig.end(), a.significance.begin(), a.significance.end());
      role.insert(role.end(), a.role.begin(), a.role.end());
    }
    if (!raw.empty()) x = ops::add(x, ops::embedding(p.wpe, raw));
    if (!sig.empty()) x = ops::add(x, ops::embedding(p.wsig, sig));
    if (!role.empty()) x = ops::add(x, ops::embedding(p.wrole, role));
  }
  const auto heads = static_cast<std::size_t>(cfg.n_heads);
  for (const auto& blk : p.blocks) {
    Tensor h = ops::layer_norm(x, blk.ln1_g, blk.ln1_b);
    Tensor qkv = ops::linear(h, blk.w_qkv, blk.b_qkv);
    std::vector<float>* probs = nullptr;
    if (trace) probs = &trace->attention.emplace_back();
    Tensor att = ops::causal_attention(qkv, in.batch, in.seq, heads, probs);
    x = ops::add(x, ops::linear(att, blk.w_proj, blk.b_proj));
    Tensor h2 = ops::layer_norm(x, blk.ln2_g, blk.ln2_b);
    Tensor mlp = ops::linear(ops::relu(ops::linear(h2, blk.w_fc, blk.b_fc)), blk.w_out, blk.b_out);
    x = ops::add(x, mlp);
  }
  x = ops::layer_norm(x, p.lnf_g, p.lnf_b);
  return ops::linear(x, p.w_head, p.b_head);
}

// Single sequence convenience: logits [tokens.size(), vocab].
inline Tensor forward(const Params& p, const std::vector<int>& tokens, Layout layout) {
  return forward(p, TokenBatch::single(tokens, layout));
}

// ----------------------------------------------------------------------------
// Attention summary

enum class SourceGroup { lower_digits, upper_digits, symbols, bos };
constexpr int kSourceGroups = 4;

inline SourceGroup source_group(const TokenSlot& slot) {
  if (slot.role == TokenRole::bos) return SourceGroup::bos;
  if (slot.role == TokenRole::symbol) return SourceGroup::symbols;
  return slot.significance <= 1 ? SourceGroup::lower_digits : SourceGroup::upper_digits;
}

struct AttentionSummary {
  std::size_t query = 0;
  // mass[layer][head][group]
  std::vector<std::vector<std::array<double, kSourceGroups>>> mass;

  double mean_mass(SourceGroup g) const {
    double total = 0.0;
    std::size_t n = 0;
    for (const auto& layer : mass)
      for (const auto& head : layer) {
        total += head[static_cast<int>(g)];
        ++n;
      }
    return n ? total / static_cast<double>(n) : 0.0;
  }
};

// Attention mass from `query` onto each source group, for every layer and head.
inline AttentionSummary attention_groups(const Params& p, const std::vector<int>& tokens, Layout layout,
                                         std::size_t query) {
  if (query >= tokens.size()) {
    throw std::out_of_range("attention_groups: query " + std::to_string(query) + " beyond sequence of length " +
                            std::to_string(tokens.size()));
  }
  NoGradGuard guard;
  ForwardTrace trace;
  forward(p, TokenBatch::single(tokens, layout), &trace);
  const auto slots = layout_slots(layout);
  const std::size_t t = tokens.size();
  const auto heads = static_cast<std::size_t>(p.config.n_heads);
  AttentionSummary out;
  out.query = query;
  for (const auto& probs : trace.attention) {
    auto& layer = out.mass.emplace_back(heads);
    for (std::size_t h = 0; h < heads; ++h) {
      layer[h].fill(0.0);
      for (std::size_t j = 0; j <= query; ++j) {
        const TokenSlot slot = j < slots.size() ? slots[j] : TokenSlot{TokenRole::symbol, kNoSignificance};
        layer[h][static_cast<int>(source_group(slot))] += probs[(h * t + query) * t + j];
      }
    }
  }
  return out;
}

// ----------------------------------------------------------------------------
// Checkpoints
//
// Layout (host byte order, little-endian on every supported target):
//   char[8]  "CLABCKPT"
//   u32      format version (1)
//   i32 x 6  n_layers, width, n_heads, context_length, vocab_size, position family
//   u32      tensor count
//   per tensor: u32 name length, name bytes, u32 rank, u64 dims[rank], f32 values

constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {
template <typename T>
void put(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}
template <typename T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!is) throw std::runtime_error("checkpoint: truncated file");
  return v;
}
}  // namespace detail

inline void write_params(std::ostream& os, const Params& p) {
  os.write("CLABCKPT", 8);
  detail::put(os, kCheckpointVersion);
  const auto& c = p.config;
  for (int v : {c.n_layers, c.width, c.n_heads, c.context_length, c.vocab_size, static_cast<int>(c.position)}) {
    detail::put<std::int32_t>(os, v);
  }
  const auto named = p.named();
  detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(named.size()));
  for (const auto& [name, t] : named) {
    detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) detail::put<std::uint64_t>(os, d);
    os.write(reinterpret_cast<const char*>(t.ptr()), static_cast<std::streamsize>(t.numel() * sizeof(float)));
  }
}

inline Params read_params(std::istream& is) {
  char magic[8];
  is.read(magic, 8);
  if (!is || std::string_view(magic, 8) != "CLABCKPT") throw std::runtime_error("not a checkpoint stream");
  const auto version = detail::get<std::uint32_t>(is);
  if (version != kCheckpointVersion) {
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
  }
  ModelConfig c;
  c.n_layers = detail::get<std::int32_t>(is);
  c.width = detail::get<std::int32_t>(is);
  c.n_heads = detail::get<std::int32_t>(is);
  c.context_length = detail::get<std::int32_t>(is);
  c.vocab_size = detail::get<std::int32_t>(is);
  const auto fam = detail::get<std::int32_t>(is);
  if (fam < 0 || fam > static_cast<int>(PositionFamily::none)) throw std::runtime_error("checkpoint: bad position family");
  c.position = static_cast<PositionFamily>(fam);
  Params p = init_model(c, 0);
  auto named = p.named();
  const auto count = detail::get<std::uint32_t>(is);
  if (count != named.size()) throw std::runtime_error("checkpoint: tensor count does not match config");
  for (auto& [name, t] : named) {
    const auto len = detail::get<std::uint32_t>(is);
    std::string stored(len, '\0');
    is.read(stored.data(), len);
    if (stored != name) throw std::runtime_error("checkpoint: expected tensor " + name + ", found " + stored);
    const auto rank = detail::get<std::uint32_t>(is);
    Shape shape(rank);
    for (auto& d : shape) d = detail::get<std::uint64_t>(is);
    if (shape != t.shape()) {
      throw std::runtime_error("checkpoint: tensor " + name + " has shape " + shape_str(shape) + ", expected " +
                               shape_str(t.shape()));
    }
    is.read(reinterpret_cast<char*>(t.ptr()), static_cast<std::streamsize>(t.numel() * sizeof(float)));
    if (!is) throw std::runtime_error("checkpoint: truncated tensor " + name);
  }
  return p;
}

inline void save_checkpoint(const Params& p, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open checkpoint for writing: " + path);
  write_params(os, p);
  if (!os) throw std::runtime_error("failed writing checkpoint: " + path);
}

inline Params load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint: " + path);
  return read_params(is);
}

}  // namespace carrylab
