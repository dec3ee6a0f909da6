#pragma once

// Zero-padded addition strings, carry annotation and character tokenization.
//
//   two_digit:   "49+07=056"     (9 chars, 3 answer digits)
//   three_digit: "049+007=0056"  (12 chars, 4 answer digits)

#include <array>
#include <cstdint>
#include <ostream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace carrylab {

enum class Layout { two_digit, three_digit };

constexpr int operand_digits(Layout layout) { return layout == Layout::two_digit ? 2 : 3; }
constexpr int answer_digits(Layout layout) { return operand_digits(layout) + 1; }
constexpr int operand_max(Layout layout) { return layout == Layout::two_digit ? 99 : 999; }
// Characters in prompt "aa+bb=" and in the full string.
constexpr int prompt_length(Layout layout) { return 2 * operand_digits(layout) + 2; }
constexpr int string_length(Layout layout) { return prompt_length(layout) + answer_digits(layout); }

inline std::string_view layout_name(Layout layout) {
  return layout == Layout::two_digit ? "two_digit" : "three_digit";
}

inline Layout parse_layout(std::string_view name) {
  if (name == "two_digit") return Layout::two_digit;
  if (name == "three_digit") return Layout::three_digit;
  throw std::invalid_argument("unknown layout: " + std::string(name));
}

// Layout of a rendered string or prompt, judged by the operand width before '+'.
inline Layout detect_layout(std::string_view text) {
  const auto plus = text.find('+');
  if (plus == 2) return Layout::two_digit;
  if (plus == 3) return Layout::three_digit;
  throw std::invalid_argument("unknown layout for string '" + std::string(text) + "'");
}

// Decimal digit of `value` at significance `s` (0 = units).
constexpr int digit_at(int value, int s) {
  for (int i = 0; i < s; ++i) value /= 10;
  return value % 10;
}

struct AdditionExample {
  int a = 0;
  int b = 0;
  Layout layout = Layout::two_digit;
  std::string prompt;  // up to and including '='
  std::string answer;  // zero-padded sum
  int c1 = 0;          // units -> tens
  int c2 = 0;          // tens -> hundreds
  int c3 = 0;          // hundreds -> thousands

  int sum() const { return a + b; }
  std::string text() const { return prompt + answer; }
  bool true_three_digit() const { return a >= 100 || b >= 100; }

  friend bool operator==(const AdditionExample& x, const AdditionExample& y) {
    return x.a == y.a && x.b == y.b && x.layout == y.layout;
  }
};

inline std::ostream& operator<<(std::ostream& os, const AdditionExample& ex) { return os << ex.text(); }

// Carry out of each column by grade-school addition, least significant first.
inline std::array<int, 3> column_carries(int a, int b) {
  std::array<int, 3> carries{};
  int carry = 0;
  for (int s = 0; s < 3; ++s) {
    carry = (digit_at(a, s) + digit_at(b, s) + carry) >= 10 ? 1 : 0;
    carries[s] = carry;
  }
  return carries;
}

inline std::string zero_pad(int value, int width) {
  std::string out(width, '0');
  for (int i = width - 1; i >= 0 && value > 0; --i, value /= 10) out[i] = static_cast<char>('0' + value % 10);
  return out;
}

inline AdditionExample render(int a, int b, Layout layout) {
  const int hi = operand_max(layout);
  if (a < 0 || b < 0 || a > hi || b > hi) {
    throw std::out_of_range("render: operands (" + std::to_string(a) + ", " + std::to_string(b) +
                            ") out of range for layout " + std::string(layout_name(layout)));
  }
  AdditionExample ex;
  ex.a = a;
  ex.b = b;
  ex.layout = layout;
  const int w = operand_digits(layout);
  ex.prompt = zero_pad(a, w) + "+" + zero_pad(b, w) + "=";
  ex.answer = zero_pad(a + b, answer_digits(layout));
  const auto carries = column_carries(a, b);
  ex.c1 = carries[0];
  ex.c2 = carries[1];
  ex.c3 = carries[2];
  return ex;
}

// All ordered pairs in [0,99]^2, a-major.
inline std::vector<AdditionExample> gen_exhaustive_2digit() {
  std::vector<AdditionExample> out;
  out.reserve(10000);
  for (int a = 0; a < 100; ++a)
    for (int b = 0; b < 100; ++b) out.push_back(render(a, b, Layout::two_digit));
  return out;
}

// The same 10,000 pairs rendered in the three-digit layout.
inline std::vector<AdditionExample> gen_lowrange3() {
  std::vector<AdditionExample> out;
  out.reserve(10000);
  for (int a = 0; a < 100; ++a)
    for (int b = 0; b < 100; ++b) out.push_back(render(a, b, Layout::three_digit));
  return out;
}

// Character vocabulary: BOS, '0'..'9', '+', '='.
struct Vocab {
  static constexpr int bos = 0;
  static constexpr int plus = 11;
  static constexpr int equals = 12;
  static constexpr int size = 13;

  static constexpr bool is_digit_id(int id) { return id >= 1 && id <= 10; }
  static constexpr int digit_id(int digit) { return digit + 1; }
  static constexpr int id_digit(int id) { return id - 1; }

  static int id_of(char ch) {
    if (ch >= '0' && ch <= '9') return digit_id(ch - '0');
    if (ch == '+') return plus;
    if (ch == '=') return equals;
    throw std::invalid_argument(std::string("tokenize: unknown character '") + ch + "'");
  }

  static char char_of(int id) {
    if (is_digit_id(id)) return static_cast<char>('0' + id_digit(id));
    if (id == plus) return '+';
    if (id == equals) return '=';
    if (id == bos) throw std::invalid_argument("detokenize: BOS has no character form");
    throw std::out_of_range("detokenize: unknown token id " + std::to_string(id));
  }
};

// BOS followed by one id per character.
inline std::vector<int> tokenize(std::string_view text) {
  std::vector<int> ids;
  ids.reserve(text.size() + 1);
  ids.push_back(Vocab::bos);
  for (char ch : text) ids.push_back(Vocab::id_of(ch));
  return ids;
}

// Inverse of tokenize; a leading BOS is dropped.
inline std::string detokenize(const std::vector<int>& ids) {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i == 0 && ids[i] == Vocab::bos) continue;
    out.push_back(Vocab::char_of(ids[i]));
  }
  return out;
}

// One example per line: prompt TAB answer.
inline void write_dataset(std::ostream& os, const std::vector<AdditionExample>& examples) {
  for (const auto& ex : examples) os << ex.prompt << '\t' << ex.answer << '\n';
}

}  // namespace carrylab
