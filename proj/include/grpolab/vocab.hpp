#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace grpolab {

// Token vocabulary of the lab. Fixed, tiny, and shared by the policy, the
// task generator and every file format. Reserved ids are compile-time
// constants so hot loops never touch a lookup table.
struct Vocab {
  static constexpr int bos = 0;
  static constexpr int eos = 1;
  static constexpr int think_open = 2;
  static constexpr int think_close = 3;
  static constexpr int answer_open = 4;
  static constexpr int answer_close = 5;
  static constexpr int step_sep = 6;
  static constexpr int digit0 = 7;  // digits occupy [digit0, digit0+10)
  static constexpr int plus = 17;
  static constexpr int times = 18;
  static constexpr int equals = 19;
  static constexpr int row_sep = 20;
  static constexpr int q_cell = 21;
  static constexpr int q_sum = 22;
  static constexpr int q_row = 23;
  static constexpr int q_col = 24;
  static constexpr int q_vals = 25;
  static constexpr int hint_preamble = 26;
  static constexpr int idx0 = 27;   // line coordinates occupy [idx0, idx0+3)
  static constexpr int cell0 = 30;  // cell addresses @rc occupy [cell0, cell0+9), row-major
  static constexpr int line0 = 39;  // line addresses row0..row2, col0..col2
  static constexpr int size = 45;

  static constexpr int digit(int d) { return digit0 + d; }
  static constexpr bool is_digit(int tok) { return tok >= digit0 && tok < digit0 + 10; }
  static constexpr int digit_value(int tok) { return tok - digit0; }
  static constexpr int index_token(int i) { return idx0 + i; }
  static constexpr bool is_index(int tok) { return tok >= idx0 && tok < idx0 + 3; }
  static constexpr int index_value(int tok) { return tok - idx0; }
  static constexpr int cell_token(int r, int c) { return cell0 + 3 * r + c; }
  static constexpr bool is_cell(int tok) { return tok >= cell0 && tok < cell0 + 9; }
  static constexpr int cell_row(int tok) { return (tok - cell0) / 3; }
  static constexpr int cell_col(int tok) { return (tok - cell0) % 3; }
  static constexpr int line_token(int axis, int index) { return line0 + 3 * axis + index; }
  static constexpr bool is_line(int tok) { return tok >= line0 && tok < line0 + 6; }
  static constexpr int line_axis(int tok) { return (tok - line0) / 3; }
  static constexpr int line_index(int tok) { return (tok - line0) % 3; }
  static constexpr bool is_valid(int tok) { return tok >= 0 && tok < size; }
};

// Canonical text rendering, used by the JSONL dataset format and debug output.
std::string_view token_name(int tok);
std::optional<int> token_from_name(std::string_view name);

// Space-separated token names; inverse of render_tokens. Throws
// std::invalid_argument on an unknown name.
std::string render_tokens(std::span<const int> tokens);
std::vector<int> parse_tokens(std::string_view text);

// Decimal digit-token rendering of n >= 0, no leading zeros.
std::vector<int> number_tokens(int n);
void append_number_tokens(std::vector<int>& out, int n);

// Parses a run of digit tokens (leading zeros allowed). nullopt if the span
// is empty, contains a non-digit token, or is longer than 8 digits.
std::optional<int> parse_number(std::span<const int> tokens);

}  // namespace grpolab
