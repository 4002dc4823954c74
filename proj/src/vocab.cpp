#include "grpolab/vocab.hpp"

#include <array>
#include <sstream>
#include <stdexcept>

namespace grpolab {

namespace {

constexpr std::array<std::string_view, Vocab::size> kNames = {
    "<bos>", "<eos>", "<think>", "</think>", "<answer>", "</answer>", ";",
    "0", "1", "2", "3", "4", "5", "6", "7", "8", "9",
    "+", "*", "=", "/",
    "cell", "sum", "row", "col", "vals:", "hint:",
    "#0", "#1", "#2",
    "@00", "@01", "@02", "@10", "@11", "@12", "@20", "@21", "@22",
    "row0", "row1", "row2", "col0", "col1", "col2",
};

}  // namespace

std::string_view token_name(int tok) {
  if (!Vocab::is_valid(tok)) throw std::invalid_argument("token_name: id out of range");
  return kNames[static_cast<size_t>(tok)];
}

std::optional<int> token_from_name(std::string_view name) {
  for (int t = 0; t < Vocab::size; ++t)
    if (kNames[static_cast<size_t>(t)] == name) return t;
  return std::nullopt;
}

std::string render_tokens(std::span<const int> tokens) {
  std::string out;
  for (size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += token_name(tokens[i]);
  }
  return out;
}

std::vector<int> parse_tokens(std::string_view text) {
  std::vector<int> out;
  std::istringstream in{std::string(text)};
  std::string word;
  while (in >> word) {
    auto tok = token_from_name(word);
    if (!tok) throw std::invalid_argument("parse_tokens: unknown token name '" + word + "'");
    out.push_back(*tok);
  }
  return out;
}

void append_number_tokens(std::vector<int>& out, int n) {
  if (n < 0) throw std::invalid_argument("append_number_tokens: negative");
  if (n == 0) {
    out.push_back(Vocab::digit(0));
    return;
  }
  std::array<int, 10> digits{};
  int count = 0;
  while (n > 0) {
    digits[static_cast<size_t>(count++)] = n % 10;
    n /= 10;
  }
  for (int i = count - 1; i >= 0; --i) out.push_back(Vocab::digit(digits[static_cast<size_t>(i)]));
}

std::vector<int> number_tokens(int n) {
  std::vector<int> out;
  append_number_tokens(out, n);
  return out;
}

std::optional<int> parse_number(std::span<const int> tokens) {
  if (tokens.empty() || tokens.size() > 8) return std::nullopt;
  long value = 0;
  for (int tok : tokens) {
    if (!Vocab::is_digit(tok)) return std::nullopt;
    value = value * 10 + Vocab::digit_value(tok);
  }
  return static_cast<int>(value);
}

}  // namespace grpolab
