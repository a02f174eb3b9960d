#include "nuanced/tokenizer.hpp"

#include <cstdint>

namespace nuanced {

namespace {

struct CodePoint {
  char32_t value;
  std::size_t length;
};

// Lenient UTF-8 decode: malformed bytes decode as themselves, one byte long.
CodePoint decode(std::string_view s, std::size_t i) {
  const auto b0 = static_cast<unsigned char>(s[i]);
  auto cont = [&](std::size_t k) {
    return i + k < s.size() && (static_cast<unsigned char>(s[i + k]) & 0xC0) == 0x80;
  };
  auto bits = [&](std::size_t k) { return static_cast<char32_t>(s[i + k] & 0x3F); };
  if (b0 < 0x80) return {b0, 1};
  if ((b0 & 0xE0) == 0xC0 && cont(1)) return {(char32_t(b0 & 0x1F) << 6) | bits(1), 2};
  if ((b0 & 0xF0) == 0xE0 && cont(1) && cont(2))
    return {(char32_t(b0 & 0x0F) << 12) | (bits(1) << 6) | bits(2), 3};
  if ((b0 & 0xF8) == 0xF0 && cont(1) && cont(2) && cont(3))
    return {(char32_t(b0 & 0x07) << 18) | (bits(1) << 12) | (bits(2) << 6) | bits(3), 4};
  return {b0, 1};
}

bool is_space(char32_t c) {
  switch (c) {
    case U' ': case U'\t': case U'\n': case U'\v': case U'\f': case U'\r':
    case 0x85: case 0xA0: case 0x1680: case 0x2028: case 0x2029:
    case 0x202F: case 0x205F: case 0x3000:
      return true;
    default:
      return c >= 0x2000 && c <= 0x200A;
  }
}

bool is_punct(char32_t c) {
  if (c < 0x80) {
    return (c >= 0x21 && c <= 0x2F) || (c >= 0x3A && c <= 0x40) || (c >= 0x5B && c <= 0x60) ||
           (c >= 0x7B && c <= 0x7E);
  }
  switch (c) {
    case 0xA1: case 0xAB: case 0xBB: case 0xBF:
    case 0x2013: case 0x2014: case 0x2026:
      return true;
    default:
      return c >= 0x2018 && c <= 0x201F;
  }
}

}  // namespace

std::vector<TokenSpan> WhitespacePunctTokenizer::tokenize(std::string_view text) const {
  std::vector<TokenSpan> out;
  std::size_t i = 0;
  while (i < text.size()) {
    auto cp = decode(text, i);
    if (is_space(cp.value)) {
      i += cp.length;
      continue;
    }
    // Collect one whitespace-delimited word as a list of code points.
    std::vector<std::pair<std::size_t, CodePoint>> word;
    while (i < text.size()) {
      cp = decode(text, i);
      if (is_space(cp.value)) break;
      word.emplace_back(i, cp);
      i += cp.length;
    }
    const std::size_t word_end = i;
    std::size_t lead = 0;
    while (lead < word.size() && is_punct(word[lead].second.value)) ++lead;
    if (lead == word.size()) {
      out.push_back({word.front().first, word_end});
      continue;
    }
    std::size_t trail = word.size();
    while (trail > lead && is_punct(word[trail - 1].second.value)) --trail;

    if (lead > 0) out.push_back({word.front().first, word[lead].first});
    const std::size_t core_end = trail == word.size() ? word_end : word[trail].first;
    out.push_back({word[lead].first, core_end});
    if (trail < word.size()) out.push_back({core_end, word_end});
  }
  return out;
}

const Tokenizer& default_tokenizer() {
  static const WhitespacePunctTokenizer tokenizer;
  return tokenizer;
}

std::size_t count_words(std::string_view text) {
  std::size_t words = 0;
  bool in_word = false;
  for (std::size_t i = 0; i < text.size();) {
    auto cp = decode(text, i);
    const bool space = is_space(cp.value);
    if (!space && !in_word) ++words;
    in_word = !space;
    i += cp.length;
  }
  return words;
}

}  // namespace nuanced
