#pragma once

#include <cstddef>
#include <memory>
#include <string_view>
#include <vector>

namespace nuanced {

/// Byte range [begin, end) of one token in the source text.
struct TokenSpan {
  std::size_t begin = 0;
  std::size_t end = 0;
};

class Tokenizer {
 public:
  virtual ~Tokenizer() = default;
  virtual std::vector<TokenSpan> tokenize(std::string_view text) const = 0;
  std::size_t count(std::string_view text) const { return tokenize(text).size(); }
};

/// Splits on Unicode whitespace, then peels leading and trailing runs of
/// punctuation off each word as separate tokens ("Hello, world!" -> 4).
class WhitespacePunctTokenizer final : public Tokenizer {
 public:
  std::vector<TokenSpan> tokenize(std::string_view text) const override;
};

const Tokenizer& default_tokenizer();

inline std::size_t count_tokens(std::string_view text) { return default_tokenizer().count(text); }

/// Whitespace-separated words; drives the speech-duration model.
std::size_t count_words(std::string_view text);

}  // namespace nuanced
