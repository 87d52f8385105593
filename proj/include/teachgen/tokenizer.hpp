#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace teachgen {

/// Byte range [begin, end) of one token inside the tokenized text.
struct TokenPiece {
  std::size_t begin = 0;
  std::size_t end = 0;
};

/// Splits text into tokens. Implementations must be deterministic and map
/// the empty string to an empty token list.
class Tokenizer {
 public:
  virtual ~Tokenizer() = default;

  virtual std::vector<TokenPiece> split(std::string_view text) const = 0;

  std::vector<std::string> tokenize(std::string_view text) const;
  std::size_t count(std::string_view text) const { return split(text).size(); }
};

/// Splits on unicode whitespace (ASCII whitespace plus the common multi-byte
/// space characters in UTF-8).
class WhitespaceTokenizer final : public Tokenizer {
 public:
  std::vector<TokenPiece> split(std::string_view text) const override;
};

/// One token per byte. Used by the character-level training backends.
class ByteTokenizer final : public Tokenizer {
 public:
  std::vector<TokenPiece> split(std::string_view text) const override;
};

/// Shared default instance.
const Tokenizer& default_tokenizer();

/// Trims unicode whitespace from both ends.
std::string_view trim(std::string_view text);

}  // namespace teachgen
