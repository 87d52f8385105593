#include "teachgen/tokenizer.hpp"

namespace teachgen {
namespace {

// Length in bytes of the whitespace sequence starting at `pos`, or 0.
std::size_t whitespace_at(std::string_view s, std::size_t pos) {
  const auto c = static_cast<unsigned char>(s[pos]);
  if (c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f')
    return 1;
  auto byte = [&](std::size_t i) {
    return i < s.size() ? static_cast<unsigned char>(s[i]) : 0u;
  };
  // U+0085, U+00A0
  if (c == 0xC2 && (byte(pos + 1) == 0x85 || byte(pos + 1) == 0xA0)) return 2;
  // U+1680
  if (c == 0xE1 && byte(pos + 1) == 0x9A && byte(pos + 2) == 0x80) return 3;
  if (c == 0xE2) {
    const auto b1 = byte(pos + 1), b2 = byte(pos + 2);
    // U+2000..U+200A, U+2028, U+2029, U+202F
    if (b1 == 0x80 && ((b2 >= 0x80 && b2 <= 0x8A) || b2 == 0xA8 ||
                       b2 == 0xA9 || b2 == 0xAF))
      return 3;
    // U+205F
    if (b1 == 0x81 && b2 == 0x9F) return 3;
  }
  // U+3000
  if (c == 0xE3 && byte(pos + 1) == 0x80 && byte(pos + 2) == 0x80) return 3;
  return 0;
}

}  // namespace

std::vector<std::string> Tokenizer::tokenize(std::string_view text) const {
  std::vector<std::string> out;
  for (const auto& piece : split(text))
    out.emplace_back(text.substr(piece.begin, piece.end - piece.begin));
  return out;
}

std::vector<TokenPiece> WhitespaceTokenizer::split(std::string_view text) const {
  std::vector<TokenPiece> out;
  std::size_t pos = 0;
  std::size_t start = std::string_view::npos;
  while (pos < text.size()) {
    if (const auto ws = whitespace_at(text, pos); ws > 0) {
      if (start != std::string_view::npos) {
        out.push_back({start, pos});
        start = std::string_view::npos;
      }
      pos += ws;
    } else {
      if (start == std::string_view::npos) start = pos;
      ++pos;
    }
  }
  if (start != std::string_view::npos) out.push_back({start, text.size()});
  return out;
}

std::vector<TokenPiece> ByteTokenizer::split(std::string_view text) const {
  std::vector<TokenPiece> out(text.size());
  for (std::size_t i = 0; i < text.size(); ++i) out[i] = {i, i + 1};
  return out;
}

const Tokenizer& default_tokenizer() {
  static const WhitespaceTokenizer instance;
  return instance;
}

std::string_view trim(std::string_view text) {
  const auto pieces = WhitespaceTokenizer{}.split(text);
  if (pieces.empty()) return text.substr(0, 0);
  return text.substr(pieces.front().begin,
                     pieces.back().end - pieces.front().begin);
}

}  // namespace teachgen
