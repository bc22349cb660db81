#include "brewrank/tokenizer.hpp"

#include "brewrank/error.hpp"

namespace brewrank {

namespace {

bool is_word_byte(unsigned char c) {
  return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c >= 0x80;
}

bool is_space_byte(unsigned char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f';
}

}  // namespace

std::size_t WordPunctTokenizer::count(std::string_view text) const {
  std::size_t n = 0;
  bool in_word = false;
  for (unsigned char c : text) {
    if (is_word_byte(c)) {
      if (!in_word) ++n;
      in_word = true;
    } else {
      in_word = false;
      if (!is_space_byte(c)) ++n;
    }
  }
  return n;
}

TokenizerHandle make_tokenizer(std::string_view name) {
  if (name == "default" || name == "wordpunct") return std::make_shared<WordPunctTokenizer>();
  if (name == "chars4") return std::make_shared<Chars4Tokenizer>();
  throw Error(ErrorKind::InvalidArgument, "unknown tokenizer '" + std::string(name) + "'");
}

std::size_t count_tokens(const Tokenizer& tokenizer, std::string_view text) { return tokenizer.count(text); }

}  // namespace brewrank
