#pragma once

#include <cstddef>
#include <memory>
#include <string>
#include <string_view>

namespace brewrank {

/// Token counter used for prompt budget accounting.
///
/// Counts are tokenizer-relative: the default tokenizer is a deterministic
/// word/punctuation segmenter, not a model vocabulary.
class Tokenizer {
 public:
  virtual ~Tokenizer() = default;

  virtual std::string_view name() const = 0;
  virtual std::size_t count(std::string_view text) const = 0;

  /// True when inserting text into a string never lowers its count. Budget
  /// fitting may then binary-search instead of scanning.
  virtual bool monotone() const { return false; }
};

using TokenizerHandle = std::shared_ptr<const Tokenizer>;

/// "default" (alias "wordpunct"): each maximal run of alphanumerics is one
/// token, each other non-space byte is one token. Bytes >= 0x80 are treated
/// as alphanumeric so UTF-8 words stay whole.
class WordPunctTokenizer final : public Tokenizer {
 public:
  std::string_view name() const override { return "default"; }
  std::size_t count(std::string_view text) const override;
  bool monotone() const override { return true; }
};

/// "chars4": ceil(bytes / 4), a rough stand-in for BPE-style vocabularies.
class Chars4Tokenizer final : public Tokenizer {
 public:
  std::string_view name() const override { return "chars4"; }
  std::size_t count(std::string_view text) const override { return (text.size() + 3) / 4; }
  bool monotone() const override { return true; }
};

/// Throws Error(InvalidArgument) for an unknown name.
TokenizerHandle make_tokenizer(std::string_view name);

std::size_t count_tokens(const Tokenizer& tokenizer, std::string_view text);

}  // namespace brewrank
