#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace vidreason {

using TokenId = std::size_t;

/// Closed symbol table shared by the text encoder and the responder. Holds the
/// control symbols, answer words, query words and one placeholder per
/// segmentation token (<seg_f_n>, <seg_v_n>).
class Vocabulary {
 public:
  static constexpr std::size_t kMaxSize = 64;

  /// Standard table for `seg_tokens` placeholders per scale.
  static Vocabulary standard(std::size_t seg_tokens);
  /// Throws ConfigError if the table exceeds kMaxSize or lacks placeholders.
  explicit Vocabulary(std::vector<std::string> symbols, std::size_t seg_tokens);

  std::size_t size() const { return symbols_.size(); }
  std::size_t seg_tokens() const { return seg_tokens_; }
  const std::vector<std::string>& symbols() const { return symbols_; }
  const std::string& symbol(TokenId id) const { return symbols_.at(id); }
  bool contains(std::string_view s) const { return index_.count(std::string(s)) != 0; }
  /// Throws EncodingError for unknown symbols.
  TokenId id(std::string_view s) const;

  TokenId pad() const { return pad_; }
  TokenId eos() const { return eos_; }
  TokenId seg_frame(std::size_t n) const { return seg_first_ + n; }
  TokenId seg_video(std::size_t n) const { return seg_first_ + seg_tokens_ + n; }
  bool is_placeholder(TokenId id) const { return id >= seg_first_ && id < seg_first_ + 2 * seg_tokens_; }
  /// Index into the 2N codebook (frame scale first) for a placeholder id.
  std::size_t placeholder_slot(TokenId id) const { return id - seg_first_; }

  /// Lower-cases, splits on non-letters, drops filler words, maps to ids.
  std::vector<TokenId> encode_query(std::string_view text) const;
  std::vector<TokenId> encode_words(std::string_view text) const;
  std::string decode(const std::vector<TokenId>& ids) const;

  bool operator==(const Vocabulary& o) const { return symbols_ == o.symbols_ && seg_tokens_ == o.seg_tokens_; }

 private:
  std::vector<std::string> symbols_;
  std::unordered_map<std::string, TokenId> index_;
  std::size_t seg_tokens_ = 0;
  TokenId pad_ = 0, eos_ = 0, seg_first_ = 0;
};

/// Words a query may use once filler words are removed.
const std::vector<std::string>& query_words();
const std::vector<std::string>& answer_words();
bool is_filler_word(std::string_view w);
std::vector<std::string> split_words(std::string_view text);

}  // namespace vidreason
