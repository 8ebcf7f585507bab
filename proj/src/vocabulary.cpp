#include "vidreason/vocabulary.hpp"

#include <algorithm>
#include <cctype>

#include "vidreason/errors.hpp"

namespace vidreason {

const std::vector<std::string>& answer_words() {
  static const std::vector<std::string> words = {
      "the", "is", "are", "objects", "red", "green", "blue", "yellow", "purple", "white",
      "circle", "square", "triangle"};
  return words;
}

const std::vector<std::string>& query_words() {
  static const std::vector<std::string> words = {
      "shape", "colored", "like", "ripe", "tomato", "fresh", "grass", "clear", "sky", "banana", "grape",
      "snow", "three", "four", "no", "corners", "drifting", "toward", "left", "right", "top", "bottom",
      "edge", "moves", "fastest", "slowest", "largest", "smallest", "never", "overlaps", "another"};
  return words;
}

bool is_filler_word(std::string_view w) {
  static const std::vector<std::string_view> filler = {"the", "a", "an", "of", "with", "that", "is", "and", "to",
                                                       "which", "one"};
  return std::find(filler.begin(), filler.end(), w) != filler.end();
}

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    const auto uc = static_cast<unsigned char>(ch);
    if (std::isalpha(uc) || ch == '<' || ch == '>' || ch == '_' || std::isdigit(uc)) {
      cur.push_back(static_cast<char>(std::tolower(uc)));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

Vocabulary Vocabulary::standard(std::size_t seg_tokens) {
  std::vector<std::string> symbols = {"<pad>", "<eos>"};
  for (const auto& w : answer_words()) symbols.push_back(w);
  for (const auto& w : query_words()) symbols.push_back(w);
  for (std::size_t n = 0; n < seg_tokens; ++n) symbols.push_back("<seg_f_" + std::to_string(n + 1) + ">");
  for (std::size_t n = 0; n < seg_tokens; ++n) symbols.push_back("<seg_v_" + std::to_string(n + 1) + ">");
  return Vocabulary(std::move(symbols), seg_tokens);
}

Vocabulary::Vocabulary(std::vector<std::string> symbols, std::size_t seg_tokens)
    : symbols_(std::move(symbols)), seg_tokens_(seg_tokens) {
  if (symbols_.size() > kMaxSize) {
    throw ConfigError("vocabulary has " + std::to_string(symbols_.size()) + " symbols, limit is " +
                      std::to_string(kMaxSize));
  }
  if (seg_tokens_ == 0) throw ConfigError("at least one segmentation token per scale is required");
  for (TokenId i = 0; i < symbols_.size(); ++i) {
    if (!index_.emplace(symbols_[i], i).second) throw ConfigError("duplicate vocabulary symbol " + symbols_[i]);
  }
  auto need = [&](const std::string& s) {
    auto it = index_.find(s);
    if (it == index_.end()) throw ConfigError("vocabulary is missing " + s);
    return it->second;
  };
  pad_ = need("<pad>");
  eos_ = need("<eos>");
  seg_first_ = need("<seg_f_1>");
  for (std::size_t n = 0; n < seg_tokens_; ++n) {
    if (need("<seg_f_" + std::to_string(n + 1) + ">") != seg_first_ + n ||
        need("<seg_v_" + std::to_string(n + 1) + ">") != seg_first_ + seg_tokens_ + n) {
      throw ConfigError("segmentation placeholders must be contiguous, frame scale first");
    }
  }
}

TokenId Vocabulary::id(std::string_view s) const {
  auto it = index_.find(std::string(s));
  if (it == index_.end()) throw EncodingError("symbol '" + std::string(s) + "' is not in the vocabulary");
  return it->second;
}

std::vector<TokenId> Vocabulary::encode_query(std::string_view text) const {
  std::vector<TokenId> ids;
  for (const auto& w : split_words(text)) {
    if (!is_filler_word(w)) ids.push_back(id(w));
  }
  return ids;
}

std::vector<TokenId> Vocabulary::encode_words(std::string_view text) const {
  std::vector<TokenId> ids;
  for (const auto& w : split_words(text)) ids.push_back(id(w));
  return ids;
}

std::string Vocabulary::decode(const std::vector<TokenId>& ids) const {
  std::string out;
  for (TokenId t : ids) {
    if (!out.empty()) out.push_back(' ');
    out += symbol(t);
  }
  return out;
}

}  // namespace vidreason
