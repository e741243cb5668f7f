#include "enclap/text.hpp"

#include <algorithm>
#include <cctype>
#include <set>
#include <stdexcept>

namespace enclap::text {

namespace {
bool is_alnum(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }
}  // namespace

std::vector<std::string> tokenize_caption(std::string_view text) {
  std::string cleaned;
  cleaned.reserve(text.size());
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (is_alnum(c)) {
      cleaned.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    } else if (c == '\'' && i > 0 && i + 1 < text.size() && is_alnum(text[i - 1]) && is_alnum(text[i + 1])) {
      cleaned.push_back(c);
    } else {
      cleaned.push_back(' ');
    }
  }
  std::vector<std::string> tokens;
  std::string cur;
  for (char c : cleaned) {
    if (c == ' ') {
      if (!cur.empty()) tokens.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) tokens.push_back(std::move(cur));
  return tokens;
}

std::string join_tokens(std::span<const std::string> tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out.push_back(' ');
    out += tokens[i];
  }
  return out;
}

Vocabulary::Vocabulary() : words_{"<pad>", "<bos>", "<eos>", "<unk>"} {
  for (std::size_t i = 0; i < words_.size(); ++i) index_[words_[i]] = static_cast<std::int64_t>(i);
}

Vocabulary Vocabulary::from_captions(std::span<const std::string> captions) {
  std::set<std::string> seen;
  for (const auto& c : captions)
    for (auto& t : tokenize_caption(c)) seen.insert(std::move(t));
  return from_words({seen.begin(), seen.end()});
}

Vocabulary Vocabulary::from_words(std::vector<std::string> words) {
  Vocabulary v;
  for (auto& w : words) {
    if (v.index_.count(w)) continue;
    v.index_[w] = static_cast<std::int64_t>(v.words_.size());
    v.words_.push_back(std::move(w));
  }
  return v;
}

std::int64_t Vocabulary::id(const std::string& word) const {
  auto it = index_.find(word);
  return it == index_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::word(std::int64_t id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= words_.size()) {
    throw std::out_of_range("token id " + std::to_string(id) + " outside vocabulary");
  }
  return words_[static_cast<std::size_t>(id)];
}

std::vector<std::int64_t> Vocabulary::encode_words(std::string_view text) const {
  std::vector<std::int64_t> ids;
  for (const auto& t : tokenize_caption(text)) ids.push_back(id(t));
  return ids;
}

Caption Vocabulary::encode(std::string_view text) const {
  Caption c;
  c.ids = encode_words(text);
  c.ids.push_back(kEos);
  return c;
}

std::string Vocabulary::decode(std::span<const std::int64_t> ids) const {
  std::vector<std::string> words;
  for (auto id : ids) {
    if (id == kEos) break;
    if (id == kPad || id == kBos) continue;
    words.push_back(word(id));
  }
  return join_tokens(words);
}

}  // namespace enclap::text
