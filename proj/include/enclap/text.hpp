#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace enclap::text {

/// Lowercases, strips punctuation (apostrophes between letters survive) and
/// splits on whitespace.
std::vector<std::string> tokenize_caption(std::string_view text);

std::string join_tokens(std::span<const std::string> tokens);

/// Token ids of one caption, y_1..y_T. Always ends with eos; never contains
/// pad or bos.
struct Caption {
  std::vector<std::int64_t> ids;
  bool truncated = false;  // generation hit the length cap
  double score = 0.0;      // length-normalised log-probability, when generated

  std::size_t length() const { return ids.size(); }
};

class Vocabulary {
 public:
  static constexpr std::int64_t kPad = 0;
  static constexpr std::int64_t kBos = 1;
  static constexpr std::int64_t kEos = 2;
  static constexpr std::int64_t kUnk = 3;

  Vocabulary();
  /// Builds from every token seen in `captions`, in sorted order.
  static Vocabulary from_captions(std::span<const std::string> captions);
  static Vocabulary from_words(std::vector<std::string> words);

  std::size_t size() const { return words_.size(); }
  std::int64_t id(const std::string& word) const;
  const std::string& word(std::int64_t id) const;
  const std::vector<std::string>& words() const { return words_; }

  /// Token ids without bos/eos.
  std::vector<std::int64_t> encode_words(std::string_view text) const;
  Caption encode(std::string_view text) const;
  std::string decode(std::span<const std::int64_t> ids) const;

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, std::int64_t> index_;
};

}  // namespace enclap::text
