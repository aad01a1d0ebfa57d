#pragma once

#include <array>
#include <cctype>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "keap/errors.hpp"

namespace keap {

namespace special {
inline constexpr std::int32_t kPad = 0;
inline constexpr std::int32_t kUnk = 1;
inline constexpr std::int32_t kCls = 2;
inline constexpr std::int32_t kSep = 3;
inline constexpr std::int32_t kMask = 4;
inline constexpr std::size_t kCount = 5;
}  // namespace special

// Amino-acid token space: 5 special ids then the 20 canonical residues plus
// the ambiguity codes B, Z, X, U, O at ids 5..29.
class Vocabulary {
 public:
  static constexpr std::string_view kResidues = "ACDEFGHIKLMNPQRSTVWYBZXUO";
  static constexpr std::size_t kNumResidues = 25;
  static constexpr std::int32_t kFirstResidue = static_cast<std::int32_t>(special::kCount);

  static std::size_t size() { return special::kCount + kNumResidues; }

  static bool is_residue_char(char c) {
    return kResidues.find(static_cast<char>(std::toupper(static_cast<unsigned char>(c)))) !=
           std::string_view::npos;
  }

  static bool is_residue_id(std::int32_t id) {
    return id >= kFirstResidue && id < static_cast<std::int32_t>(size());
  }

  static std::int32_t encode_residue(char c) {
    const char up = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    const auto pos = kResidues.find(up);
    if (pos == std::string_view::npos)
      throw VocabError(std::string("unknown residue '") + c + "'");
    return kFirstResidue + static_cast<std::int32_t>(pos);
  }

  static char decode_residue(std::int32_t id) {
    if (!is_residue_id(id)) throw VocabError("id " + std::to_string(id) + " is not a residue");
    return kResidues[static_cast<std::size_t>(id - kFirstResidue)];
  }

  // Residue class index in [0, kNumResidues) for the MLM head.
  static std::int32_t residue_class(std::int32_t id) {
    if (!is_residue_id(id)) throw VocabError("id " + std::to_string(id) + " is not a residue");
    return id - kFirstResidue;
  }
};

// Word-level vocabulary for relation/attribute text: lowercased, split on
// whitespace and punctuation, with a frequency floor for inclusion.
class TextVocabulary {
 public:
  TextVocabulary() = default;

  static std::vector<std::string> split_words(std::string_view text) {
    std::vector<std::string> words;
    std::string cur;
    for (char c : text) {
      const unsigned char uc = static_cast<unsigned char>(c);
      if (std::isalnum(uc)) {
        cur.push_back(static_cast<char>(std::tolower(uc)));
      } else if (!cur.empty()) {
        words.push_back(std::move(cur));
        cur.clear();
      }
    }
    if (!cur.empty()) words.push_back(std::move(cur));
    return words;
  }

  // Builds ids in first-occurrence order over words meeting the floor.
  static TextVocabulary build(const std::vector<std::string>& corpus, std::size_t min_count = 1) {
    std::map<std::string, std::size_t> counts;
    std::vector<std::vector<std::string>> tokenized;
    tokenized.reserve(corpus.size());
    for (const auto& line : corpus) {
      tokenized.push_back(split_words(line));
      for (const auto& w : tokenized.back()) ++counts[w];
    }
    TextVocabulary v;
    for (const auto& words : tokenized)
      for (const auto& w : words) {
        if (counts[w] < min_count) continue;
        if (v.word_to_id_.contains(w)) continue;
        const auto id = static_cast<std::int32_t>(special::kCount + v.id_to_word_.size());
        v.word_to_id_.emplace(w, id);
        v.id_to_word_.push_back(w);
      }
    return v;
  }

  std::size_t size() const { return special::kCount + id_to_word_.size(); }

  std::int32_t encode_word(const std::string& w) const {
    auto it = word_to_id_.find(w);
    return it == word_to_id_.end() ? special::kUnk : it->second;
  }

  const std::string& decode_word(std::int32_t id) const {
    const auto idx = static_cast<std::size_t>(id) - special::kCount;
    if (id < static_cast<std::int32_t>(special::kCount) || idx >= id_to_word_.size())
      throw VocabError("id " + std::to_string(id) + " is not a known word");
    return id_to_word_[idx];
  }

  const std::vector<std::string>& words() const { return id_to_word_; }

 private:
  std::map<std::string, std::int32_t> word_to_id_;
  std::vector<std::string> id_to_word_;
};

}  // namespace keap
