#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace readlab::world {

using TokenId = std::int64_t;
using TokenSeq = std::vector<TokenId>;

inline constexpr int kNumNouns = 12;
inline constexpr int kNumAttributes = 8;
inline constexpr int kNumRelations = 6;
inline constexpr int kNumJitter = 4;

enum Relation : int { kLeftOf = 0, kRightOf, kAbove, kBelow, kNear, kFarFrom };

/// What a text token stands for.
struct Lexeme {
  enum class Kind { kSpecial, kFunction, kNoun, kAttribute, kRelation };
  Kind kind = Kind::kSpecial;
  int index = 0;
  bool synonym = false;
};

/// Fixed text and visual vocabularies. Text ids are contiguous from 0 with the
/// special tokens first; visual ids follow the text ids so the two never
/// overlap.
class Vocabulary {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kBos = 1;
  static constexpr TokenId kEos = 2;
  static constexpr TokenId kThe = 3;
  static constexpr TokenId kIs = 4;

  static const Vocabulary& standard();

  std::size_t size() const { return words_.size(); }
  std::string_view word(TokenId id) const;
  std::optional<TokenId> find(std::string_view word) const;
  Lexeme lexeme(TokenId id) const;

  TokenId noun(int index, bool synonym = false) const;
  TokenId attribute(int index, bool synonym = false) const;
  TokenId relation(int index) const;
  static int inverse(int relation);
  static bool symmetric(int relation) { return inverse(relation) == relation; }

  /// Base word <-> synonym, for nouns and adjectives only.
  std::optional<TokenId> synonym_of(TokenId id) const;

  std::size_t visual_offset() const { return size(); }
  std::size_t visual_size() const {
    return kNumNouns + kNumAttributes + kNumRelations + kNumJitter;
  }
  TokenId visual_noun(int index) const;
  TokenId visual_attribute(int index) const;
  TokenId visual_relation(int index) const;
  TokenId visual_jitter(int index) const;

 private:
  Vocabulary();
  std::vector<std::string> words_;
  TokenId first_noun_ = 0;
  TokenId first_noun_syn_ = 0;
  TokenId first_attr_ = 0;
  TokenId first_attr_syn_ = 0;
  TokenId first_relation_ = 0;
};

}  // namespace readlab::world
