#include "readlab/world/vocabulary.hpp"

#include <stdexcept>

namespace readlab::world {
namespace {

constexpr std::array<std::string_view, kNumNouns> kNouns = {
    "cube", "ball", "cone", "cup", "box", "ring", "star", "disk", "rod", "bowl", "plate", "vase"};
constexpr std::array<std::string_view, kNumNouns> kNounSynonyms = {
    "block", "sphere", "funnel", "mug", "crate", "hoop", "asterisk", "puck", "stick", "basin", "dish", "urn"};
constexpr std::array<std::string_view, kNumAttributes> kAttributes = {
    "red", "blue", "green", "yellow", "large", "small", "shiny", "matte"};
constexpr std::array<std::string_view, kNumAttributes> kAttributeSynonyms = {
    "crimson", "azure", "emerald", "golden", "big", "tiny", "glossy", "dull"};
constexpr std::array<std::string_view, kNumRelations> kRelations = {
    "left-of", "right-of", "above", "below", "near", "far-from"};
constexpr std::array<int, kNumRelations> kInverse = {kRightOf, kLeftOf, kBelow, kAbove, kNear, kFarFrom};

}  // namespace

const Vocabulary& Vocabulary::standard() {
  static const Vocabulary vocab;
  return vocab;
}

Vocabulary::Vocabulary() {
  words_ = {"<pad>", "<bos>", "<eos>", "the", "is"};
  auto append = [this](auto const& list) {
    const auto first = static_cast<TokenId>(words_.size());
    for (auto w : list) words_.emplace_back(w);
    return first;
  };
  first_noun_ = append(kNouns);
  first_noun_syn_ = append(kNounSynonyms);
  first_attr_ = append(kAttributes);
  first_attr_syn_ = append(kAttributeSynonyms);
  first_relation_ = append(kRelations);
}

std::string_view Vocabulary::word(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= words_.size()) {
    throw std::out_of_range("token id " + std::to_string(id) + " outside text vocabulary");
  }
  return words_[static_cast<std::size_t>(id)];
}

std::optional<TokenId> Vocabulary::find(std::string_view w) const {
  for (std::size_t i = 0; i < words_.size(); ++i) {
    if (words_[i] == w) return static_cast<TokenId>(i);
  }
  return std::nullopt;
}

Lexeme Vocabulary::lexeme(TokenId id) const {
  word(id);  // range check
  using K = Lexeme::Kind;
  if (id <= kEos) return {K::kSpecial, static_cast<int>(id), false};
  if (id < first_noun_) return {K::kFunction, static_cast<int>(id), false};
  if (id < first_noun_syn_) return {K::kNoun, static_cast<int>(id - first_noun_), false};
  if (id < first_attr_) return {K::kNoun, static_cast<int>(id - first_noun_syn_), true};
  if (id < first_attr_syn_) return {K::kAttribute, static_cast<int>(id - first_attr_), false};
  if (id < first_relation_) return {K::kAttribute, static_cast<int>(id - first_attr_syn_), true};
  return {K::kRelation, static_cast<int>(id - first_relation_), false};
}

TokenId Vocabulary::noun(int index, bool synonym) const {
  if (index < 0 || index >= kNumNouns) throw std::out_of_range("noun index");
  return (synonym ? first_noun_syn_ : first_noun_) + index;
}

TokenId Vocabulary::attribute(int index, bool synonym) const {
  if (index < 0 || index >= kNumAttributes) throw std::out_of_range("attribute index");
  return (synonym ? first_attr_syn_ : first_attr_) + index;
}

TokenId Vocabulary::relation(int index) const {
  if (index < 0 || index >= kNumRelations) throw std::out_of_range("relation index");
  return first_relation_ + index;
}

int Vocabulary::inverse(int relation) {
  if (relation < 0 || relation >= kNumRelations) throw std::out_of_range("relation index");
  return kInverse[static_cast<std::size_t>(relation)];
}

std::optional<TokenId> Vocabulary::synonym_of(TokenId id) const {
  auto lx = lexeme(id);
  if (lx.kind == Lexeme::Kind::kNoun) return noun(lx.index, !lx.synonym);
  if (lx.kind == Lexeme::Kind::kAttribute) return attribute(lx.index, !lx.synonym);
  return std::nullopt;
}

TokenId Vocabulary::visual_noun(int index) const {
  if (index < 0 || index >= kNumNouns) throw std::out_of_range("visual noun index");
  return static_cast<TokenId>(visual_offset()) + index;
}

TokenId Vocabulary::visual_attribute(int index) const {
  if (index < 0 || index >= kNumAttributes) throw std::out_of_range("visual attribute index");
  return static_cast<TokenId>(visual_offset()) + kNumNouns + index;
}

TokenId Vocabulary::visual_relation(int index) const {
  if (index < 0 || index >= kNumRelations) throw std::out_of_range("visual relation index");
  return static_cast<TokenId>(visual_offset()) + kNumNouns + kNumAttributes + index;
}

TokenId Vocabulary::visual_jitter(int index) const {
  if (index < 0 || index >= kNumJitter) {
    throw std::out_of_range("jitter id " + std::to_string(index) + " outside [0, " +
                            std::to_string(kNumJitter) + ")");
  }
  return static_cast<TokenId>(visual_offset()) + kNumNouns + kNumAttributes + kNumRelations + index;
}

}  // namespace readlab::world
