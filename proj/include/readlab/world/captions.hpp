#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "readlab/world/scene.hpp"

namespace readlab::world {

enum class Role { kOriginal, kAlternative, kParaphrase, kHardNegative };

enum class NegativeCategory {
  kSwapObject,
  kSwapAttribute,
  kReplaceObject,
  kReplaceAttribute,
  kReplaceRelation,
};
inline constexpr std::array<NegativeCategory, 5> kAllNegativeCategories = {
    NegativeCategory::kSwapObject, NegativeCategory::kSwapAttribute,
    NegativeCategory::kReplaceObject, NegativeCategory::kReplaceAttribute,
    NegativeCategory::kReplaceRelation};

std::string_view to_string(Role role);
std::string_view to_string(NegativeCategory category);
Role parse_role(std::string_view text);
NegativeCategory parse_category(std::string_view text);

/// Surface templates: bit 0 set when the second object is mentioned first,
/// bit 1 set when any content word is a synonym.
enum TemplateId : int { kBaseTemplate = 0, kInvertedTemplate = 1, kBaseSynonym = 2, kInvertedSynonym = 3 };

struct CaptionRecord {
  TokenSeq tokens;
  int template_id = kBaseTemplate;
  Role role = Role::kOriginal;
  std::optional<NegativeCategory> category;
  std::uint64_t scene_id = 0;
};

/// Slot-level view of "the A1 N1 is R the A2 N2".
struct Surface {
  ObjectSpec first;
  ObjectSpec second;
  int relation = 0;
  /// Synonym flags for A1, N1, A2, N2.
  std::array<bool, 4> synonym{};
};

inline constexpr std::size_t kCaptionLength = 10;

TokenSeq render_tokens(const Surface& surface);
/// Parses a caption; nullopt when the tokens are not a grammar sentence.
std::optional<Surface> parse_surface(const TokenSeq& tokens);
/// Meaning of a caption as a Scene (id 0). Nullopt for ungrammatical input.
std::optional<Scene> parse_caption(const TokenSeq& tokens);
std::string surface_text(const TokenSeq& tokens);
/// Word-level Hamming distance for equal-length token sequences.
std::size_t word_distance(const TokenSeq& a, const TokenSeq& b);
int template_of(const Surface& surface, const Scene& scene);

/// Base, inverted, and an all-synonym variant of each; every member describes
/// `scene`.
std::vector<CaptionRecord> caption_set(const Scene& scene);

/// A meaning-preserving rewrite: optional inversion ("a R b" -> "b R' a")
/// and synonym toggles on the A1, N1, A2, N2 slots of the input.
struct ParaphraseEdit {
  bool invert = false;
  std::array<bool, 4> toggle{};
};

/// Applies `edit`; throws if the edit is the identity or the role is not
/// original/alternative.
CaptionRecord paraphrase_with(const CaptionRecord& caption, const ParaphraseEdit& edit);

/// Same meaning, different tokens: a seeded non-identity ParaphraseEdit.
CaptionRecord make_paraphrase(const CaptionRecord& caption, std::uint64_t seed);

/// `count` negatives of distinct categories, each within two words of
/// `caption` and inconsistent with `scene`. Throws std::invalid_argument when
/// fewer than `count` categories yield a valid negative.
std::vector<CaptionRecord> make_hard_negatives(const CaptionRecord& caption, const Scene& scene,
                                               std::size_t count, std::uint64_t seed);

/// Categories that produce a negative for this caption/scene pair.
std::vector<NegativeCategory> available_categories(const CaptionRecord& caption, const Scene& scene);

/// Replaces round(fraction * #paraphrases) paraphrase records by captions of
/// records with a different meaning. The replaced set for a smaller fraction
/// is a prefix of the set for a larger one under the same seed.
std::vector<CaptionRecord> inject_paraphrase_noise(std::vector<CaptionRecord> records,
                                                   double fraction, std::uint64_t seed);

}  // namespace readlab::world
