#include "readlab/world/captions.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

namespace readlab::world {
namespace {

using K = Lexeme::Kind;

Surface scene_surface(const Scene& s, bool inverted, bool synonyms) {
  Surface out;
  if (inverted) {
    out.first = s.second;
    out.second = s.first;
    out.relation = Vocabulary::inverse(s.relation);
  } else {
    out.first = s.first;
    out.second = s.second;
    out.relation = s.relation;
  }
  out.synonym.fill(synonyms);
  return out;
}

Surface inverted(const Surface& s) {
  Surface out;
  out.first = s.second;
  out.second = s.first;
  out.relation = Vocabulary::inverse(s.relation);
  out.synonym = {s.synonym[2], s.synonym[3], s.synonym[0], s.synonym[1]};
  return out;
}

bool any_synonym(const Surface& s) {
  return std::any_of(s.synonym.begin(), s.synonym.end(), [](bool b) { return b; });
}

Scene surface_scene(const Surface& s) {
  Scene scene;
  scene.first = s.first;
  scene.second = s.second;
  scene.relation = s.relation;
  return scene;
}

CaptionRecord record_from(const Surface& surface, int template_id, Role role, std::uint64_t scene_id) {
  CaptionRecord r;
  r.tokens = render_tokens(surface);
  r.template_id = template_id;
  r.role = role;
  r.scene_id = scene_id;
  return r;
}

// Candidate negative of one category; nullopt when the category cannot
// change the meaning of this caption.
std::optional<Surface> perturb(const Surface& src, const Scene& scene, NegativeCategory cat,
                               std::mt19937_64& rng) {
  Surface out = src;
  switch (cat) {
    case NegativeCategory::kSwapObject:
      std::swap(out.first.noun, out.second.noun);
      std::swap(out.synonym[1], out.synonym[3]);
      break;
    case NegativeCategory::kSwapAttribute:
      std::swap(out.first.attribute, out.second.attribute);
      std::swap(out.synonym[0], out.synonym[2]);
      break;
    case NegativeCategory::kReplaceObject: {
      const bool second = std::uniform_int_distribution<int>(0, 1)(rng) == 1;
      std::vector<int> choices;
      for (int n = 0; n < kNumNouns; ++n) {
        if (n != src.first.noun && n != src.second.noun) choices.push_back(n);
      }
      const int pick = choices[std::uniform_int_distribution<std::size_t>(0, choices.size() - 1)(rng)];
      (second ? out.second : out.first).noun = pick;
      break;
    }
    case NegativeCategory::kReplaceAttribute: {
      const bool second = std::uniform_int_distribution<int>(0, 1)(rng) == 1;
      auto& obj = second ? out.second : out.first;
      int pick = std::uniform_int_distribution<int>(0, kNumAttributes - 2)(rng);
      if (pick >= obj.attribute) ++pick;
      obj.attribute = pick;
      break;
    }
    case NegativeCategory::kReplaceRelation: {
      int pick = std::uniform_int_distribution<int>(0, kNumRelations - 2)(rng);
      if (pick >= out.relation) ++pick;
      out.relation = pick;
      break;
    }
  }
  const Scene meaning = surface_scene(out);
  if (!is_valid(meaning) || same_meaning(meaning, scene)) return std::nullopt;
  return out;
}

}  // namespace

std::string_view to_string(Role role) {
  switch (role) {
    case Role::kOriginal: return "original";
    case Role::kAlternative: return "alternative";
    case Role::kParaphrase: return "paraphrase";
    case Role::kHardNegative: return "hard-negative";
  }
  return "?";
}

std::string_view to_string(NegativeCategory c) {
  switch (c) {
    case NegativeCategory::kSwapObject: return "swap-object";
    case NegativeCategory::kSwapAttribute: return "swap-attribute";
    case NegativeCategory::kReplaceObject: return "replace-object";
    case NegativeCategory::kReplaceAttribute: return "replace-attribute";
    case NegativeCategory::kReplaceRelation: return "replace-relation";
  }
  return "?";
}

Role parse_role(std::string_view text) {
  for (auto r : {Role::kOriginal, Role::kAlternative, Role::kParaphrase, Role::kHardNegative}) {
    if (to_string(r) == text) return r;
  }
  throw std::invalid_argument("unknown caption role '" + std::string(text) + "'");
}

NegativeCategory parse_category(std::string_view text) {
  for (auto c : kAllNegativeCategories) {
    if (to_string(c) == text) return c;
  }
  throw std::invalid_argument("unknown negative category '" + std::string(text) + "'");
}

TokenSeq render_tokens(const Surface& s) {
  const auto& v = Vocabulary::standard();
  return {Vocabulary::kBos,
          Vocabulary::kThe,
          v.attribute(s.first.attribute, s.synonym[0]),
          v.noun(s.first.noun, s.synonym[1]),
          Vocabulary::kIs,
          v.relation(s.relation),
          Vocabulary::kThe,
          v.attribute(s.second.attribute, s.synonym[2]),
          v.noun(s.second.noun, s.synonym[3]),
          Vocabulary::kEos};
}

std::optional<Surface> parse_surface(const TokenSeq& t) {
  const auto& v = Vocabulary::standard();
  if (t.size() != kCaptionLength) return std::nullopt;
  for (auto id : t) {
    if (id < 0 || static_cast<std::size_t>(id) >= v.size()) return std::nullopt;
  }
  if (t[0] != Vocabulary::kBos || t[1] != Vocabulary::kThe || t[4] != Vocabulary::kIs ||
      t[6] != Vocabulary::kThe || t[9] != Vocabulary::kEos) {
    return std::nullopt;
  }
  const auto a1 = v.lexeme(t[2]), n1 = v.lexeme(t[3]), r = v.lexeme(t[5]);
  const auto a2 = v.lexeme(t[7]), n2 = v.lexeme(t[8]);
  if (a1.kind != K::kAttribute || a2.kind != K::kAttribute || n1.kind != K::kNoun ||
      n2.kind != K::kNoun || r.kind != K::kRelation) {
    return std::nullopt;
  }
  Surface s;
  s.first = {n1.index, a1.index};
  s.second = {n2.index, a2.index};
  s.relation = r.index;
  s.synonym = {a1.synonym, n1.synonym, a2.synonym, n2.synonym};
  return s;
}

std::optional<Scene> parse_caption(const TokenSeq& tokens) {
  auto s = parse_surface(tokens);
  if (!s) return std::nullopt;
  return surface_scene(*s);
}

std::string surface_text(const TokenSeq& tokens) {
  const auto& v = Vocabulary::standard();
  std::string out;
  for (auto id : tokens) {
    if (id == Vocabulary::kBos || id == Vocabulary::kEos || id == Vocabulary::kPad) continue;
    if (!out.empty()) out += ' ';
    out += v.word(id);
  }
  return out;
}

std::size_t word_distance(const TokenSeq& a, const TokenSeq& b) {
  if (a.size() != b.size()) throw std::invalid_argument("word_distance: length mismatch");
  std::size_t d = 0;
  for (std::size_t i = 0; i < a.size(); ++i) d += a[i] != b[i];
  return d;
}

int template_of(const Surface& surface, const Scene& scene) {
  const int order = surface.first.noun == scene.first.noun ? 0 : 1;
  return order + (any_synonym(surface) ? 2 : 0);
}

std::vector<CaptionRecord> caption_set(const Scene& scene) {
  if (!is_valid(scene)) throw std::invalid_argument("caption_set: invalid scene");
  std::vector<CaptionRecord> out;
  for (int t : {kBaseTemplate, kInvertedTemplate, kBaseSynonym, kInvertedSynonym}) {
    out.push_back(record_from(scene_surface(scene, (t & 1) != 0, (t & 2) != 0), t, Role::kOriginal,
                              scene.id));
  }
  return out;
}

CaptionRecord paraphrase_with(const CaptionRecord& caption, const ParaphraseEdit& edit) {
  if (caption.role != Role::kOriginal && caption.role != Role::kAlternative) {
    throw std::invalid_argument("paraphrase: role must be original or alternative, got " +
                                std::string(to_string(caption.role)));
  }
  const bool identity =
      !edit.invert && std::none_of(edit.toggle.begin(), edit.toggle.end(), [](bool b) { return b; });
  if (identity) throw std::invalid_argument("paraphrase: identity edit");
  auto src = parse_surface(caption.tokens);
  if (!src) throw std::invalid_argument("paraphrase: caption is not a grammar sentence");
  Surface out = *src;
  for (std::size_t slot = 0; slot < 4; ++slot) {
    if (edit.toggle[slot]) out.synonym[slot] = !out.synonym[slot];
  }
  if (edit.invert) out = inverted(out);
  CaptionRecord r;
  r.tokens = render_tokens(out);
  r.template_id = ((caption.template_id & 1) ^ (edit.invert ? 1 : 0)) + (any_synonym(out) ? 2 : 0);
  r.role = Role::kParaphrase;
  r.scene_id = caption.scene_id;
  return r;
}

CaptionRecord make_paraphrase(const CaptionRecord& caption, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  // 2 orders x 16 synonym toggles, minus the identity.
  const int choice = std::uniform_int_distribution<int>(1, 31)(rng);
  ParaphraseEdit edit;
  edit.invert = (choice & 16) != 0;
  for (std::size_t slot = 0; slot < 4; ++slot) edit.toggle[slot] = (choice >> slot) & 1;
  return paraphrase_with(caption, edit);
}

std::vector<NegativeCategory> available_categories(const CaptionRecord& caption, const Scene& scene) {
  auto src = parse_surface(caption.tokens);
  if (!src) throw std::invalid_argument("hard negatives: caption is not a grammar sentence");
  std::vector<NegativeCategory> out;
  std::mt19937_64 rng(0);
  for (auto c : kAllNegativeCategories) {
    if (perturb(*src, scene, c, rng)) out.push_back(c);
  }
  return out;
}

std::vector<CaptionRecord> make_hard_negatives(const CaptionRecord& caption, const Scene& scene,
                                               std::size_t count, std::uint64_t seed) {
  if (count == 0) throw std::invalid_argument("make_hard_negatives: count must be >= 1");
  auto src = parse_surface(caption.tokens);
  if (!src) throw std::invalid_argument("hard negatives: caption is not a grammar sentence");
  std::mt19937_64 rng(seed);
  std::vector<NegativeCategory> order(kAllNegativeCategories.begin(), kAllNegativeCategories.end());
  std::shuffle(order.begin(), order.end(), rng);

  std::vector<CaptionRecord> out;
  for (auto c : order) {
    if (out.size() == count) break;
    auto neg = perturb(*src, scene, c, rng);
    if (!neg) continue;
    CaptionRecord r;
    r.tokens = render_tokens(*neg);
    r.template_id = caption.template_id;
    r.role = Role::kHardNegative;
    r.category = c;
    r.scene_id = caption.scene_id;
    out.push_back(std::move(r));
  }
  if (out.size() < count) {
    throw std::invalid_argument("make_hard_negatives: requested " + std::to_string(count) +
                                " negatives but only " + std::to_string(out.size()) +
                                " categories apply to '" + surface_text(caption.tokens) + "'");
  }
  return out;
}

std::vector<CaptionRecord> inject_paraphrase_noise(std::vector<CaptionRecord> records,
                                                   double fraction, std::uint64_t seed) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) {
    throw std::invalid_argument("noise fraction must lie in [0, 1]");
  }
  std::vector<std::size_t> paraphrases, pool;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (records[i].role == Role::kParaphrase) {
      paraphrases.push_back(i);
    } else if (records[i].role == Role::kOriginal || records[i].role == Role::kAlternative) {
      pool.push_back(i);
    }
  }
  if (pool.empty()) pool = paraphrases;
  const auto replace =
      static_cast<std::size_t>(std::llround(fraction * static_cast<double>(paraphrases.size())));
  if (replace == 0) return records;

  std::mt19937_64 rng(seed);
  std::shuffle(paraphrases.begin(), paraphrases.end(), rng);
  const auto originals = records;
  for (std::size_t k = 0; k < replace; ++k) {
    const std::size_t target = paraphrases[k];
    const auto meaning = parse_caption(originals[target].tokens);
    std::mt19937_64 pick_rng(derive_seed(seed, target));
    std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
    const CaptionRecord* chosen = nullptr;
    for (int attempt = 0; attempt < 10000 && !chosen; ++attempt) {
      const auto& cand = originals[pool[pick(pick_rng)]];
      auto cand_meaning = parse_caption(cand.tokens);
      if (!meaning || !cand_meaning || !same_meaning(*cand_meaning, *meaning)) chosen = &cand;
    }
    if (!chosen) throw std::invalid_argument("inject_paraphrase_noise: no unrelated caption available");
    auto& rec = records[target];
    rec.tokens = chosen->tokens;
    rec.template_id = chosen->template_id;
  }
  return records;
}

}  // namespace readlab::world
