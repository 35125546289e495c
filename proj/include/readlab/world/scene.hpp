#pragma once

#include <array>
#include <cstdint>
#include <tuple>
#include <vector>

#include "readlab/world/vocabulary.hpp"

namespace readlab::world {

struct ObjectSpec {
  int noun = 0;
  int attribute = 0;
  friend bool operator==(const ObjectSpec&, const ObjectSpec&) = default;
};

/// Two attributed objects and the relation of the first to the second.
struct Scene {
  ObjectSpec first;
  ObjectSpec second;
  int relation = 0;
  std::uint64_t id = 0;
};

/// Order-free description: "a R b" and "b inverse(R) a" share one key.
struct SceneKey {
  ObjectSpec first;
  ObjectSpec second;
  int relation = 0;
  friend bool operator==(const SceneKey&, const SceneKey&) = default;
  friend auto operator<=>(const SceneKey& a, const SceneKey& b) {
    return std::tie(a.first.noun, a.first.attribute, a.relation, a.second.noun, a.second.attribute) <=>
           std::tie(b.first.noun, b.first.attribute, b.relation, b.second.noun, b.second.attribute);
  }
};

SceneKey semantic_key(const Scene& scene);
/// Same meaning, ignoring ids and which object is mentioned first.
bool same_meaning(const Scene& a, const Scene& b);
/// Nouns distinct and every index in range.
bool is_valid(const Scene& scene);

/// `count` scenes drawn uniformly over valid tuples; duplicates allowed.
std::vector<Scene> generate_scenes(std::size_t count, std::uint64_t seed);

/// Scenes whose meaning does not occur in `exclude` (nor twice in the result).
std::vector<Scene> generate_disjoint_scenes(std::size_t count, std::uint64_t seed,
                                            const std::vector<Scene>& exclude,
                                            std::uint64_t first_id = 0);

/// Image stand-in: [noun1, attr1, relation, noun2, attr2, jitter] over the
/// visual vocabulary.
struct ImageRendering {
  std::array<TokenId, 6> tokens{};
  friend bool operator==(const ImageRendering&, const ImageRendering&) = default;
};

ImageRendering render_image(const Scene& scene, int jitter);

/// Stateless stream splitting: a seed for child `index` of `seed`.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index);

}  // namespace readlab::world
