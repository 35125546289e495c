#include "readlab/world/scene.hpp"

#include <random>
#include <set>
#include <stdexcept>

namespace readlab::world {

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
  // splitmix64 over a combination of both inputs
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

SceneKey semantic_key(const Scene& s) {
  if (s.first.noun < s.second.noun) return {s.first, s.second, s.relation};
  return {s.second, s.first, Vocabulary::inverse(s.relation)};
}

bool same_meaning(const Scene& a, const Scene& b) { return semantic_key(a) == semantic_key(b); }

bool is_valid(const Scene& s) {
  auto in = [](int v, int n) { return v >= 0 && v < n; };
  return in(s.first.noun, kNumNouns) && in(s.second.noun, kNumNouns) &&
         in(s.first.attribute, kNumAttributes) && in(s.second.attribute, kNumAttributes) &&
         in(s.relation, kNumRelations) && s.first.noun != s.second.noun;
}

namespace {

Scene draw_scene(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> noun(0, kNumNouns - 1);
  std::uniform_int_distribution<int> other(0, kNumNouns - 2);
  std::uniform_int_distribution<int> attr(0, kNumAttributes - 1);
  std::uniform_int_distribution<int> rel(0, kNumRelations - 1);
  Scene s;
  s.first.noun = noun(rng);
  s.first.attribute = attr(rng);
  s.relation = rel(rng);
  const int n2 = other(rng);
  s.second.noun = n2 >= s.first.noun ? n2 + 1 : n2;
  s.second.attribute = attr(rng);
  return s;
}

}  // namespace

std::vector<Scene> generate_scenes(std::size_t count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<Scene> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    auto s = draw_scene(rng);
    s.id = i;
    out.push_back(s);
  }
  return out;
}

std::vector<Scene> generate_disjoint_scenes(std::size_t count, std::uint64_t seed,
                                            const std::vector<Scene>& exclude,
                                            std::uint64_t first_id) {
  std::set<SceneKey> taken;
  for (const auto& s : exclude) taken.insert(semantic_key(s));
  std::mt19937_64 rng(seed);
  std::vector<Scene> out;
  out.reserve(count);
  // Scene space holds tens of thousands of meanings; the cap only guards
  // against requests that cannot be met.
  const std::size_t max_draws = 1000 * (count + 1);
  for (std::size_t draws = 0; out.size() < count; ++draws) {
    if (draws >= max_draws) throw std::invalid_argument("not enough disjoint scenes available");
    auto s = draw_scene(rng);
    if (!taken.insert(semantic_key(s)).second) continue;
    s.id = first_id + out.size();
    out.push_back(s);
  }
  return out;
}

ImageRendering render_image(const Scene& s, int jitter) {
  const auto& v = Vocabulary::standard();
  if (!is_valid(s)) throw std::invalid_argument("render_image: invalid scene");
  ImageRendering r;
  r.tokens = {v.visual_noun(s.first.noun),       v.visual_attribute(s.first.attribute),
              v.visual_relation(s.relation),     v.visual_noun(s.second.noun),
              v.visual_attribute(s.second.attribute), v.visual_jitter(jitter)};
  return r;
}

}  // namespace readlab::world
