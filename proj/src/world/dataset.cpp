#include "readlab/world/dataset.hpp"

#include <fstream>
#include <map>
#include <nlohmann/json.hpp>
#include <stdexcept>

namespace readlab::world {
namespace {

using Json = nlohmann::ordered_json;

Json caption_json(const CaptionRecord& r) {
  Json j;
  j["scene_id"] = r.scene_id;
  j["role"] = to_string(r.role);
  j["category"] = r.category ? Json(to_string(*r.category)) : Json(nullptr);
  j["token_ids"] = r.tokens;
  j["surface_text"] = surface_text(r.tokens);
  j["template_id"] = r.template_id;
  return j;
}

CaptionRecord caption_from(const Json& j) {
  CaptionRecord r;
  r.scene_id = j.at("scene_id").get<std::uint64_t>();
  r.role = parse_role(j.at("role").get<std::string>());
  if (!j.at("category").is_null()) r.category = parse_category(j.at("category").get<std::string>());
  r.tokens = j.at("token_ids").get<TokenSeq>();
  r.template_id = j.at("template_id").get<int>();
  return r;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

template <class Fn>
void for_each_line(const std::filesystem::path& path, Fn fn) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      fn(Json::parse(line));
    } catch (const nlohmann::json::exception& e) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

std::map<std::uint64_t, Scene> index_scenes(const std::vector<Scene>& scenes) {
  std::map<std::uint64_t, Scene> out;
  for (const auto& s : scenes) out.emplace(s.id, s);
  return out;
}

const Scene& lookup(const std::map<std::uint64_t, Scene>& index, std::uint64_t id) {
  auto it = index.find(id);
  if (it == index.end()) throw std::runtime_error("unknown scene_id " + std::to_string(id));
  return it->second;
}

}  // namespace

std::vector<TrainingScene> build_training_set(const std::vector<Scene>& scenes,
                                              const DatasetOptions& options, std::uint64_t seed) {
  std::vector<TrainingScene> out;
  out.reserve(scenes.size());
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    const std::uint64_t scene_seed = derive_seed(seed, i);
    TrainingScene ts;
    ts.scene = scenes[i];
    ts.captions = caption_set(ts.scene);
    for (std::size_t c = 0; c < ts.captions.size(); ++c) {
      const std::uint64_t caption_seed = derive_seed(scene_seed, c);
      std::vector<CaptionRecord> paras;
      for (std::size_t p = 0; p < options.paraphrases; ++p) {
        paras.push_back(make_paraphrase(ts.captions[c], derive_seed(caption_seed, 100 + p)));
      }
      ts.paraphrases.push_back(std::move(paras));
      ts.negatives.push_back(make_hard_negatives(ts.captions[c], ts.scene, options.hard_negatives,
                                                 derive_seed(caption_seed, 1)));
    }
    out.push_back(std::move(ts));
  }
  if (options.noise_fraction > 0.0) {
    // Noise acts on the flattened paraphrase records; originals form the pool
    // of unrelated captions.
    std::vector<CaptionRecord> flat;
    for (const auto& ts : out) {
      for (const auto& c : ts.captions) flat.push_back(c);
      for (const auto& ps : ts.paraphrases) flat.insert(flat.end(), ps.begin(), ps.end());
    }
    flat = inject_paraphrase_noise(std::move(flat), options.noise_fraction, derive_seed(seed, ~0ULL));
    std::size_t k = 0;
    for (auto& ts : out) {
      k += ts.captions.size();
      for (auto& ps : ts.paraphrases) {
        for (auto& p : ps) p = flat[k++];
      }
    }
  }
  return out;
}

void write_scenes(const std::filesystem::path& path, const std::vector<Scene>& scenes) {
  auto out = open_out(path);
  for (const auto& s : scenes) {
    Json j;
    j["scene_id"] = s.id;
    j["noun1"] = s.first.noun;
    j["attr1"] = s.first.attribute;
    j["relation"] = s.relation;
    j["noun2"] = s.second.noun;
    j["attr2"] = s.second.attribute;
    out << j.dump() << '\n';
  }
}

std::vector<Scene> read_scenes(const std::filesystem::path& path) {
  std::vector<Scene> out;
  for_each_line(path, [&](const Json& j) {
    Scene s;
    s.id = j.at("scene_id").get<std::uint64_t>();
    s.first = {j.at("noun1").get<int>(), j.at("attr1").get<int>()};
    s.relation = j.at("relation").get<int>();
    s.second = {j.at("noun2").get<int>(), j.at("attr2").get<int>()};
    if (!is_valid(s)) throw std::runtime_error("invalid scene " + std::to_string(s.id) + " in " + path.string());
    out.push_back(s);
  });
  return out;
}

void write_training_set(const std::filesystem::path& path, const std::vector<TrainingScene>& set) {
  auto out = open_out(path);
  for (const auto& ts : set) {
    for (std::size_t c = 0; c < ts.captions.size(); ++c) {
      auto emit = [&](const CaptionRecord& r, std::size_t variant) {
        auto j = caption_json(r);
        j["caption_index"] = c;
        j["variant"] = variant;
        out << j.dump() << '\n';
      };
      emit(ts.captions[c], 0);
      for (std::size_t p = 0; p < ts.paraphrases[c].size(); ++p) emit(ts.paraphrases[c][p], p);
      for (std::size_t n = 0; n < ts.negatives[c].size(); ++n) emit(ts.negatives[c][n], n);
    }
  }
}

std::vector<TrainingScene> read_training_set(const std::filesystem::path& path,
                                             const std::vector<Scene>& scenes) {
  const auto index = index_scenes(scenes);
  std::vector<TrainingScene> out;
  std::map<std::uint64_t, std::size_t> position;
  for_each_line(path, [&](const Json& j) {
    auto r = caption_from(j);
    auto [it, inserted] = position.emplace(r.scene_id, out.size());
    if (inserted) {
      out.emplace_back();
      out.back().scene = lookup(index, r.scene_id);
    }
    auto& ts = out[it->second];
    const auto c = j.at("caption_index").get<std::size_t>();
    if (ts.captions.size() <= c) {
      ts.captions.resize(c + 1);
      ts.paraphrases.resize(c + 1);
      ts.negatives.resize(c + 1);
    }
    switch (r.role) {
      case Role::kOriginal:
      case Role::kAlternative: ts.captions[c] = std::move(r); break;
      case Role::kParaphrase: ts.paraphrases[c].push_back(std::move(r)); break;
      case Role::kHardNegative: ts.negatives[c].push_back(std::move(r)); break;
    }
  });
  return out;
}

void write_benchmark(const std::filesystem::path& path, const std::vector<BenchmarkItem>& items) {
  auto out = open_out(path);
  for (const auto& item : items) {
    auto emit = [&](const CaptionRecord& r) {
      auto j = caption_json(r);
      j["item_id"] = item.item_id;
      j["item_category"] = item.category;
      j["jitter"] = item.jitter;
      j["image_tokens"] = item.image.tokens;
      out << j.dump() << '\n';
    };
    for (const auto& p : item.positives) emit(p);
    for (const auto& n : item.negatives) emit(n);
  }
}

std::vector<BenchmarkItem> read_benchmark(const std::filesystem::path& path,
                                          const std::vector<Scene>& scenes) {
  const auto index = index_scenes(scenes);
  std::vector<BenchmarkItem> out;
  std::map<std::uint64_t, std::size_t> position;
  for_each_line(path, [&](const Json& j) {
    auto r = caption_from(j);
    const auto item_id = j.at("item_id").get<std::uint64_t>();
    auto [it, inserted] = position.emplace(item_id, out.size());
    if (inserted) {
      BenchmarkItem item;
      item.item_id = item_id;
      item.scene = lookup(index, r.scene_id);
      item.jitter = j.at("jitter").get<int>();
      item.image = render_image(item.scene, item.jitter);
      item.category = j.at("item_category").get<std::string>();
      if (j.at("image_tokens").get<std::vector<TokenId>>() !=
          std::vector<TokenId>(item.image.tokens.begin(), item.image.tokens.end())) {
        throw std::runtime_error("image tokens of item " + std::to_string(item_id) +
                                 " do not match its scene");
      }
      out.push_back(std::move(item));
    }
    auto& item = out[it->second];
    if (r.role == Role::kHardNegative) {
      item.negatives.push_back(std::move(r));
    } else {
      item.positives.push_back(std::move(r));
    }
  });
  return out;
}

}  // namespace readlab::world
