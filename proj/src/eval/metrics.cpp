#include "readlab/eval/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>
#include <random>
#include <stdexcept>

#include "readlab/models/encoder.hpp"
#include "readlab/tensor/ops.hpp"

namespace readlab::eval {
namespace {

constexpr std::size_t kChunk = 256;

Embeddings from_tensor(const tensor::Tensor& t, Embeddings out) {
  const auto v = t.values();
  out.dim = t.shape().back();
  out.data.insert(out.data.end(), v.begin(), v.end());
  out.rows += t.shape().front();
  return out;
}

template <class T, class Fn>
Embeddings chunked(const std::vector<T>& inputs, Fn encode) {
  Embeddings out;
  for (std::size_t start = 0; start < inputs.size(); start += kChunk) {
    const std::vector<T> chunk(inputs.begin() + start, inputs.begin() + std::min(inputs.size(), start + kChunk));
    tensor::Graph g;
    out = from_tensor(encode(g, chunk), std::move(out));
  }
  return out;
}

template <class Range>
Embeddings gaussian_rows(std::uint64_t seed, std::size_t dim, std::uint64_t domain, const std::vector<Range>& inputs) {
  Embeddings out{inputs.size(), dim, {}};
  out.data.reserve(inputs.size() * dim);
  std::normal_distribution<double> gauss;
  for (const auto& in : inputs) {
    std::uint64_t h = world::derive_seed(seed, domain);
    for (auto t : in) h = world::derive_seed(h, static_cast<std::uint64_t>(t));
    std::mt19937_64 rng(h);
    for (std::size_t j = 0; j < dim; ++j) out.data.push_back(gauss(rng));
  }
  return out;
}

void require_negatives(const world::BenchmarkItem& item) {
  if (item.negatives.empty()) throw std::invalid_argument("item " + std::to_string(item.item_id) + " has no negatives");
  if (item.positives.empty()) throw std::invalid_argument("item " + std::to_string(item.item_id) + " has no positives");
}

void require_positives(const std::vector<world::BenchmarkItem>& items, std::size_t count) {
  for (const auto& item : items) {
    if (item.positives.size() != count) {
      throw std::invalid_argument("item " + std::to_string(item.item_id) + " has " +
                                  std::to_string(item.positives.size()) + " positives, expected " +
                                  std::to_string(count));
    }
  }
}

double fraction(std::size_t hits, std::size_t total) {
  return total == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(total);
}

template <class Pred>
double accuracy(const std::vector<RankingResult>& results, Pred pred) {
  std::size_t hits = 0;
  for (const auto& r : results) hits += pred(r) ? 1 : 0;
  return fraction(hits, results.size());
}

double max_of(std::span<const double> xs) { return *std::max_element(xs.begin(), xs.end()); }

std::string number(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

}  // namespace

Embeddings BundleEmbedder::images(const std::vector<world::ImageRendering>& images) {
  return chunked(images, [&](tensor::Graph& g, const auto& chunk) {
    return models::encode_image(g, bundle_.image, chunk);
  });
}

Embeddings BundleEmbedder::texts(const std::vector<world::TokenSeq>& texts) {
  return chunked(texts, [&](tensor::Graph& g, const auto& chunk) {
    return models::encode_text(g, bundle_.text, chunk);
  });
}

Embeddings RandomEmbedder::images(const std::vector<world::ImageRendering>& images) {
  std::vector<std::vector<world::TokenId>> seqs;
  for (const auto& im : images) seqs.emplace_back(im.tokens.begin(), im.tokens.end());
  return gaussian_rows(seed_, dim_, 1, seqs);
}

Embeddings RandomEmbedder::texts(const std::vector<world::TokenSeq>& texts) {
  return gaussian_rows(seed_, dim_, 2, texts);
}

double cosine(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("cosine of vectors with different sizes");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double denom = std::sqrt(na) * std::sqrt(nb);
  return denom > 0.0 ? dot / denom : 0.0;
}

bool single_correct(double pos, std::span<const double> negs) {
  if (negs.empty()) throw std::invalid_argument("ranking needs at least one negative");
  return pos > max_of(negs);
}

bool itt_correct(std::span<const double> pos, std::span<const double> negs) {
  if (negs.empty()) throw std::invalid_argument("ranking needs at least one negative");
  if (pos.empty()) throw std::invalid_argument("ranking needs at least one positive");
  return *std::min_element(pos.begin(), pos.end()) > max_of(negs);
}

bool tot_correct(double pos_pos, std::span<const double> pos_neg) {
  if (pos_neg.empty()) throw std::invalid_argument("ranking needs at least one negative");
  return pos_pos > max_of(pos_neg);
}

std::vector<RankingResult> rank_items(Embedder& embedder, const std::vector<world::BenchmarkItem>& items) {
  std::vector<world::ImageRendering> images;
  std::vector<world::TokenSeq> texts;
  for (const auto& item : items) {
    require_negatives(item);
    images.push_back(item.image);
    for (const auto& p : item.positives) texts.push_back(p.tokens);
    for (const auto& n : item.negatives) texts.push_back(n.tokens);
  }
  const Embeddings img = embedder.images(images);
  const Embeddings txt = embedder.texts(texts);

  std::vector<RankingResult> out;
  out.reserve(items.size());
  std::size_t row = 0;
  for (std::size_t i = 0; i < items.size(); ++i) {
    const auto& item = items[i];
    const std::size_t first_pos = row;
    const std::size_t first_neg = row + item.positives.size();
    row = first_neg + item.negatives.size();

    RankingResult r;
    r.item_id = item.item_id;
    r.category = item.category;
    for (std::size_t p = 0; p < item.positives.size(); ++p) r.pos_sims.push_back(cosine(img.row(i), txt.row(first_pos + p)));
    for (std::size_t n = 0; n < item.negatives.size(); ++n) r.neg_sims.push_back(cosine(img.row(i), txt.row(first_neg + n)));
    r.correct_single = single_correct(r.pos_sims.front(), r.neg_sims);
    r.correct_itt = itt_correct(r.pos_sims, r.neg_sims);
    if (item.positives.size() == 2) {
      r.pos_pos_sim = cosine(txt.row(first_pos), txt.row(first_pos + 1));
      for (std::size_t p = 0; p < 2; ++p) {
        for (std::size_t n = 0; n < item.negatives.size(); ++n) {
          r.pos_neg_sims.push_back(cosine(txt.row(first_pos + p), txt.row(first_neg + n)));
        }
      }
      r.correct_tot = tot_correct(*r.pos_pos_sim, r.pos_neg_sims);
    }
    out.push_back(std::move(r));
  }
  return out;
}

double single_positive_accuracy(Embedder& embedder, const std::vector<world::BenchmarkItem>& items) {
  require_positives(items, 1);
  return accuracy(rank_items(embedder, items), [](const RankingResult& r) { return r.correct_single; });
}

double itt_accuracy(Embedder& embedder, const std::vector<world::BenchmarkItem>& items) {
  require_positives(items, 2);
  return accuracy(rank_items(embedder, items), [](const RankingResult& r) { return r.correct_itt; });
}

double tot_accuracy(Embedder& embedder, const std::vector<world::BenchmarkItem>& items) {
  require_positives(items, 2);
  return accuracy(rank_items(embedder, items), [](const RankingResult& r) { return *r.correct_tot; });
}

RetrievalAccuracy retrieval_accuracy(Embedder& embedder, const std::vector<world::ImageRendering>& images,
                                     const std::vector<world::TokenSeq>& captions) {
  if (images.size() != captions.size()) throw std::invalid_argument("retrieval needs one caption per image");
  const std::size_t n = images.size();
  if (n == 0) return {};
  const Embeddings img = embedder.images(images);
  const Embeddings txt = embedder.texts(captions);
  std::vector<double> sim(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) sim[i * n + j] = cosine(img.row(i), txt.row(j));
  }
  std::size_t i2t = 0, t2i = 0;
  for (std::size_t i = 0; i < n; ++i) {
    bool row_ok = true, col_ok = true;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      row_ok = row_ok && sim[i * n + i] > sim[i * n + j];
      col_ok = col_ok && sim[i * n + i] > sim[j * n + i];
    }
    i2t += row_ok ? 1 : 0;
    t2i += col_ok ? 1 : 0;
  }
  return {fraction(i2t, n), fraction(t2i, n)};
}

SimilarityTrace track_pair_similarity(Embedder& embedder, const std::vector<world::BenchmarkItem>& items,
                                      std::size_t epoch) {
  require_positives(items, 2);
  const auto results = rank_items(embedder, items);
  SimilarityTrace trace;
  trace.epoch = epoch;
  if (results.empty()) return trace;
  std::vector<double> pp, p1n, p2n;
  for (const auto& r : results) {
    pp.push_back(*r.pos_pos_sim);
    const std::size_t m = r.neg_sims.size();
    p1n.insert(p1n.end(), r.pos_neg_sims.begin(), r.pos_neg_sims.begin() + m);
    p2n.insert(p2n.end(), r.pos_neg_sims.begin() + m, r.pos_neg_sims.end());
  }
  auto mean = [](const std::vector<double>& xs) { return tensor::canonical_sum(xs) / static_cast<double>(xs.size()); };
  trace.pos_pos = mean(pp);
  trace.pos1_neg = mean(p1n);
  trace.pos2_neg = mean(p2n);
  return trace;
}

std::vector<SummaryRow> summarize(const std::vector<RankingResult>& results, std::size_t epoch,
                                  const std::string& suite) {
  std::map<std::string, std::vector<const RankingResult*>> groups;
  for (const auto& r : results) groups[r.category].push_back(&r);
  auto row_for = [&](const std::string& category, const std::vector<const RankingResult*>& rs) {
    SummaryRow row;
    row.epoch = epoch;
    row.suite = suite;
    row.category = category;
    row.items = rs.size();
    std::size_t single = 0, itt = 0, tot = 0;
    bool has_tot = !rs.empty();
    for (const auto* r : rs) {
      single += r->correct_single ? 1 : 0;
      itt += r->correct_itt ? 1 : 0;
      has_tot = has_tot && r->correct_tot.has_value();
      if (r->correct_tot) tot += *r->correct_tot ? 1 : 0;
    }
    row.acc_single = fraction(single, rs.size());
    if (has_tot) {
      row.acc_itt = fraction(itt, rs.size());
      row.acc_tot = fraction(tot, rs.size());
    }
    return row;
  };
  std::vector<SummaryRow> rows;
  std::vector<const RankingResult*> all;
  for (const auto& [category, rs] : groups) rows.push_back(row_for(category, rs));
  for (const auto& r : results) all.push_back(&r);
  rows.push_back(row_for("all", all));
  return rows;
}

Evaluation evaluate(Embedder& embedder, const Suites& suites, std::size_t epoch) {
  Evaluation ev;
  auto run = [&](const std::vector<world::BenchmarkItem>& items, world::SuiteKind kind) -> const SummaryRow* {
    if (items.empty()) return nullptr;
    const std::string name(world::to_string(kind));
    auto results = rank_items(embedder, items);
    auto rows = summarize(results, epoch, name);
    ev.summary.insert(ev.summary.end(), rows.begin(), rows.end());
    ev.rankings.emplace_back(name, std::move(results));
    return &ev.summary.back();
  };
  if (const auto* all = run(suites.swap, world::SuiteKind::kSwap)) ev.scores.acc_swap = all->acc_single;
  if (const auto* all = run(suites.replace, world::SuiteKind::kReplace)) ev.scores.acc_replace = all->acc_single;
  if (const auto* all = run(suites.paraphrase, world::SuiteKind::kParaphrase)) {
    ev.scores.acc_itt = all->acc_itt.value_or(0.0);
    ev.scores.acc_tot = all->acc_tot.value_or(0.0);
    ev.scores.trace = track_pair_similarity(embedder, suites.paraphrase, epoch);
  }
  ev.scores.trace.epoch = epoch;
  return ev;
}

void write_rankings(const std::filesystem::path& path, const std::vector<RankingResult>& results) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& r : results) {
    nlohmann::ordered_json j;
    j["item_id"] = r.item_id;
    j["category"] = r.category;
    j["pos_sims"] = r.pos_sims;
    j["neg_sims"] = r.neg_sims;
    j["correct_single"] = r.correct_single;
    j["correct_itt"] = r.correct_itt;
    j["correct_tot"] = r.correct_tot ? nlohmann::ordered_json(*r.correct_tot) : nlohmann::ordered_json(nullptr);
    j["pos_pos_sim"] = r.pos_pos_sim ? nlohmann::ordered_json(*r.pos_pos_sim) : nlohmann::ordered_json(nullptr);
    j["pos_neg_sims"] = r.pos_neg_sims;
    out << j.dump() << '\n';
  }
}

std::vector<RankingResult> read_rankings(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::vector<RankingResult> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    RankingResult r;
    r.item_id = j.at("item_id").get<std::uint64_t>();
    r.category = j.at("category").get<std::string>();
    r.pos_sims = j.at("pos_sims").get<std::vector<double>>();
    r.neg_sims = j.at("neg_sims").get<std::vector<double>>();
    r.correct_single = j.at("correct_single").get<bool>();
    r.correct_itt = j.at("correct_itt").get<bool>();
    if (!j.at("correct_tot").is_null()) r.correct_tot = j.at("correct_tot").get<bool>();
    if (!j.at("pos_pos_sim").is_null()) r.pos_pos_sim = j.at("pos_pos_sim").get<double>();
    r.pos_neg_sims = j.at("pos_neg_sims").get<std::vector<double>>();
    out.push_back(std::move(r));
  }
  return out;
}

void write_summary_csv(const std::filesystem::path& path, const std::vector<SummaryRow>& rows) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "epoch,suite,category,items,acc_single,acc_itt,acc_tot\n";
  for (const auto& r : rows) {
    out << r.epoch << ',' << r.suite << ',' << r.category << ',' << r.items << ',' << number(r.acc_single) << ','
        << (r.acc_itt ? number(*r.acc_itt) : "") << ',' << (r.acc_tot ? number(*r.acc_tot) : "") << '\n';
  }
}

}  // namespace readlab::eval
