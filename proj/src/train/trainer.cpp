#include "readlab/train/trainer.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <nlohmann/json.hpp>
#include <numeric>
#include <sstream>

#include "readlab/models/encoder.hpp"
#include "readlab/tensor/ops.hpp"

namespace readlab::train {
namespace {

using tensor::Parameter;
using tensor::Tensor;

std::string sha256_hex(const std::string& text) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_Digest(text.data(), text.size(), digest, &len, EVP_sha256(), nullptr);
  std::string out;
  char buf[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(buf, sizeof buf, "%02x", digest[i]);
    out += buf;
  }
  return out;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::size_t parse_count(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  unsigned long long x = 0;
  try {
    if (!v.empty() && v[0] == '-') throw std::invalid_argument("negative");
    x = std::stoull(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != v.size()) throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  return static_cast<std::size_t>(x);
}

double parse_real(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  double x = 0.0;
  try {
    x = std::stod(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != v.size()) throw ConfigError(key + ": expected a number, got '" + v + "'");
  return x;
}

bool parse_flag(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

// Shortest decimal form that reads back to the same double.
std::string real_text(double x) {
  char buf[32];
  for (int precision = 1; precision <= 17; ++precision) {
    std::snprintf(buf, sizeof buf, "%.*g", precision, x);
    if (std::strtod(buf, nullptr) == x) break;
  }
  return buf;
}

std::size_t uniform_index(std::size_t n, std::mt19937_64& rng) {
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

bool finite(const std::optional<double>& x) { return !x || std::isfinite(*x); }

std::string fmt_opt(const std::optional<double>& x) { return x ? real_text(*x) : "skipped"; }

double mean_of(const std::vector<double>& xs) {
  return xs.empty() ? 0.0 : tensor::canonical_sum(xs) / static_cast<double>(xs.size());
}

}  // namespace

std::string to_string(ReconTarget t) { return t == ReconTarget::kAlternative ? "alternative" : "original"; }
std::string to_string(AlignSource s) {
  return s == AlignSource::kRuleParaphrase ? "rule-paraphrase" : "caption-set-union";
}

void TrainConfig::validate() const {
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (batch_size < 2 && (m_negatives > 0 || beta > 0.0)) {
    throw ConfigError("batch_size must be at least 2 with hard negatives or alignment");
  }
  if (k_targets == 0) throw ConfigError("k_targets must be positive");
  if (recon_target == ReconTarget::kAlternative && k_targets > 3) {
    throw ConfigError("k_targets must be at most 3 alternatives per caption");
  }
  if (num_paraphrases == 0) throw ConfigError("num_paraphrases must be positive");
  if (m_negatives > world::kAllNegativeCategories.size()) throw ConfigError("m_negatives must be at most 5");
  if (epochs == 0) throw ConfigError("epochs must be positive");
  if (scenes < batch_size) throw ConfigError("scenes must be at least batch_size");
  if (!(alpha >= 0.0) || !(beta >= 0.0)) throw ConfigError("loss weights must be non-negative");
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("lr must be finite and non-negative");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be non-negative");
  if (!(noise_fraction >= 0.0 && noise_fraction <= 1.0)) throw ConfigError("noise_fraction must lie in [0, 1]");
  if (!(clip_norm > 0.0)) throw ConfigError("clip_norm must be positive");
}

void TrainConfig::set(const std::string& key, const std::string& raw) {
  const std::string v = trim(raw);
  if (key == "batch_size") batch_size = parse_count(key, v);
  else if (key == "m_negatives") m_negatives = parse_count(key, v);
  else if (key == "k_targets") k_targets = parse_count(key, v);
  else if (key == "alpha") alpha = parse_real(key, v);
  else if (key == "beta") beta = parse_real(key, v);
  else if (key == "lr") lr = parse_real(key, v);
  else if (key == "warmup") warmup = parse_count(key, v);
  else if (key == "epochs") epochs = parse_count(key, v);
  else if (key == "weight_decay") weight_decay = parse_real(key, v);
  else if (key == "seed") seed = parse_count(key, v);
  else if (key == "recon_target") {
    if (v == "alternative") recon_target = ReconTarget::kAlternative;
    else if (v == "original") recon_target = ReconTarget::kOriginal;
    else throw ConfigError("recon_target: expected alternative or original, got '" + v + "'");
  } else if (key == "align_source") {
    if (v == "rule-paraphrase") align_source = AlignSource::kRuleParaphrase;
    else if (v == "caption-set-union") align_source = AlignSource::kCaptionSetUnion;
    else throw ConfigError("align_source: expected rule-paraphrase or caption-set-union, got '" + v + "'");
  } else if (key == "num_paraphrases") num_paraphrases = parse_count(key, v);
  else if (key == "noise_fraction") noise_fraction = parse_real(key, v);
  else if (key == "shared_temperature") shared_temperature = parse_flag(key, v);
  else if (key == "symmetric_negatives") symmetric_negatives = parse_flag(key, v);
  else if (key == "clip_norm") clip_norm = parse_real(key, v);
  else if (key == "scenes") scenes = parse_count(key, v);
  else if (key == "keep_checkpoints") keep_checkpoints = parse_flag(key, v);
  else throw ConfigError("unknown config key '" + key + "'");
}

std::string TrainConfig::to_text() const {
  std::ostringstream out;
  out << "batch_size=" << batch_size << '\n'
      << "m_negatives=" << m_negatives << '\n'
      << "k_targets=" << k_targets << '\n'
      << "alpha=" << real_text(alpha) << '\n'
      << "beta=" << real_text(beta) << '\n'
      << "lr=" << real_text(lr) << '\n'
      << "warmup=" << warmup << '\n'
      << "epochs=" << epochs << '\n'
      << "weight_decay=" << real_text(weight_decay) << '\n'
      << "seed=" << seed << '\n'
      << "recon_target=" << to_string(recon_target) << '\n'
      << "align_source=" << to_string(align_source) << '\n'
      << "num_paraphrases=" << num_paraphrases << '\n'
      << "noise_fraction=" << real_text(noise_fraction) << '\n'
      << "shared_temperature=" << (shared_temperature ? "true" : "false") << '\n'
      << "symmetric_negatives=" << (symmetric_negatives ? "true" : "false") << '\n'
      << "clip_norm=" << real_text(clip_norm) << '\n'
      << "scenes=" << scenes << '\n'
      << "keep_checkpoints=" << (keep_checkpoints ? "true" : "false") << '\n';
  return out.str();
}

TrainConfig TrainConfig::from_text(const std::string& text, TrainConfig base) {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    base.set(trim(t.substr(0, eq)), t.substr(eq + 1));
  }
  return base;
}

TrainConfig TrainConfig::from_text(const std::string& text) { return from_text(text, TrainConfig{}); }

std::string TrainConfig::hash() const { return sha256_hex(to_text()); }

world::DatasetOptions dataset_options(const TrainConfig& config) {
  world::DatasetOptions o;
  o.hard_negatives = config.m_negatives;
  o.paraphrases = config.num_paraphrases;
  o.noise_fraction = config.noise_fraction;
  return o;
}

std::size_t steps_per_epoch(const TrainConfig& config) { return config.scenes / config.batch_size; }
std::size_t total_steps(const TrainConfig& config) { return config.epochs * steps_per_epoch(config); }

double lr_schedule(std::uint64_t step, const TrainConfig& config) {
  return tensor::warmup_cosine_lr(step, config.warmup, total_steps(config), config.lr);
}

BatchSample assemble_batch(const std::vector<world::TrainingScene>& dataset, const std::vector<std::size_t>& scenes,
                           const TrainConfig& config, std::mt19937_64& rng) {
  BatchSample b;
  for (std::size_t s : scenes) {
    if (s >= dataset.size()) throw std::out_of_range("scene index " + std::to_string(s) + " out of range");
    const auto& ts = dataset[s];
    const std::size_t c = uniform_index(ts.captions.size(), rng);
    const auto& caption = ts.captions[c].tokens;
    b.scene_index.push_back(s);
    b.images.push_back(world::render_image(ts.scene, static_cast<int>(uniform_index(world::kNumJitter, rng))));
    b.captions.push_back(caption);

    const auto& negs = ts.negatives[c];
    if (negs.size() < config.m_negatives) {
      throw std::invalid_argument("scene " + std::to_string(ts.scene.id) + " has " + std::to_string(negs.size()) +
                                  " hard negatives per caption, config needs " +
                                  std::to_string(config.m_negatives));
    }
    for (std::size_t m = 0; m < config.m_negatives; ++m) b.negatives.push_back(negs[m].tokens);

    std::vector<world::TokenSeq> targets;
    if (config.recon_target == ReconTarget::kOriginal) {
      targets.assign(config.k_targets, caption);
    } else {
      std::vector<std::size_t> pool;
      for (std::size_t j = 0; j < ts.captions.size(); ++j) {
        if (ts.captions[j].tokens != caption) pool.push_back(j);
      }
      if (pool.size() < config.k_targets) throw std::invalid_argument("too few alternative captions");
      for (std::size_t k = 0; k < config.k_targets; ++k) {
        std::swap(pool[k], pool[k + uniform_index(pool.size() - k, rng)]);
        targets.push_back(ts.captions[pool[k]].tokens);
      }
    }
    b.targets.push_back(std::move(targets));

    if (config.align_source == AlignSource::kRuleParaphrase) {
      const auto& paras = ts.paraphrases[c];
      if (paras.empty()) throw std::invalid_argument("caption without paraphrases");
      b.paraphrases.push_back(paras[uniform_index(paras.size(), rng)].tokens);
    } else {
      std::vector<const world::TokenSeq*> pool;
      for (const auto& r : ts.captions) pool.push_back(&r.tokens);
      for (const auto& ps : ts.paraphrases) {
        for (const auto& p : ps) pool.push_back(&p.tokens);
      }
      b.paraphrases.push_back(*pool[uniform_index(pool.size(), rng)]);
    }
  }
  return b;
}

BatchSample sample_batch(const std::vector<world::TrainingScene>& dataset, const TrainConfig& config,
                         std::mt19937_64& rng) {
  if (dataset.size() < config.batch_size) {
    throw std::invalid_argument("dataset of " + std::to_string(dataset.size()) + " scenes is smaller than a batch");
  }
  std::vector<std::size_t> all(dataset.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  for (std::size_t i = 0; i < config.batch_size; ++i) std::swap(all[i], all[i + uniform_index(all.size() - i, rng)]);
  all.resize(config.batch_size);
  return assemble_batch(dataset, all, config, rng);
}

LossTensors batch_loss(tensor::Graph& g, models::ModelBundle& bundle, const BatchSample& batch,
                       const TrainConfig& config, Parameter* align_log_scale, bool all_components) {
  const Tensor u = models::encode_image(g, bundle.image, batch.images);
  const Tensor v = models::encode_text(g, bundle.text, batch.captions);
  std::optional<Tensor> negs;
  if (!batch.negatives.empty()) negs = models::encode_text(g, bundle.text, batch.negatives);
  const Tensor scale = models::logit_scale(g, bundle.log_scale);

  LossTensors out;
  auto& c = out.components;
  c.contrastive = losses::hard_negative_contrastive_loss(u, v, negs, scale, config.symmetric_negatives);
  if (config.alpha > 0.0 || all_components) {
    const Tensor h = models::project(g, bundle.projector, v);
    losses::DecoderScorer scorer(bundle.decoder);
    c.reconstruction = losses::token_reconstruction_loss(h, batch.targets, scorer);
  }
  if (config.beta > 0.0 || all_components) {
    const Tensor vp = models::encode_text(g, bundle.text, batch.paraphrases);
    const Tensor align_scale = align_log_scale ? models::logit_scale(g, *align_log_scale) : scale;
    c.alignment = losses::sentence_alignment_loss(v, vp, align_scale);
  }
  out.total = losses::read_loss(c, {config.alpha, config.beta});
  return out;
}

struct Trainer::State {
  TrainConfig config;
  models::ModelBundle bundle;
  std::optional<Parameter> align;
  std::vector<Parameter*> params;
  std::unique_ptr<tensor::AdamW> opt;
  std::mt19937_64 rng;
  std::size_t epoch = 0;
};

Trainer::Trainer(TrainConfig config, models::ModelBundle bundle) : state_(std::make_unique<State>()) {
  config.validate();
  if (!bundle.decoder.frozen) throw std::invalid_argument("stage-1 training needs a frozen decoder");
  auto& s = *state_;
  s.config = config;
  s.bundle = std::move(bundle);
  if (!config.shared_temperature) {
    s.align = Parameter("align.log_scale", {1});
    s.align->values()[0] = s.bundle.log_scale.values()[0];
  }
  s.params = s.bundle.trainable();
  if (s.align) s.params.push_back(&*s.align);
  std::vector<bool> decay;
  for (auto* p : s.params) decay.push_back(p != &s.bundle.log_scale && (!s.align || p != &*s.align));
  s.opt = std::make_unique<tensor::AdamW>(s.params, decay, tensor::AdamW::Options{.weight_decay = config.weight_decay});
  s.rng.seed(world::derive_seed(config.seed, 0x747261696eULL));
}

Trainer::~Trainer() = default;

StepReport Trainer::step(const BatchSample& batch) { return step(batch, lr_schedule(state_->opt->steps(), state_->config)); }

StepReport Trainer::step(const BatchSample& batch, double lr) {
  auto& s = *state_;
  for (auto* p : s.params) p->zero_grad();
  tensor::Graph g;
  std::optional<LossTensors> built;
  try {
    built = batch_loss(g, s.bundle, batch, s.config, s.align ? &*s.align : nullptr);
  } catch (const tensor::DomainError& e) {
    // Non-finite parameters surface first as a degenerate embedding.
    throw NumericError(std::string(e.what()) + " at step " + std::to_string(s.opt->steps()));
  }
  const auto& loss = *built;

  StepReport r;
  r.total = loss.total.item();
  r.contrastive = loss.components.contrastive.item();
  if (loss.components.reconstruction) r.reconstruction = loss.components.reconstruction->item();
  if (loss.components.alignment) r.alignment = loss.components.alignment->item();
  r.tau = models::temperature(s.bundle.log_scale);
  r.lr = lr;
  auto diagnose = [&](const std::string& what) {
    return NumericError(what + " at step " + std::to_string(s.opt->steps()) + ": total=" + real_text(r.total) +
                        " contrastive=" + real_text(r.contrastive) + " reconstruction=" + fmt_opt(r.reconstruction) +
                        " alignment=" + fmt_opt(r.alignment) + " tau=" + real_text(r.tau));
  };
  if (!std::isfinite(r.total) || !std::isfinite(r.contrastive) || !finite(r.reconstruction) || !finite(r.alignment)) {
    throw diagnose("non-finite loss");
  }
  g.backward(loss.total);
  r.grad_norm = tensor::clip_grad_norm(s.params, s.config.clip_norm);
  if (!std::isfinite(r.grad_norm)) throw diagnose("non-finite gradient");
  s.opt->step(lr);
  models::clamp_log_scale(s.bundle.log_scale);
  if (s.align) models::clamp_log_scale(*s.align);
  return r;
}

models::ModelBundle& Trainer::bundle() { return state_->bundle; }
const TrainConfig& Trainer::config() const { return state_->config; }
std::uint64_t Trainer::steps() const { return state_->opt->steps(); }
std::size_t Trainer::epoch() const { return state_->epoch; }
void Trainer::set_epoch(std::size_t epoch) { state_->epoch = epoch; }
std::mt19937_64& Trainer::rng() { return state_->rng; }
Parameter* Trainer::align_log_scale() { return state_->align ? &*state_->align : nullptr; }

void Trainer::save(const std::filesystem::path& path) {
  auto& s = *state_;
  models::Container c;
  models::store_bundle(c, s.bundle);
  if (s.align) c.add(*s.align);
  for (std::size_t i = 0; i < s.params.size(); ++i) {
    const auto* p = s.params[i];
    c.add("adam.m." + p->name(), p->shape(), s.opt->first_moments()[i]);
    c.add("adam.v." + p->name(), p->shape(), s.opt->second_moments()[i]);
  }
  std::ostringstream rng;
  rng << s.rng;
  c.metadata["kind"] = "stage1";
  c.metadata["config"] = s.config.to_text();
  c.metadata["config_hash"] = s.config.hash();
  c.metadata["step"] = std::to_string(s.opt->steps());
  c.metadata["epoch"] = std::to_string(s.epoch);
  c.metadata["rng"] = rng.str();
  models::write_container(path, c);
}

std::unique_ptr<Trainer> Trainer::load(const std::filesystem::path& path, const TrainConfig& config) {
  const auto c = models::read_container(path);
  auto meta = [&](const std::string& key) {
    auto it = c.metadata.find(key);
    if (it == c.metadata.end()) throw std::runtime_error(path.string() + " is not a training checkpoint");
    return it->second;
  };
  if (meta("kind") != "stage1") throw std::runtime_error(path.string() + " is not a training checkpoint");
  if (meta("config_hash") != config.hash()) {
    throw ConfigError(path.string() + " was written under a different config");
  }
  auto t = std::make_unique<Trainer>(config, models::bundle_from(c));
  auto& s = *t->state_;
  if (s.align) c.load_into(*s.align);
  for (std::size_t i = 0; i < s.params.size(); ++i) {
    const auto& name = s.params[i]->name();
    const auto& m = c.blob("adam.m." + name);
    const auto& v = c.blob("adam.v." + name);
    if (m.values.size() != s.params[i]->size() || v.values.size() != s.params[i]->size()) {
      throw std::runtime_error("optimizer state of " + name + " has the wrong size");
    }
    s.opt->first_moments()[i] = m.values;
    s.opt->second_moments()[i] = v.values;
  }
  s.opt->set_steps(std::stoull(meta("step")));
  s.epoch = std::stoull(meta("epoch"));
  std::istringstream rng(meta("rng"));
  rng >> s.rng;
  if (!rng) throw std::runtime_error("corrupt RNG state in " + path.string());
  return t;
}

std::string metrics_json(const EpochMetrics& m) {
  using Json = nlohmann::ordered_json;
  auto opt = [](const std::optional<double>& x) { return x ? Json(*x) : Json(nullptr); };
  Json j;
  j["epoch"] = m.epoch;
  j["loss_total"] = m.loss_total;
  j["loss_contrastive"] = m.loss_contrastive;
  j["loss_recon"] = opt(m.loss_recon);
  j["loss_align"] = opt(m.loss_align);
  j["acc_swap"] = m.scores.acc_swap;
  j["acc_replace"] = m.scores.acc_replace;
  j["acc_itt"] = m.scores.acc_itt;
  j["acc_tot"] = m.scores.acc_tot;
  j["sim_pos_pos"] = m.sim_pos_pos();
  j["sim_pos_neg"] = m.sim_pos_neg();
  j["tau"] = m.tau;
  return j.dump();
}

std::vector<EpochMetrics> read_metrics(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::vector<EpochMetrics> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    auto opt = [&](const char* key) -> std::optional<double> {
      if (j.at(key).is_null()) return std::nullopt;
      return j.at(key).get<double>();
    };
    EpochMetrics m;
    m.epoch = j.at("epoch").get<std::size_t>();
    m.loss_total = j.at("loss_total").get<double>();
    m.loss_contrastive = j.at("loss_contrastive").get<double>();
    m.loss_recon = opt("loss_recon");
    m.loss_align = opt("loss_align");
    m.scores.acc_swap = j.at("acc_swap").get<double>();
    m.scores.acc_replace = j.at("acc_replace").get<double>();
    m.scores.acc_itt = j.at("acc_itt").get<double>();
    m.scores.acc_tot = j.at("acc_tot").get<double>();
    // Only the averaged negative similarity is stored; split it evenly.
    m.scores.trace.epoch = m.epoch;
    m.scores.trace.pos_pos = j.at("sim_pos_pos").get<double>();
    m.scores.trace.pos1_neg = m.scores.trace.pos2_neg = j.at("sim_pos_neg").get<double>();
    m.tau = j.at("tau").get<double>();
    out.push_back(m);
  }
  return out;
}

std::filesystem::path checkpoint_path(const std::filesystem::path& dir, std::size_t epoch) {
  char name[48];
  std::snprintf(name, sizeof name, "checkpoint-epoch-%03zu.bin", epoch);
  return dir / name;
}

RunResult run_training(const TrainConfig& config, const std::vector<world::TrainingScene>& dataset,
                       const eval::Suites& suites, const models::Decoder& decoder, const RunOptions& options) {
  config.validate();
  if (!decoder.frozen) throw std::invalid_argument("stage-1 training needs a frozen decoder");
  if (dataset.size() != config.scenes) {
    throw ConfigError("dataset has " + std::to_string(dataset.size()) + " scenes, config expects " +
                      std::to_string(config.scenes));
  }

  RunResult result;
  result.trainer = options.resume_from ? Trainer::load(*options.resume_from, config)
                                       : std::make_unique<Trainer>(config, models::ModelBundle::create(config.seed, decoder));
  Trainer& trainer = *result.trainer;

  std::filesystem::path metrics_path;
  if (options.out_dir) {
    std::filesystem::create_directories(*options.out_dir);
    metrics_path = *options.out_dir / "metrics.jsonl";
    std::string kept;
    if (options.resume_from && std::filesystem::exists(metrics_path)) {
      std::ifstream in(metrics_path, std::ios::binary);
      std::string line;
      while (std::getline(in, line)) {
        if (!line.empty() && nlohmann::json::parse(line).at("epoch").get<std::size_t>() <= trainer.epoch()) {
          kept += line + '\n';
        }
      }
    }
    std::ofstream(metrics_path, std::ios::binary | std::ios::trunc) << kept;
  }

  auto save_epoch = [&](const std::filesystem::path& dir, std::size_t epoch) {
    trainer.save(checkpoint_path(dir, epoch));
    if (!config.keep_checkpoints && epoch > 1) std::filesystem::remove(checkpoint_path(dir, epoch - 1));
  };

  std::vector<std::size_t> order(dataset.size());
  const std::size_t per_epoch = steps_per_epoch(config);
  const std::size_t last = std::min(config.epochs, options.stop_after.value_or(config.epochs));
  for (std::size_t epoch = trainer.epoch(); epoch < last; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), trainer.rng());
    std::vector<double> total, contrastive, recon, align;
    for (std::size_t s = 0; s < per_epoch; ++s) {
      const std::vector<std::size_t> idx(order.begin() + s * config.batch_size,
                                         order.begin() + (s + 1) * config.batch_size);
      const auto batch = assemble_batch(dataset, idx, config, trainer.rng());
      const auto r = trainer.step(batch);
      total.push_back(r.total);
      contrastive.push_back(r.contrastive);
      if (r.reconstruction) recon.push_back(*r.reconstruction);
      if (r.alignment) align.push_back(*r.alignment);
    }
    trainer.set_epoch(epoch + 1);

    EpochMetrics m;
    m.epoch = epoch + 1;
    m.loss_total = mean_of(total);
    m.loss_contrastive = mean_of(contrastive);
    if (!recon.empty()) m.loss_recon = mean_of(recon);
    if (!align.empty()) m.loss_align = mean_of(align);
    m.tau = models::temperature(trainer.bundle().log_scale);
    if (options.evaluate_epoch && !options.evaluate_epoch(m.epoch)) {
      if (options.out_dir) save_epoch(*options.out_dir, m.epoch);
      continue;
    }
    eval::BundleEmbedder embedder(trainer.bundle());
    const auto ev = eval::evaluate(embedder, suites, m.epoch);
    m.scores = ev.scores;

    if (options.out_dir) {
      std::ofstream(metrics_path, std::ios::binary | std::ios::app) << metrics_json(m) << '\n';
      save_epoch(*options.out_dir, m.epoch);
    }
    if (options.on_epoch) options.on_epoch(m, ev);
    result.history.push_back(m);
  }
  return result;
}

}  // namespace readlab::train
