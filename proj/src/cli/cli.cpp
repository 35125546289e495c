#include "readlab/cli/cli.hpp"

#include <openssl/evp.h>

#include <CLI11.hpp>
#include <atomic>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <nlohmann/json.hpp>
#include <optional>
#include <sstream>
#include <thread>

#include "readlab/models/pretrain.hpp"

namespace readlab::cli {
namespace {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

const std::vector<world::SuiteKind> kAllSuites = {world::SuiteKind::kSwap, world::SuiteKind::kReplace,
                                                   world::SuiteKind::kParaphrase};

std::string hex(const unsigned char* digest, unsigned int len) {
  std::string out;
  char buf[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(buf, sizeof buf, "%02x", digest[i]);
    out += buf;
  }
  return out;
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw ArtifactError("cannot read " + p.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out << text;
}

void require(const fs::path& p) {
  if (!fs::exists(p)) throw ArtifactError("missing input: " + p.string());
}

// Mentions every vocabulary entry so datasets and checkpoints from a build
// with another vocabulary are caught.
std::string vocabulary_fingerprint() {
  const auto& v = world::Vocabulary::standard();
  std::string words;
  for (std::size_t i = 0; i < v.size(); ++i) words += std::string(v.word(static_cast<world::TokenId>(i))) + '\n';
  words += "visual " + std::to_string(v.visual_size());
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_Digest(words.data(), words.size(), digest, &len, EVP_sha256(), nullptr);
  return hex(digest, len);
}

std::vector<world::SuiteKind> selected_suites(const std::string& suite) {
  if (suite == "all") return kAllSuites;
  try {
    return {world::parse_suite(suite)};
  } catch (const std::exception&) {
    throw train::ConfigError("suite: expected swap, replace, paraphrase or all, got '" + suite + "'");
  }
}

fs::path suite_file(const fs::path& dir, world::SuiteKind k) {
  return dir / ("suite-" + std::string(world::to_string(k)) + ".jsonl");
}

fs::path rankings_file(const fs::path& dir, const std::string& suite) { return dir / ("rankings-" + suite + ".jsonl"); }

// ---------------------------------------------------------------------------
// Shared options

struct CommonOptions {
  std::string config_file;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool force = false;
  std::vector<std::string> sets;
  std::optional<double> alpha, beta, noise_fraction;
  std::optional<std::size_t> m_negatives, k_targets, num_paraphrases, jobs;
  std::optional<std::string> recon_target, suite;
};

void add_config_options(CLI::App* app, CommonOptions& o) {
  app->add_option("--config", o.config_file, "Key = value config file")->check(CLI::ExistingFile);
  app->add_option("--seed", o.seed, "Seed of this command");
  app->add_option("--set", o.sets, "Extra config entries, key=value");
}

void add_train_options(CLI::App* app, CommonOptions& o) {
  app->add_option("--alpha", o.alpha, "Reconstruction weight");
  app->add_option("--beta", o.beta, "Alignment weight");
  app->add_option("--m-negatives", o.m_negatives, "Hard negatives per caption");
  app->add_option("--k-targets", o.k_targets, "Reconstruction targets per caption");
  app->add_option("--recon-target", o.recon_target, "alternative or original");
  app->add_option("--noise-fraction", o.noise_fraction, "Fraction of paraphrases replaced by noise");
  app->add_option("--num-paraphrases", o.num_paraphrases, "Paraphrases per caption");
}

// defaults < base (already applied) < config file < --set < named flags
Settings resolve(const CommonOptions& o, Settings base) {
  if (!o.config_file.empty()) base = Settings::from_text(read_text(o.config_file), base);
  for (const auto& kv : o.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw train::ConfigError("--set expects key=value, got '" + kv + "'");
    base.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  auto& t = base.train;
  if (o.seed) t.seed = *o.seed;
  if (o.alpha) t.alpha = *o.alpha;
  if (o.beta) t.beta = *o.beta;
  if (o.m_negatives) t.m_negatives = *o.m_negatives;
  if (o.k_targets) t.k_targets = *o.k_targets;
  if (o.recon_target) t.set("recon_target", *o.recon_target);
  if (o.noise_fraction) t.noise_fraction = *o.noise_fraction;
  if (o.num_paraphrases) t.num_paraphrases = *o.num_paraphrases;
  if (o.suite) base.suite = *o.suite;
  selected_suites(base.suite);
  t.validate();
  return base;
}

void prepare_out_dir(const fs::path& dir, bool force) {
  if (fs::exists(dir) && !fs::is_empty(dir) && !force) {
    throw train::ConfigError("output directory " + dir.string() + " exists; pass --force to overwrite");
  }
  fs::create_directories(dir);
}

Json config_json(const Settings& s) {
  Json j = Json::object();
  std::istringstream in(s.to_text());
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    j[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return j;
}

Settings settings_from_json(const Json& j) {
  std::string text;
  for (const auto& [k, v] : j.items()) text += k + "=" + v.get<std::string>() + "\n";
  return Settings::from_text(text, Settings{});
}

void write_manifest(const fs::path& dir, const std::string& command, const std::vector<std::string>& args,
                    const Settings& s, const Json& inputs, const Json& artifacts) {
  Json m;
  m["tool"] = "readlab";
  m["version"] = kToolVersion;
  m["command"] = command;
  m["argv"] = args;
  m["seed"] = s.train.seed;
  m["config"] = config_json(s);
  m["inputs"] = inputs;
  m["outputs"] = Json{{"dir", dir.string()}};
  m["artifact_sha256"] = artifacts;
  write_text(dir / "manifest.json", m.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Dataset directory

struct DataDir {
  fs::path dir;
  Settings settings;  // as generated
  std::vector<world::Scene> scenes;
  std::vector<world::TrainingScene> training;
  std::vector<world::Scene> eval_scenes;
  eval::Suites suites;
  Json hashes = Json::object();
};

Json read_manifest(const fs::path& dir) {
  const auto path = dir / "manifest.json";
  require(path);
  return Json::parse(read_text(path));
}

DataDir open_data(const fs::path& dir, bool load_training) {
  DataDir d;
  d.dir = dir;
  const auto m = read_manifest(dir);
  if (m.value("command", "") != "gen") throw ArtifactError(dir.string() + " is not a generated dataset");
  if (m.value("data_format", 0) != kDataFormatVersion) {
    throw ArtifactError(dir.string() + ": dataset format " + std::to_string(m.value("data_format", 0)) +
                        ", this build reads " + std::to_string(kDataFormatVersion));
  }
  if (m.value("vocabulary", "") != vocabulary_fingerprint()) {
    throw ArtifactError(dir.string() + " was generated with a different vocabulary");
  }
  d.settings = settings_from_json(m.at("config"));
  for (const char* f : {"scenes.jsonl", "train.jsonl", "eval_scenes.jsonl"}) {
    require(dir / f);
    d.hashes[f] = file_sha256(dir / f);
  }
  d.scenes = world::read_scenes(dir / "scenes.jsonl");
  if (load_training) d.training = world::read_training_set(dir / "train.jsonl", d.scenes);
  d.eval_scenes = world::read_scenes(dir / "eval_scenes.jsonl");
  for (auto k : kAllSuites) {
    const auto p = suite_file(dir, k);
    if (!fs::exists(p)) continue;
    d.hashes[p.filename().string()] = file_sha256(p);
    auto items = world::read_benchmark(p, d.eval_scenes);
    if (k == world::SuiteKind::kSwap) d.suites.swap = std::move(items);
    if (k == world::SuiteKind::kReplace) d.suites.replace = std::move(items);
    if (k == world::SuiteKind::kParaphrase) d.suites.paraphrase = std::move(items);
  }
  return d;
}

// Training inherits the dataset-level keys unless they are set explicitly, and
// must agree with the dataset on them.
Settings data_defaults(const DataDir& d) {
  Settings s;
  s.train.scenes = d.settings.train.scenes;
  s.train.m_negatives = std::min<std::size_t>(s.train.m_negatives, d.settings.train.m_negatives);
  s.train.num_paraphrases = d.settings.train.num_paraphrases;
  s.train.noise_fraction = d.settings.train.noise_fraction;
  s.eval_scenes = d.settings.eval_scenes;
  return s;
}

void check_against_data(const Settings& s, const DataDir& d) {
  const auto& want = s.train;
  const auto& have = d.settings.train;
  if (want.scenes != have.scenes) {
    throw train::ConfigError("scenes=" + std::to_string(want.scenes) + " but the dataset has " +
                             std::to_string(have.scenes));
  }
  if (want.m_negatives > have.m_negatives) {
    throw train::ConfigError("m_negatives=" + std::to_string(want.m_negatives) + " but the dataset has " +
                             std::to_string(have.m_negatives) + " per caption");
  }
  if (want.num_paraphrases != have.num_paraphrases) {
    throw train::ConfigError("num_paraphrases differs from the dataset's " + std::to_string(have.num_paraphrases));
  }
  if (want.noise_fraction != have.noise_fraction) {
    throw train::ConfigError("noise_fraction differs from the dataset's; regenerate with gen --noise-fraction");
  }
}

models::Decoder open_decoder(const fs::path& path) {
  require(path);
  models::Decoder d;
  try {
    d = models::load_decoder(path);
  } catch (const std::exception& e) {
    throw ArtifactError(path.string() + ": " + e.what());
  }
  if (!d.frozen) throw ArtifactError(path.string() + " holds an unfrozen decoder");
  return d;
}

// ---------------------------------------------------------------------------
// Commands

int cmd_gen(const CommonOptions& o, const std::vector<std::string>& args) {
  const auto s = resolve(o, Settings{});
  const fs::path out = o.out;
  prepare_out_dir(out, o.force);
  write_manifest(out, "gen", args, s, Json::object(), Json::object());
  {
    auto m = read_manifest(out);
    m["data_format"] = kDataFormatVersion;
    m["vocabulary"] = vocabulary_fingerprint();
    write_text(out / "manifest.json", m.dump(2) + "\n");
  }

  const auto seed = s.train.seed;
  world::DatasetOptions dopt = train::dataset_options(s.train);
  const auto scenes = world::generate_scenes(s.train.scenes, world::derive_seed(seed, 1));
  const auto training = world::build_training_set(scenes, dopt, world::derive_seed(seed, 2));
  const auto held = world::generate_disjoint_scenes(s.eval_scenes, world::derive_seed(seed, 3), scenes, scenes.size());
  world::write_scenes(out / "scenes.jsonl", scenes);
  world::write_training_set(out / "train.jsonl", training);
  world::write_scenes(out / "eval_scenes.jsonl", held);
  for (auto k : selected_suites(s.suite)) {
    world::BenchmarkOptions bo;
    bo.paraphrase_negatives = s.train.m_negatives;
    const auto items = world::build_benchmark(k, held, world::derive_seed(seed, 10 + static_cast<int>(k)), bo);
    world::write_benchmark(suite_file(out, k), items);
    std::cerr << "gen: " << world::to_string(k) << " suite, " << items.size() << " items\n";
  }
  std::cerr << "gen: " << training.size() << " training scenes, " << held.size() << " held-out scenes\n";
  return kOk;
}

int cmd_pretrain(const CommonOptions& o, const std::string& data, const std::vector<std::string>& args) {
  const auto d = open_data(data, true);
  auto s = resolve(o, data_defaults(d));
  const fs::path out = o.out;
  prepare_out_dir(out, o.force);
  write_manifest(out, "pretrain-decoder", args, s, Json{{"data", data}}, d.hashes);

  std::vector<world::TokenSeq> corpus, heldout;
  for (const auto& ts : d.training) {
    for (const auto& c : ts.captions) corpus.push_back(c.tokens);
  }
  const std::size_t held_scenes = std::min<std::size_t>(d.eval_scenes.size(), 200);
  for (std::size_t i = 0; i < held_scenes; ++i) {
    for (const auto& c : world::caption_set(d.eval_scenes[i])) heldout.push_back(c.tokens);
  }
  models::PretrainOptions popt;
  popt.epochs = s.pretrain_epochs;
  const auto r = models::pretrain_decoder(corpus, heldout, s.train.seed, popt);
  auto decoder = r.decoder;
  models::save_decoder(out / "decoder.bin", decoder);

  Json rep;
  rep["corpus_captions"] = corpus.size();
  rep["heldout_captions"] = heldout.size();
  rep["train_loss"] = r.report.train_loss;
  rep["heldout_perplexity"] = r.report.heldout_perplexity;
  rep["slot_branching"] = r.report.slot_branching;
  rep["perplexity_bound"] = r.report.perplexity_bound;
  write_text(out / "report.json", rep.dump(2) + "\n");
  std::cerr << "pretrain-decoder: final held-out perplexity " << r.report.heldout_perplexity.back() << " (bound "
            << r.report.perplexity_bound << ")\n";
  return kOk;
}

struct TrainInputs {
  std::string data, decoder, resume;
};

Json train_artifacts(const DataDir& d, const fs::path& decoder) {
  Json a = d.hashes;
  a["decoder"] = file_sha256(decoder);
  return a;
}

void train_one(const Settings& s, const DataDir& d, const models::Decoder& decoder, const fs::path& out,
               const std::optional<fs::path>& resume) {
  train::RunOptions ro;
  ro.out_dir = out;
  ro.resume_from = resume;
  ro.on_epoch = [&](const train::EpochMetrics& m, const eval::Evaluation&) {
    std::fprintf(stderr, "%s epoch %zu: loss %.4f swap %.3f replace %.3f itt %.3f tot %.3f\n", out.string().c_str(),
                 m.epoch, m.loss_total, m.scores.acc_swap, m.scores.acc_replace, m.scores.acc_itt, m.scores.acc_tot);
  };
  train::run_training(s.train, d.training, d.suites, decoder, ro);
}

int cmd_train(const CommonOptions& o, const TrainInputs& in, const std::vector<std::string>& args) {
  const auto d = open_data(in.data, true);
  auto s = resolve(o, data_defaults(d));
  check_against_data(s, d);
  const auto decoder = open_decoder(in.decoder);
  std::optional<fs::path> resume;
  if (!in.resume.empty()) {
    require(in.resume);
    resume = in.resume;
  }
  const fs::path out = o.out;
  // Resuming into the run's own directory is the normal case.
  prepare_out_dir(out, o.force || resume.has_value());
  Json inputs{{"data", in.data}, {"decoder", in.decoder}};
  if (resume) inputs["resume"] = resume->string();
  write_manifest(out, "train", args, s, inputs, train_artifacts(d, in.decoder));
  train_one(s, d, decoder, out, resume);
  return kOk;
}

// Shortest text that reads back to the same double.
std::string real_field(double x) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, r.ptr);
}

int cmd_ablate(const CommonOptions& o, const TrainInputs& in, const std::vector<std::string>& args) {
  const auto d = open_data(in.data, true);
  const auto s = resolve(o, data_defaults(d));
  check_against_data(s, d);
  const auto decoder = open_decoder(in.decoder);
  const fs::path out = o.out;
  prepare_out_dir(out, o.force);
  write_manifest(out, "ablate", args, s, Json{{"data", in.data}, {"decoder", in.decoder}},
                 train_artifacts(d, in.decoder));

  struct Run {
    int row;
    Settings settings;
    fs::path dir;
  };
  std::vector<Run> runs;
  for (int row = 1; row <= 4; ++row) {
    for (std::uint64_t k = 0; k < 3; ++k) {
      Run r{row, s, {}};
      r.settings.train.seed = s.train.seed + k;
      if (row == 1 || row == 3) r.settings.train.alpha = 0.0;
      if (row == 1 || row == 2) r.settings.train.beta = 0.0;
      r.dir = out / ("row" + std::to_string(row) + "-seed" + std::to_string(r.settings.train.seed));
      runs.push_back(std::move(r));
    }
  }
  const Json artifacts = train_artifacts(d, in.decoder);
  for (const auto& r : runs) {
    fs::create_directories(r.dir);
    write_manifest(r.dir, "train", args, r.settings, Json{{"data", in.data}, {"decoder", in.decoder}}, artifacts);
  }

  std::atomic<std::size_t> next{0};
  std::mutex error_mutex;
  std::exception_ptr error;
  auto worker = [&] {
    for (std::size_t i = next++; i < runs.size(); i = next++) {
      try {
        train_one(runs[i].settings, d, decoder, runs[i].dir, std::nullopt);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    }
  };
  const std::size_t jobs = std::max<std::size_t>(1, std::min(o.jobs.value_or(1), runs.size()));
  std::vector<std::thread> pool;
  for (std::size_t j = 1; j < jobs; ++j) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);

  std::ostringstream csv;
  csv << "row,alpha,beta,seed,epoch,acc_swap,acc_replace,acc_itt,acc_tot,average\n";
  std::map<int, std::vector<train::EpochMetrics>> finals;
  for (const auto& r : runs) {
    const auto m = train::read_metrics(r.dir / "metrics.jsonl").back();
    finals[r.row].push_back(m);
    csv << r.row << ',' << real_field(r.settings.train.alpha) << ',' << real_field(r.settings.train.beta) << ','
        << r.settings.train.seed << ',' << m.epoch << ',' << real_field(m.scores.acc_swap) << ','
        << real_field(m.scores.acc_replace) << ',' << real_field(m.scores.acc_itt) << ','
        << real_field(m.scores.acc_tot) << ',' << real_field(m.scores.average()) << '\n';
  }
  for (const auto& [row, ms] : finals) {
    eval::BenchmarkScores mean;
    for (const auto& m : ms) {
      mean.acc_swap += m.scores.acc_swap / static_cast<double>(ms.size());
      mean.acc_replace += m.scores.acc_replace / static_cast<double>(ms.size());
      mean.acc_itt += m.scores.acc_itt / static_cast<double>(ms.size());
      mean.acc_tot += m.scores.acc_tot / static_cast<double>(ms.size());
    }
    const auto& rs = runs[static_cast<std::size_t>(row - 1) * 3].settings.train;
    csv << row << ',' << real_field(rs.alpha) << ',' << real_field(rs.beta) << ",mean," << ms.front().epoch << ','
        << real_field(mean.acc_swap) << ',' << real_field(mean.acc_replace) << ',' << real_field(mean.acc_itt) << ','
        << real_field(mean.acc_tot) << ',' << real_field(mean.average()) << '\n';
  }
  write_text(out / "ablation.csv", csv.str());
  std::cerr << csv.str();
  return kOk;
}

int cmd_eval(const CommonOptions& o, const std::string& data, const std::string& checkpoint,
             const std::vector<std::string>& args) {
  const auto d = open_data(data, false);
  const auto s = resolve(o, data_defaults(d));
  require(checkpoint);
  models::Container c;
  try {
    c = models::read_container(checkpoint);
  } catch (const std::exception& e) {
    throw ArtifactError(checkpoint + ": " + e.what());
  }
  auto bundle = models::bundle_from(c);
  std::size_t epoch = 0;
  if (auto it = c.metadata.find("epoch"); it != c.metadata.end()) epoch = std::stoull(it->second);

  const fs::path out = o.out;
  prepare_out_dir(out, o.force);
  Json artifacts = d.hashes;
  artifacts["checkpoint"] = file_sha256(checkpoint);
  write_manifest(out, "eval", args, s, Json{{"data", data}, {"checkpoint", checkpoint}}, artifacts);

  eval::Suites chosen;
  for (auto k : selected_suites(s.suite)) {
    if (k == world::SuiteKind::kSwap) chosen.swap = d.suites.swap;
    if (k == world::SuiteKind::kReplace) chosen.replace = d.suites.replace;
    if (k == world::SuiteKind::kParaphrase) chosen.paraphrase = d.suites.paraphrase;
    if (!fs::exists(suite_file(data, k))) throw ArtifactError("missing input: " + suite_file(data, k).string());
  }
  eval::BundleEmbedder embedder(bundle);
  const auto ev = eval::evaluate(embedder, chosen, epoch);
  for (const auto& [name, results] : ev.rankings) eval::write_rankings(rankings_file(out, name), results);
  eval::write_summary_csv(out / "summary.csv", ev.summary);
  for (const auto& row : ev.summary) {
    if (row.category != "all") continue;
    std::fprintf(stderr, "eval: %s %zu items, accuracy %.4f\n", row.suite.c_str(), row.items, row.acc_single);
  }
  return kOk;
}

int cmd_analyze(const std::vector<std::string>& run_args, const std::string& out, bool force) {
  std::vector<fs::path> runs;
  for (const auto& r : run_args) {
    const fs::path p = r;
    require(p);
    if (fs::exists(p / "metrics.jsonl")) {
      runs.push_back(p);
      continue;
    }
    std::vector<fs::path> found;
    for (const auto& e : fs::directory_iterator(p)) {
      if (e.is_directory() && fs::exists(e.path() / "metrics.jsonl")) found.push_back(e.path());
    }
    if (found.empty()) throw ArtifactError("no metrics.jsonl in " + p.string() + " or its subdirectories");
    std::sort(found.begin(), found.end());
    runs.insert(runs.end(), found.begin(), found.end());
  }
  if (fs::exists(out) && !force) throw train::ConfigError(out + " exists; pass --force to overwrite");

  std::ostringstream csv;
  csv << "run,recon_target,seed,alpha,beta,noise_fraction,epoch,sim_pos_pos,sim_pos_neg,acc_swap,acc_replace,acc_itt,"
         "acc_tot\n";
  for (const auto& run : runs) {
    Settings s;
    if (fs::exists(run / "manifest.json")) s = settings_from_json(read_manifest(run).at("config"));
    for (const auto& m : train::read_metrics(run / "metrics.jsonl")) {
      csv << run.string() << ',' << train::to_string(s.train.recon_target) << ',' << s.train.seed << ','
          << real_field(s.train.alpha) << ',' << real_field(s.train.beta) << ','
          << real_field(s.train.noise_fraction) << ',' << m.epoch << ',' << real_field(m.sim_pos_pos()) << ','
          << real_field(m.sim_pos_neg()) << ',' << real_field(m.scores.acc_swap) << ','
          << real_field(m.scores.acc_replace) << ',' << real_field(m.scores.acc_itt) << ','
          << real_field(m.scores.acc_tot) << '\n';
    }
  }
  if (fs::path(out).has_parent_path()) fs::create_directories(fs::path(out).parent_path());
  write_text(out, csv.str());
  return kOk;
}

}  // namespace

void Settings::set(const std::string& key, const std::string& value) {
  auto count = [&] {
    std::size_t pos = 0;
    unsigned long long x = 0;
    try {
      x = std::stoull(value, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos == 0 || pos != value.size() || value[0] == '-') {
      throw train::ConfigError(key + ": expected a non-negative integer, got '" + value + "'");
    }
    return static_cast<std::size_t>(x);
  };
  std::string v = value;
  v.erase(0, v.find_first_not_of(" \t\r"));
  v.erase(v.find_last_not_of(" \t\r") + 1);
  if (key == "eval_scenes") {
    eval_scenes = count();
  } else if (key == "pretrain_epochs") {
    pretrain_epochs = count();
  } else if (key == "suite") {
    suite = v;
    selected_suites(suite);
  } else {
    train.set(key, value);
  }
}

std::string Settings::to_text() const {
  return train.to_text() + "eval_scenes=" + std::to_string(eval_scenes) + "\npretrain_epochs=" +
         std::to_string(pretrain_epochs) + "\nsuite=" + suite + "\n";
}

Settings Settings::from_text(const std::string& text, Settings base) {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto b = line.find_first_not_of(" \t\r");
    if (b == std::string::npos || line[b] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw train::ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    std::string key = line.substr(0, eq);
    key.erase(0, key.find_first_not_of(" \t"));
    key.erase(key.find_last_not_of(" \t") + 1);
    std::string value = line.substr(eq + 1);
    value.erase(0, value.find_first_not_of(" \t"));
    value.erase(value.find_last_not_of(" \t\r") + 1);
    base.set(key, value);
  }
  return base;
}

std::string file_sha256(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ArtifactError("cannot read " + path.string());
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr);
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    EVP_DigestUpdate(ctx.get(), buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx.get(), digest, &len);
  return hex(digest, len);
}

int run(const std::vector<std::string>& args) {
  CLI::App app{"Toy compositional image-text training and evaluation", "readlab"};
  app.set_version_flag("--version", kToolVersion);
  app.require_subcommand(1);

  CommonOptions o;
  TrainInputs ti;
  std::string data, checkpoint, analyze_out;
  std::vector<std::string> analyze_runs;

  auto* gen = app.add_subcommand("gen", "Generate training scenes and benchmark suites");
  add_config_options(gen, o);
  gen->add_option("--out", o.out, "Output directory")->required();
  gen->add_flag("--force", o.force, "Overwrite a non-empty output directory");
  gen->add_option("--m-negatives", o.m_negatives, "Hard negatives per caption");
  gen->add_option("--num-paraphrases", o.num_paraphrases, "Paraphrases per caption");
  gen->add_option("--noise-fraction", o.noise_fraction, "Fraction of paraphrases replaced by noise");
  gen->add_option("--suite", o.suite, "swap, replace, paraphrase or all");

  auto* pre = app.add_subcommand("pretrain-decoder", "Pretrain and freeze the caption decoder");
  add_config_options(pre, o);
  pre->add_option("--data", data, "Dataset directory from gen")->required();
  pre->add_option("--out", o.out, "Output directory")->required();
  pre->add_flag("--force", o.force, "Overwrite a non-empty output directory");

  auto* tr = app.add_subcommand("train", "Fine-tune the encoders against the frozen decoder");
  add_config_options(tr, o);
  add_train_options(tr, o);
  tr->add_option("--data", ti.data, "Dataset directory from gen")->required();
  tr->add_option("--decoder", ti.decoder, "Frozen decoder checkpoint")->required();
  tr->add_option("--resume", ti.resume, "Checkpoint to continue from");
  tr->add_option("--out", o.out, "Run directory")->required();
  tr->add_flag("--force", o.force, "Overwrite a non-empty run directory");

  auto* ab = app.add_subcommand("ablate", "Loss-weight grid: 4 rows x 3 seeds");
  add_config_options(ab, o);
  add_train_options(ab, o);
  ab->add_option("--data", ti.data, "Dataset directory from gen")->required();
  ab->add_option("--decoder", ti.decoder, "Frozen decoder checkpoint")->required();
  ab->add_option("--out", o.out, "Output directory")->required();
  ab->add_flag("--force", o.force, "Overwrite a non-empty output directory");
  ab->add_option("--jobs", o.jobs, "Runs trained concurrently");

  auto* ev = app.add_subcommand("eval", "Score a checkpoint on the benchmark suites");
  add_config_options(ev, o);
  ev->add_option("--data", data, "Dataset directory from gen")->required();
  ev->add_option("--checkpoint", checkpoint, "Training checkpoint")->required();
  ev->add_option("--out", o.out, "Output directory")->required();
  ev->add_option("--suite", o.suite, "swap, replace, paraphrase or all");
  ev->add_flag("--force", o.force, "Overwrite a non-empty output directory");

  auto* an = app.add_subcommand("analyze", "Per-epoch similarity traces across runs as CSV");
  an->add_option("--runs", analyze_runs, "Run directories, or directories holding runs")->required();
  an->add_option("--out", analyze_out, "Output CSV")->required();
  an->add_flag("--force", o.force, "Overwrite an existing CSV");

  std::vector<std::string> argv_rev(args.rbegin(), args.rend());
  try {
    app.parse(argv_rev);
  } catch (const CLI::CallForHelp& e) {
    std::cout << app.help();
    return kOk;
  } catch (const CLI::CallForVersion&) {
    std::cout << kToolVersion << '\n';
    return kOk;
  } catch (const CLI::ParseError& e) {
    std::cerr << "readlab: " << e.what() << '\n';
    return kConfigError;
  }

  try {
    if (gen->parsed()) return cmd_gen(o, args);
    if (pre->parsed()) return cmd_pretrain(o, data, args);
    if (tr->parsed()) return cmd_train(o, ti, args);
    if (ab->parsed()) return cmd_ablate(o, ti, args);
    if (ev->parsed()) return cmd_eval(o, data, checkpoint, args);
    if (an->parsed()) return cmd_analyze(analyze_runs, analyze_out, o.force);
  } catch (const train::ConfigError& e) {
    std::cerr << "readlab: config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const ArtifactError& e) {
    std::cerr << "readlab: " << e.what() << '\n';
    return kMissingArtifact;
  } catch (const train::NumericError& e) {
    std::cerr << "readlab: numeric failure: " << e.what() << '\n';
    return kNumericFailure;
  } catch (const std::exception& e) {
    std::cerr << "readlab: " << e.what() << '\n';
    return kFailure;
  }
  return kFailure;
}

}  // namespace readlab::cli
