#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

#include "readlab/models/encoder.hpp"
#include "readlab/tensor/ops.hpp"
#include "readlab/train/trainer.hpp"

using namespace readlab;
using train::TrainConfig;
using world::TokenSeq;

namespace {

models::Decoder frozen_decoder(std::uint64_t seed = 3) {
  std::mt19937_64 rng(seed);
  auto d = models::Decoder::create(models::default_decoder_shape(), rng);
  d.freeze();
  return d;
}

TrainConfig small_config(std::size_t scenes = 96, std::size_t batch = 16) {
  TrainConfig c;
  c.scenes = scenes;
  c.batch_size = batch;
  c.warmup = 4;
  return c;
}

std::vector<world::TrainingScene> dataset(const TrainConfig& c, std::uint64_t seed = 1) {
  return world::build_training_set(world::generate_scenes(c.scenes, seed), train::dataset_options(c), seed + 1);
}

eval::Suites tiny_suites(std::size_t items, std::uint64_t seed) {
  auto held = world::generate_disjoint_scenes(items, seed, {});
  return {world::build_benchmark(world::SuiteKind::kSwap, held, seed + 1),
          world::build_benchmark(world::SuiteKind::kReplace, held, seed + 2),
          world::build_benchmark(world::SuiteKind::kParaphrase, held, seed + 3)};
}

std::vector<double> snapshot(const std::vector<tensor::Parameter*>& ps) {
  std::vector<double> out;
  for (const auto* p : ps) out.insert(out.end(), p->values().begin(), p->values().end());
  return out;
}

std::vector<double> grads(const std::vector<tensor::Parameter*>& ps) {
  std::vector<double> out;
  for (const auto* p : ps) out.insert(out.end(), p->grad().begin(), p->grad().end());
  return out;
}

bool same_batch(const train::BatchSample& a, const train::BatchSample& b) {
  return a.scene_index == b.scene_index && a.images == b.images && a.captions == b.captions &&
         a.negatives == b.negatives && a.targets == b.targets && a.paraphrases == b.paraphrases;
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& name) : path(std::filesystem::temp_directory_path() / name) {
    std::filesystem::remove_all(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
};

}  // namespace

TEST(Config, Defaults) {
  const TrainConfig c;
  EXPECT_EQ(c.alpha, 0.1);
  EXPECT_EQ(c.beta, 0.5);
  EXPECT_EQ(c.m_negatives, 3u);
  EXPECT_EQ(c.k_targets, 1u);
  EXPECT_EQ(c.warmup, 50u);
  EXPECT_EQ(c.batch_size, 64u);
  EXPECT_EQ(c.scenes, 2000u);
  EXPECT_EQ(c.epochs, 30u);
  EXPECT_EQ(c.lr, 3e-3);
  EXPECT_EQ(c.weight_decay, 0.01);
  EXPECT_EQ(c.num_paraphrases, 1u);
  EXPECT_EQ(c.noise_fraction, 0.0);
  EXPECT_EQ(c.clip_norm, 5.0);
  EXPECT_EQ(c.recon_target, train::ReconTarget::kAlternative);
  EXPECT_NO_THROW(c.validate());
}

TEST(Config, TextRoundTrip) {
  TrainConfig c;
  c.alpha = 0.3;
  c.beta = 1.0 / 3.0;
  c.lr = 1e-5;
  c.seed = 12345678901234ULL;
  c.recon_target = train::ReconTarget::kOriginal;
  c.align_source = train::AlignSource::kCaptionSetUnion;
  c.shared_temperature = false;
  c.noise_fraction = 0.2;
  const auto back = TrainConfig::from_text(c.to_text());
  EXPECT_EQ(back.to_text(), c.to_text());
  EXPECT_EQ(back.beta, c.beta);
  EXPECT_EQ(back.hash(), c.hash());
  EXPECT_NE(TrainConfig{}.hash(), c.hash());
}

TEST(Config, FileAppliesOverBase) {
  TrainConfig base;
  base.epochs = 7;
  const auto c = TrainConfig::from_text("# comment\n\n alpha = 0.25 \nm_negatives=1\n", base);
  EXPECT_EQ(c.alpha, 0.25);
  EXPECT_EQ(c.m_negatives, 1u);
  EXPECT_EQ(c.epochs, 7u);
}

TEST(Config, RejectsBadInput) {
  EXPECT_THROW(TrainConfig::from_text("gamma=1\n"), train::ConfigError);
  EXPECT_THROW(TrainConfig::from_text("alpha=abc\n"), train::ConfigError);
  EXPECT_THROW(TrainConfig::from_text("epochs=-3\n"), train::ConfigError);
  EXPECT_THROW(TrainConfig::from_text("epochs 3\n"), train::ConfigError);
  EXPECT_THROW(TrainConfig::from_text("recon_target=both\n"), train::ConfigError);

  TrainConfig c;
  c.batch_size = 1;
  EXPECT_THROW(c.validate(), train::ConfigError);
  c.m_negatives = 0;
  c.beta = 0.0;
  c.scenes = 10;
  EXPECT_NO_THROW(c.validate());
  c.k_targets = 0;
  EXPECT_THROW(c.validate(), train::ConfigError);
  c = TrainConfig{};
  c.noise_fraction = 1.5;
  EXPECT_THROW(c.validate(), train::ConfigError);
  c = TrainConfig{};
  c.num_paraphrases = 0;
  EXPECT_THROW(c.validate(), train::ConfigError);
}

TEST(Schedule, Endpoints) {
  TrainConfig c;  // 31 steps per epoch, 930 in total
  const auto total = train::total_steps(c);
  ASSERT_EQ(total, 930u);
  EXPECT_EQ(train::lr_schedule(0, c), 0.0);
  EXPECT_EQ(train::lr_schedule(c.warmup, c), c.lr);
  EXPECT_NEAR(train::lr_schedule(total, c), 0.0, 1e-12);
  EXPECT_EQ(train::lr_schedule(total + 5, c), 0.0);
}

TEST(Schedule, MatchesClosedForm) {
  TrainConfig c;
  const double w = static_cast<double>(c.warmup), t = static_cast<double>(train::total_steps(c));
  for (std::uint64_t s = 0; s <= train::total_steps(c); s += 7) {
    const double x = static_cast<double>(s);
    const double expect =
        x < w ? c.lr * x / w : c.lr * (std::cos(std::numbers::pi * (x - w) / (t - w)) + 1.0) / 2.0;
    EXPECT_NEAR(train::lr_schedule(s, c), expect, 1e-15) << "step " << s;
  }
  // The last step before the end is already tiny.
  EXPECT_LT(train::lr_schedule(train::total_steps(c) - 1, c), 1e-7);
}

TEST(Sampling, DeterministicForFixedRng) {
  auto c = small_config();
  const auto ds = dataset(c);
  std::mt19937_64 a(9), b(9), other(10);
  const auto x = train::sample_batch(ds, c, a);
  const auto y = train::sample_batch(ds, c, b);
  EXPECT_TRUE(same_batch(x, y));
  EXPECT_FALSE(same_batch(x, train::sample_batch(ds, c, other)));
}

TEST(Sampling, ShapesAndDistinctScenes) {
  auto c = small_config();
  c.k_targets = 2;
  const auto ds = dataset(c);
  std::mt19937_64 rng(4);
  for (int i = 0; i < 50; ++i) {
    const auto b = train::sample_batch(ds, c, rng);
    ASSERT_EQ(b.images.size(), c.batch_size);
    ASSERT_EQ(b.captions.size(), c.batch_size);
    ASSERT_EQ(b.negatives.size(), c.batch_size * c.m_negatives);
    ASSERT_EQ(b.paraphrases.size(), c.batch_size);
    ASSERT_EQ(b.targets.size(), c.batch_size);
    std::set<std::size_t> seen(b.scene_index.begin(), b.scene_index.end());
    EXPECT_EQ(seen.size(), c.batch_size);
    for (std::size_t j = 0; j < c.batch_size; ++j) {
      const auto& ts = ds[b.scene_index[j]];
      ASSERT_EQ(b.targets[j].size(), 2u);
      EXPECT_NE(b.targets[j][0], b.targets[j][1]);
      // Caption comes from the scene's set and its negatives are the first M
      // pregenerated for it.
      std::size_t c_idx = ts.captions.size();
      for (std::size_t k = 0; k < ts.captions.size(); ++k) {
        if (ts.captions[k].tokens == b.captions[j]) c_idx = k;
      }
      ASSERT_LT(c_idx, ts.captions.size());
      for (std::size_t m = 0; m < c.m_negatives; ++m) {
        EXPECT_EQ(b.negatives[j * c.m_negatives + m], ts.negatives[c_idx][m].tokens);
      }
    }
  }
}

TEST(Sampling, AlternativesNeverEqualTheCaption) {
  auto c = small_config(64, 8);
  c.k_targets = 3;
  const auto ds = dataset(c);
  std::mt19937_64 rng(5);
  std::size_t checked = 0;
  for (int i = 0; i < 10000; ++i) {
    const auto b = train::sample_batch(ds, c, rng);
    for (std::size_t j = 0; j < b.captions.size(); ++j) {
      for (const auto& y : b.targets[j]) {
        ASSERT_NE(y, b.captions[j]);
        ++checked;
      }
    }
  }
  EXPECT_EQ(checked, 10000u * 8u * 3u);
}

TEST(Sampling, OriginalModeTargetsTheCaption) {
  auto c = small_config();
  c.recon_target = train::ReconTarget::kOriginal;
  c.k_targets = 2;
  const auto ds = dataset(c);
  std::mt19937_64 rng(6);
  for (int i = 0; i < 200; ++i) {
    const auto b = train::sample_batch(ds, c, rng);
    for (std::size_t j = 0; j < b.captions.size(); ++j) {
      for (const auto& y : b.targets[j]) ASSERT_EQ(y, b.captions[j]);
    }
  }
}

TEST(Sampling, ParaphrasesKeepTheMeaning) {
  for (auto source : {train::AlignSource::kRuleParaphrase, train::AlignSource::kCaptionSetUnion}) {
    auto c = small_config();
    c.num_paraphrases = 3;
    c.align_source = source;
    const auto ds = dataset(c);
    std::mt19937_64 rng(7);
    for (int i = 0; i < 100; ++i) {
      const auto b = train::sample_batch(ds, c, rng);
      for (std::size_t j = 0; j < b.captions.size(); ++j) {
        const auto p = world::parse_caption(b.paraphrases[j]);
        ASSERT_TRUE(p.has_value());
        EXPECT_TRUE(world::same_meaning(*p, ds[b.scene_index[j]].scene));
        if (source == train::AlignSource::kRuleParaphrase) {
          EXPECT_NE(b.paraphrases[j], b.captions[j]);
        }
      }
    }
  }
}

TEST(Sampling, RuleParaphraseDrawsAmongAllCandidates) {
  auto c = small_config();
  c.num_paraphrases = 3;
  const auto ds = dataset(c);
  const std::vector<std::size_t> one{0};
  std::mt19937_64 rng(8);
  std::set<TokenSeq> drawn;
  for (int i = 0; i < 400; ++i) {
    auto b = train::assemble_batch(ds, one, c, rng);
    for (std::size_t k = 0; k < ds[0].captions.size(); ++k) {
      if (ds[0].captions[k].tokens != b.captions[0]) continue;
      std::set<TokenSeq> cands;
      for (const auto& p : ds[0].paraphrases[k]) cands.insert(p.tokens);
      EXPECT_TRUE(cands.count(b.paraphrases[0]));
    }
    drawn.insert(b.paraphrases[0]);
  }
  std::set<TokenSeq> all;
  for (const auto& ps : ds[0].paraphrases) {
    for (const auto& p : ps) all.insert(p.tokens);
  }
  EXPECT_EQ(drawn, all);
}

TEST(Sampling, RejectsDatasetSmallerThanBatch) {
  auto c = small_config(96, 16);
  auto ds = dataset(c);
  ds.resize(15);
  std::mt19937_64 rng(1);
  EXPECT_THROW(train::sample_batch(ds, c, rng), std::invalid_argument);
}

TEST(Step, RejectsUnfrozenDecoder) {
  std::mt19937_64 rng(1);
  auto d = models::Decoder::create(models::default_decoder_shape(), rng);
  EXPECT_THROW(train::Trainer(small_config(), models::ModelBundle::create(1, d)), std::invalid_argument);
}

TEST(Step, ZeroLearningRateLeavesParameters) {
  auto c = small_config();
  const auto ds = dataset(c);
  train::Trainer t(c, models::ModelBundle::create(2, frozen_decoder()));
  std::mt19937_64 rng(3);
  const auto before = snapshot(t.bundle().all());
  const auto r = t.step(train::sample_batch(ds, c, rng), 0.0);
  EXPECT_EQ(snapshot(t.bundle().all()), before);
  EXPECT_TRUE(std::isfinite(r.total));
  EXPECT_GT(r.contrastive, 0.0);
  ASSERT_TRUE(r.reconstruction && r.alignment);
  EXPECT_NEAR(r.total, r.contrastive + c.alpha * *r.reconstruction + c.beta * *r.alignment, 1e-12);
  EXPECT_EQ(t.steps(), 1u);
}

TEST(Step, ZeroWeightsGiveHardNegativeGradients) {
  auto c = small_config();
  c.alpha = 0.0;
  c.beta = 0.0;
  const auto ds = dataset(c);
  std::mt19937_64 rng(3);
  const auto batch = train::sample_batch(ds, c, rng);
  auto bundle = models::ModelBundle::create(4, frozen_decoder());
  auto ps = bundle.trainable();

  for (auto* p : ps) p->zero_grad();
  {
    tensor::Graph g;
    auto loss = train::batch_loss(g, bundle, batch, c);
    EXPECT_FALSE(loss.components.reconstruction.has_value());
    EXPECT_FALSE(loss.components.alignment.has_value());
    g.backward(loss.total);
  }
  const auto via_trainer = grads(ps);

  for (auto* p : ps) p->zero_grad();
  {
    tensor::Graph g;
    const auto u = models::encode_image(g, bundle.image, batch.images);
    const auto v = models::encode_text(g, bundle.text, batch.captions);
    const auto n = models::encode_text(g, bundle.text, batch.negatives);
    const auto s = models::logit_scale(g, bundle.log_scale);
    g.backward(losses::hard_negative_contrastive_loss(u, v, n, s, false));
  }
  EXPECT_EQ(grads(ps), via_trainer);
}

TEST(Step, AdamWMatchesDenseOracle) {
  auto c = small_config();
  c.weight_decay = 0.1;
  const auto ds = dataset(c);
  std::mt19937_64 rng(3);
  const auto batch = train::sample_batch(ds, c, rng);
  const double lr = 0.01;

  // Clipped gradient of a twin bundle.
  auto twin = models::ModelBundle::create(5, frozen_decoder());
  auto tps = twin.trainable();
  for (auto* p : tps) p->zero_grad();
  {
    tensor::Graph g;
    g.backward(train::batch_loss(g, twin, batch, c).total);
  }
  tensor::clip_grad_norm(tps, c.clip_norm);

  train::Trainer t(c, models::ModelBundle::create(5, frozen_decoder()));
  t.step(batch, lr);
  auto ps = t.bundle().trainable();
  ASSERT_EQ(ps.size(), tps.size());

  // One Adam step from zero moments: the bias-corrected update is g/(|g|+eps).
  std::size_t untouched = 0;
  for (std::size_t i = 0; i < ps.size(); ++i) {
    const bool is_scale = tps[i] == &twin.log_scale;
    const double wd = is_scale ? 0.0 : c.weight_decay;
    for (std::size_t j = 0; j < ps[i]->size(); ++j) {
      const double w = tps[i]->values()[j], g = tps[i]->grad()[j];
      const double mhat = (1 - 0.9) * g / (1 - 0.9);
      const double vhat = (1 - 0.999) * g * g / (1 - 0.999);
      double expect = w - lr * (mhat / (std::sqrt(vhat) + 1e-8) + wd * w);
      if (is_scale) {
        expect = std::clamp(expect, std::log(models::kMinLogitScale), std::log(models::kMaxLogitScale));
      }
      ASSERT_NEAR(ps[i]->values()[j], expect, 1e-15 + 1e-12 * std::abs(expect)) << ps[i]->name() << "[" << j << "]";
      if (g == 0.0 && w != 0.0 && wd > 0.0) {
        // Dense update: decay still shrinks weights with no gradient.
        EXPECT_EQ(ps[i]->values()[j], w - lr * wd * w);
        ++untouched;
      }
    }
  }
  EXPECT_GT(untouched, 0u);
}

TEST(Step, SeparateAlignmentTemperature) {
  auto c = small_config();
  c.shared_temperature = false;
  const auto ds = dataset(c);
  train::Trainer t(c, models::ModelBundle::create(2, frozen_decoder()));
  ASSERT_NE(t.align_log_scale(), nullptr);
  EXPECT_EQ(t.align_log_scale()->values()[0], t.bundle().log_scale.values()[0]);
  std::mt19937_64 rng(3);
  t.step(train::sample_batch(ds, c, rng));
  t.step(train::sample_batch(ds, c, rng));
  EXPECT_NE(t.align_log_scale()->values()[0], t.bundle().log_scale.values()[0]);

  c.shared_temperature = true;
  train::Trainer shared(c, models::ModelBundle::create(2, frozen_decoder()));
  EXPECT_EQ(shared.align_log_scale(), nullptr);
}

TEST(Step, NonFiniteLossAbortsWithDiagnostic) {
  auto c = small_config();
  const auto ds = dataset(c);
  train::Trainer t(c, models::ModelBundle::create(2, frozen_decoder()));
  t.bundle().projector.values()[0] = std::numeric_limits<double>::quiet_NaN();
  const auto before = models::parameter_hash(t.bundle().all());
  std::mt19937_64 rng(3);
  try {
    t.step(train::sample_batch(ds, c, rng));
    FAIL() << "expected NumericError";
  } catch (const train::NumericError& e) {
    const std::string what = e.what();
    const auto at = what.find("reconstruction=");
    ASSERT_NE(at, std::string::npos) << what;
    EXPECT_NE(what.find("nan", at), std::string::npos) << what;
    EXPECT_NE(what.find("contrastive="), std::string::npos);
    EXPECT_NE(what.find("tau="), std::string::npos);
  }
  EXPECT_EQ(models::parameter_hash(t.bundle().all()), before);
  EXPECT_EQ(t.steps(), 0u);
}

TEST(Step, DeterministicOverHundredSteps) {
  auto c = small_config();
  const auto ds = dataset(c);
  auto trajectory = [&] {
    train::Trainer t(c, models::ModelBundle::create(6, frozen_decoder()));
    std::mt19937_64 rng(11);
    std::vector<double> losses;
    for (int i = 0; i < 100; ++i) losses.push_back(t.step(train::sample_batch(ds, c, rng)).total);
    return std::make_pair(losses, models::parameter_hash(t.bundle().all()));
  };
  const auto a = trajectory();
  const auto b = trajectory();
  EXPECT_EQ(a.first, b.first);
  EXPECT_EQ(a.second, b.second);
}

TEST(Step, DecoderUnchangedByTraining) {
  auto c = small_config();
  const auto ds = dataset(c);
  train::Trainer t(c, models::ModelBundle::create(6, frozen_decoder()));
  const auto h = models::parameter_hash(t.bundle().decoder_parameters());
  const auto trainable = models::parameter_hash(t.bundle().trainable());
  std::mt19937_64 rng(12);
  for (int i = 0; i < 20; ++i) {
    t.step(train::sample_batch(ds, c, rng));
    ASSERT_EQ(models::parameter_hash(t.bundle().decoder_parameters()), h);
  }
  EXPECT_NE(models::parameter_hash(t.bundle().trainable()), trainable);
}

TEST(Metrics, JsonKeysAndNulls) {
  train::EpochMetrics m;
  m.epoch = 2;
  m.loss_total = 1.5;
  m.loss_contrastive = 1.25;
  m.loss_align = 0.75;
  m.scores.acc_swap = 0.5;
  m.scores.trace.pos_pos = 0.9;
  m.scores.trace.pos1_neg = 0.2;
  m.scores.trace.pos2_neg = 0.4;
  m.tau = 0.07;
  EXPECT_EQ(train::metrics_json(m),
            "{\"epoch\":2,\"loss_total\":1.5,\"loss_contrastive\":1.25,\"loss_recon\":null,\"loss_align\":0.75,"
            "\"acc_swap\":0.5,\"acc_replace\":0.0,\"acc_itt\":0.0,\"acc_tot\":0.0,\"sim_pos_pos\":0.9,"
            "\"sim_pos_neg\":0.30000000000000004,\"tau\":0.07}");

  TempDir dir("readlab_metrics_test");
  std::filesystem::create_directories(dir.path);
  std::ofstream(dir.path / "m.jsonl") << train::metrics_json(m) << '\n';
  const auto back = train::read_metrics(dir.path / "m.jsonl");
  ASSERT_EQ(back.size(), 1u);
  EXPECT_FALSE(back[0].loss_recon.has_value());
  EXPECT_EQ(back[0].loss_align, 0.75);
  EXPECT_EQ(back[0].sim_pos_neg(), m.sim_pos_neg());
  EXPECT_EQ(train::metrics_json(back[0]), train::metrics_json(m));
}

TEST(Run, RejectsBadInputs) {
  auto c = small_config();
  const auto ds = dataset(c);
  const auto suites = tiny_suites(20, 40);
  std::mt19937_64 rng(1);
  auto unfrozen = models::Decoder::create(models::default_decoder_shape(), rng);
  EXPECT_THROW(train::run_training(c, ds, suites, unfrozen), std::invalid_argument);
  auto short_ds = ds;
  short_ds.pop_back();
  EXPECT_THROW(train::run_training(c, short_ds, suites, frozen_decoder()), train::ConfigError);
}

TEST(Run, ResumeReproducesLaterEpochs) {
  auto c = small_config(96, 16);
  c.epochs = 5;
  c.keep_checkpoints = true;
  const auto ds = dataset(c);
  const auto suites = tiny_suites(30, 41);
  const auto decoder = frozen_decoder();
  TempDir full("readlab_resume_full"), resumed("readlab_resume_part");

  train::RunOptions o;
  o.out_dir = full.path;
  const auto a = train::run_training(c, ds, suites, decoder, o);
  ASSERT_EQ(a.history.size(), 5u);
  for (std::size_t e = 1; e <= 5; ++e) EXPECT_TRUE(std::filesystem::exists(train::checkpoint_path(full.path, e)));

  std::filesystem::create_directories(resumed.path);
  const auto lines = read_file(full.path / "metrics.jsonl");
  std::ofstream(resumed.path / "metrics.jsonl", std::ios::binary) << lines;
  train::RunOptions r;
  r.out_dir = resumed.path;
  r.resume_from = train::checkpoint_path(full.path, 3);
  const auto b = train::run_training(c, ds, suites, decoder, r);
  ASSERT_EQ(b.history.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(train::metrics_json(b.history[i]), train::metrics_json(a.history[3 + i]));
  }
  EXPECT_EQ(read_file(resumed.path / "metrics.jsonl"), lines);
  EXPECT_EQ(models::parameter_hash(b.trainer->bundle().all()), models::parameter_hash(a.trainer->bundle().all()));

  auto other = c;
  other.lr = 1e-3;
  EXPECT_THROW(train::Trainer::load(train::checkpoint_path(full.path, 3), other), train::ConfigError);
}

TEST(Run, PrunesOldCheckpointsByDefault) {
  auto c = small_config(64, 16);
  c.epochs = 3;
  TempDir dir("readlab_prune_test");
  train::RunOptions o;
  o.out_dir = dir.path;
  train::run_training(c, dataset(c), tiny_suites(20, 42), frozen_decoder(), o);
  EXPECT_FALSE(std::filesystem::exists(train::checkpoint_path(dir.path, 1)));
  EXPECT_FALSE(std::filesystem::exists(train::checkpoint_path(dir.path, 2)));
  EXPECT_TRUE(std::filesystem::exists(train::checkpoint_path(dir.path, 3)));
  EXPECT_EQ(train::read_metrics(dir.path / "metrics.jsonl").size(), 3u);
}

TEST(Run, StopAfterKeepsTheFullSchedule) {
  auto c = small_config(64, 16);
  c.epochs = 4;
  train::RunOptions o;
  o.stop_after = 2;
  const auto r = train::run_training(c, dataset(c), tiny_suites(20, 43), frozen_decoder(), o);
  EXPECT_EQ(r.history.size(), 2u);
  EXPECT_EQ(r.trainer->steps(), 8u);
  EXPECT_EQ(r.trainer->epoch(), 2u);
}

TEST(Run, SkippedEvaluationsLeaveTrainingUnchanged) {
  auto c = small_config(64, 16);
  c.epochs = 3;
  const auto ds = dataset(c);
  const auto suites = tiny_suites(20, 45);
  TempDir dir("readlab_train_eval_epoch");
  const auto full = train::run_training(c, ds, suites, frozen_decoder());
  train::RunOptions o;
  o.out_dir = dir.path;
  o.evaluate_epoch = [](std::size_t e) { return e == 3; };
  const auto last = train::run_training(c, ds, suites, frozen_decoder(), o);
  ASSERT_EQ(last.history.size(), 1u);
  EXPECT_EQ(train::metrics_json(last.history[0]), train::metrics_json(full.history[2]));
  EXPECT_EQ(train::read_metrics(dir.path / "metrics.jsonl").size(), 1u);
  EXPECT_TRUE(std::filesystem::exists(train::checkpoint_path(dir.path, 3)));
  EXPECT_FALSE(std::filesystem::exists(train::checkpoint_path(dir.path, 2)));
}

TEST(Run, ContrastiveLossFallsByEpochFive) {
  // Toy defaults, first five of the thirty scheduled epochs.
  const TrainConfig base;
  const auto scenes = world::generate_scenes(base.scenes, 1);
  const auto ds = world::build_training_set(scenes, train::dataset_options(base), 2);
  const auto suites = tiny_suites(30, 44);
  const auto decoder = frozen_decoder();
  double first = 0.0, fifth = 0.0;
  for (std::uint64_t seed : {0, 1, 2}) {
    auto c = base;
    c.seed = seed;
    train::RunOptions o;
    o.stop_after = 5;
    const auto r = train::run_training(c, ds, suites, decoder, o);
    first += r.history.front().loss_contrastive / 3.0;
    fifth += r.history.back().loss_contrastive / 3.0;
  }
  EXPECT_LT(fifth, first);
}
