#include <gtest/gtest.h>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <vector>

#include "u2flow/train.hpp"

namespace fs = std::filesystem;
using namespace u2flow;

namespace {

ModelConfig tiny_model() {
  ModelConfig m;
  m.feature_dim = 16;
  m.hidden_dim = 16;
  m.context_dim = 16;
  m.motion_dim = 16;
  m.head_dim = 16;
  m.feature_stride = 4;
  m.corr_levels = 2;
  m.corr_radius = 2;
  m.iterations = 2;
  return m;
}

std::vector<SynthSample> tiny_dataset(int count, uint64_t seed,
                                      int size = 32) {
  SynthConfig sc;
  sc.size = size;
  std::vector<SynthSample> out;
  for (int i = 0; i < count; ++i)
    out.push_back(generate_sample(seed + static_cast<uint64_t>(i), sc));
  return out;
}

TrainConfig quick_train(int steps) {
  TrainConfig tc;
  tc.model = tiny_model();
  tc.steps = steps;
  tc.batch_size = 2;
  tc.lr = 1e-4;
  tc.a1 = 0.5;
  tc.a2 = 1.0;
  tc.seed = 5;
  return tc;
}

std::string temp_dir(const char* leaf) {
  fs::path d = fs::temp_directory_path() / leaf;
  fs::create_directories(d);
  return d.string();
}

}  // namespace

TEST(AdamOptimizer, MatchesHandSteppedReference) {
  ParamStore store;
  store.add("a", {2}, {1.f, -2.f});
  store.add("b", {1}, {0.5f});
  Adam adam(store);
  const std::vector<std::vector<float>> g1 = {{0.3f, -0.1f}, {1.5f}};
  const std::vector<std::vector<float>> g2 = {{-0.2f, 0.4f}, {0.7f}};

  // Independent reference with the same update rule.
  std::vector<double> p = {1.0, -2.0, 0.5};
  std::vector<double> m(3, 0.0), v(3, 0.0);
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8, lr = 0.01;
  auto ref_step = [&](const std::vector<double>& grad, int t) {
    for (size_t j = 0; j < p.size(); ++j) {
      m[j] = b1 * m[j] + (1 - b1) * grad[j];
      v[j] = b2 * v[j] + (1 - b2) * grad[j] * grad[j];
      const double mh = m[j] / (1 - std::pow(b1, t));
      const double vh = v[j] / (1 - std::pow(b2, t));
      p[j] = static_cast<float>(p[j] - lr * mh / (std::sqrt(vh) + eps));
    }
  };
  adam.step(&store, g1, lr);
  ref_step({0.3, -0.1, 1.5}, 1);
  adam.step(&store, g2, lr);
  ref_step({-0.2, 0.4, 0.7}, 2);

  EXPECT_EQ(store.at("a").data[0], static_cast<float>(p[0]));
  EXPECT_EQ(store.at("a").data[1], static_cast<float>(p[1]));
  EXPECT_EQ(store.at("b").data[0], static_cast<float>(p[2]));
}

TEST(AdamOptimizer, ZeroGradientLeavesParametersUnchanged) {
  ParamStore store;
  store.add("w", {3}, {0.25f, -1.f, 3.f});
  Adam adam(store);
  adam.step(&store, {{0.f, 0.f, 0.f}}, 0.05);
  EXPECT_EQ(store.at("w").data, (std::vector<float>{0.25f, -1.f, 3.f}));
}

TEST(GradientClipping, ScalesOnlyAboveTheBound) {
  std::vector<std::vector<float>> g = {{3.f, 0.f}, {4.f}};  // norm 5
  EXPECT_EQ(clip_global_norm(&g, 10.0), 5.0);
  EXPECT_EQ(g[0][0], 3.f);

  const double pre = clip_global_norm(&g, 1.0);
  EXPECT_EQ(pre, 5.0);
  double sq = 0;
  for (const auto& v : g)
    for (float x : v) sq += static_cast<double>(x) * x;
  EXPECT_NEAR(std::sqrt(sq), 1.0, 1e-6);

  std::vector<std::vector<float>> h = {{3.f, 4.f}};
  clip_global_norm(&h, 0.0);  // disabled
  EXPECT_EQ(h[0][0], 3.f);
}

TEST(OneCycleSchedule, PeaksOnceAndEndsLow) {
  LrSchedule s;
  s.kind = LrSchedule::Kind::kOneCycle;
  s.base_lr = 1e-2;
  s.total_steps = 100;
  s.validate();
  int peaks = 0;
  double first = s.at(0), last = s.at(99);
  for (int t = 0; t < 100; ++t) {
    const double lr = s.at(t);
    EXPECT_LE(lr, s.base_lr);
    EXPECT_GT(lr, 0);
    if (lr == s.base_lr) ++peaks;
  }
  EXPECT_EQ(peaks, 1);
  EXPECT_LT(last, first);
  EXPECT_EQ(first, s.base_lr / s.div_factor);
  EXPECT_EQ(last, s.base_lr / s.final_div);

  LrSchedule c;
  c.total_steps = 10;
  c.base_lr = 3e-4;
  for (int t = 0; t < 10; ++t) EXPECT_EQ(c.at(t), 3e-4);
  EXPECT_THROW(c.at(10), ContractError);

  LrSchedule bad;
  bad.final_div = 2;  // must exceed div_factor
  EXPECT_THROW(bad.validate(), ContractError);
}

TEST(ConfigParsing, SectionsTypesAndComments) {
  const char* text =
      "# top comment\n"
      "[train]\n"
      "steps = 42\n"
      "lr = 2.5e-3\n"
      "schedule = constant\n"
      "; semicolon comment\n"
      "[model]\n"
      "feature_dim=24\n"
      "  [weights]  \n"
      "zeta = 0.9\n"
      "[flags]\n"
      "verbose = on\n"
      "quiet = false\n";
  const ConfigFile cf = ConfigFile::parse_string(text);
  EXPECT_EQ(cf.get_int("train", "steps", 0), 42);
  EXPECT_EQ(cf.get_double("train", "lr", 0), 2.5e-3);
  EXPECT_EQ(cf.get_string("train", "schedule", ""), "constant");
  EXPECT_EQ(cf.get_int("model", "feature_dim", 0), 24);
  EXPECT_EQ(cf.get_double("weights", "zeta", 0), 0.9);
  EXPECT_TRUE(cf.get_bool("flags", "verbose", false));
  EXPECT_FALSE(cf.get_bool("flags", "quiet", true));
  EXPECT_EQ(cf.get_int("train", "absent", 7), 7);
  EXPECT_THROW(cf.require_string("train", "absent"), FormatError);
}

TEST(ConfigParsing, RejectsMalformedInput) {
  EXPECT_THROW(ConfigFile::parse_string("steps = 1\n"), FormatError);
  EXPECT_THROW(ConfigFile::parse_string("[a]\nsteps\n"), FormatError);
  EXPECT_THROW(ConfigFile::parse_string("[a]\nk = 1\nk = 2\n"), FormatError);
  EXPECT_THROW(ConfigFile::parse_string("[]\n"), FormatError);
  EXPECT_THROW(ConfigFile::parse_string("[a\nk = 1\n"), FormatError);
  const ConfigFile cf = ConfigFile::parse_string("[a]\nk = x\n");
  EXPECT_THROW(cf.get_int("a", "k", 0), FormatError);
  EXPECT_THROW(cf.get_double("a", "k", 0), FormatError);
  EXPECT_THROW(cf.get_bool("a", "k", false), FormatError);
}

TEST(ConfigParsing, TrainConfigBindsSections) {
  const char* text =
      "[train]\n"
      "steps = 12\n"
      "batch_size = 3\n"
      "lr = 1e-3\n"
      "schedule = one_cycle\n"
      "a1 = 0.25\n"
      "a2 = 0.75\n"
      "use_hg = true\n"
      "seed = 99\n"
      "[model]\n"
      "feature_dim = 16\n"
      "hidden_dim = 16\n"
      "context_dim = 16\n"
      "motion_dim = 16\n"
      "head_dim = 16\n"
      "corr_radius = 2\n"
      "iterations = 3\n"
      "[weights]\n"
      "lambda_sm = 10\n"
      "zeta = 0.9\n"
      "[augment]\n"
      "noise_sigma = 0\n"
      "erase_count = 1\n";
  const TrainConfig tc = train_config_from(ConfigFile::parse_string(text));
  EXPECT_EQ(tc.steps, 12);
  EXPECT_EQ(tc.batch_size, 3);
  EXPECT_TRUE(tc.one_cycle);
  EXPECT_EQ(tc.a1, 0.25);
  EXPECT_EQ(tc.a2, 0.75);
  EXPECT_TRUE(tc.use_hg);
  EXPECT_EQ(tc.seed, 99u);
  EXPECT_EQ(tc.model.feature_dim, 16);
  EXPECT_EQ(tc.model.iterations, 3);
  EXPECT_EQ(tc.weights.lambda_sm, 10.f);
  EXPECT_EQ(tc.weights.zeta, 0.9f);
  EXPECT_EQ(tc.aug.noise_sigma, 0.f);
  EXPECT_EQ(tc.aug.erase_count, 1);
}

TEST(ModelCheckpoint, RoundTripsConfigAndParamsByteIdentically) {
  const ModelConfig cfg = tiny_model();
  const ParamStore params = init_model_params(cfg, 21);
  const std::string dir = temp_dir("u2flow_harness_ckpt");
  const std::string p1 = dir + "/a.ckpt", p2 = dir + "/b.ckpt";
  save_model_checkpoint(p1, params, cfg);
  save_model_checkpoint(p2, params, cfg);

  auto read_bytes = [](const std::string& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
  };
  EXPECT_EQ(read_bytes(p1), read_bytes(p2));

  const auto [loaded, lcfg] = load_model_checkpoint(p1);
  EXPECT_EQ(lcfg.feature_dim, cfg.feature_dim);
  EXPECT_EQ(lcfg.iterations, cfg.iterations);
  ASSERT_EQ(loaded.entries.size(), params.entries.size());
  for (size_t i = 0; i < params.entries.size(); ++i) {
    EXPECT_EQ(loaded.entries[i].name, params.entries[i].name);
    EXPECT_EQ(loaded.entries[i].data, params.entries[i].data);
  }
}

TEST(Training, DeterministicRunsProduceIdenticalLogsAndParams) {
  const auto data = tiny_dataset(2, 11);
  const TrainConfig tc = quick_train(4);
  ParamStore a = init_model_params(tc.model, tc.seed);
  ParamStore b = init_model_params(tc.model, tc.seed);
  const RunLog la = train(tc, data, &a);
  const RunLog lb = train(tc, data, &b);
  EXPECT_EQ(la.to_csv(), lb.to_csv());
  for (size_t i = 0; i < a.entries.size(); ++i)
    EXPECT_EQ(a.entries[i].data, b.entries[i].data) << a.entries[i].name;
  ASSERT_EQ(la.steps.size(), 4u);
  for (const auto& s : la.steps) {
    EXPECT_TRUE(std::isfinite(s.total));
    EXPECT_GT(s.total, 0.0);
    EXPECT_GT(s.grad_norm, 0.0);
  }
  // Augmentation terms activate at a1 = 0.5 of 4 steps.
  EXPECT_EQ(la.steps[0].ar, 0.0);
  EXPECT_EQ(la.steps[1].unc, 0.0);
  EXPECT_NE(la.steps[2].ar, 0.0);
  EXPECT_NE(la.steps[3].ar, 0.0);
}

TEST(Training, FullAugmentationDelayDisablesThoseTerms) {
  const auto data = tiny_dataset(1, 13);
  TrainConfig tc = quick_train(3);
  tc.a1 = 1.0;
  ParamStore params = init_model_params(tc.model, 3);
  const RunLog log = train(tc, data, &params);
  for (const auto& s : log.steps) {
    EXPECT_EQ(s.ar, 0.0);
    EXPECT_EQ(s.unc, 0.0);
    EXPECT_GT(s.photo, 0.0);
  }
}

TEST(Training, NonFiniteLossAbortsWithLastGoodCheckpoint) {
  const auto data = tiny_dataset(1, 17);
  TrainConfig tc = quick_train(3);
  tc.out_dir = temp_dir("u2flow_harness_abort");
  ParamStore params = init_model_params(tc.model, 3);
  // A hugely negative log-variance bias overflows exp(-alpha/2) in the
  // uncertainty objective the moment the augmented branch activates.
  params.at("cunc.c2.b").data[0] = -1e5f;
  EXPECT_THROW(train(tc, data, &params), TrainingFault);
  const auto [loaded, cfg] = load_model_checkpoint(tc.out_dir +
                                                   "/last_good.ckpt");
  EXPECT_EQ(cfg.feature_dim, tc.model.feature_dim);
  EXPECT_FALSE(loaded.entries.empty());
}

TEST(Evaluation, GroundTruthPredictionScoresPerfectly) {
  SynthConfig sc;
  sc.size = 32;
  const SynthSample s = generate_sample(23, sc);
  // Oracle uncertainty: the per-pixel true error (identically zero here).
  const ScalarMap em = epe_map(s.flow_fwd, s.flow_fwd);
  const SampleEval e =
      evaluate_prediction(s.flow_fwd, em, s.flow_fwd, s.occ_fwd);
  EXPECT_EQ(e.report.epe, 0.0);
  EXPECT_EQ(e.report.fl_all, 0.0);
  EXPECT_EQ(e.report.ause, 0.0);
  EXPECT_EQ(e.epe_occ, 0.0);
  EXPECT_EQ(e.epe_noc, 0.0);
}

TEST(Evaluation, OracleUncertaintyGivesZeroAuse) {
  SynthConfig sc;
  sc.size = 32;
  const SynthSample s = generate_sample(29, sc);
  FlowField pred = s.flow_fwd;
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<float> d(-1.5f, 1.5f);
  for (auto& v : pred.data) v += d(rng);
  const ScalarMap em = epe_map(pred, s.flow_fwd);
  const SampleEval e = evaluate_prediction(pred, em, s.flow_fwd, s.occ_fwd);
  EXPECT_GT(e.report.epe, 0.0);
  EXPECT_EQ(e.report.ause, 0.0);
  ASSERT_TRUE(e.report.spearman_cc.has_value());
  EXPECT_NEAR(*e.report.spearman_cc, 1.0, 1e-12);
}

TEST(Evaluation, AggregateIsValidPixelWeighted) {
  const ModelConfig cfg = tiny_model();
  const ParamStore params = init_model_params(cfg, 31);
  SynthConfig small, large;
  small.size = 32;
  large.size = 48;
  const std::vector<SynthSample> data = {generate_sample(1, small),
                                         generate_sample(2, large)};
  const DatasetEval ev = evaluate(params, cfg, data);
  ASSERT_EQ(ev.frames.size(), 2u);
  const auto& f0 = ev.frames[0];
  const auto& f1 = ev.frames[1];
  EXPECT_EQ(f0.valid, 32 * 32);
  EXPECT_EQ(f1.valid, 48 * 48);
  const double want =
      (f0.report.epe * static_cast<double>(f0.valid) +
       f1.report.epe * static_cast<double>(f1.valid)) /
      static_cast<double>(f0.valid + f1.valid);
  EXPECT_NEAR(ev.aggregate.report.epe, want, 1e-12);
  EXPECT_EQ(ev.aggregate.valid, f0.valid + f1.valid);
}

TEST(FusionEval, HugeThetaMakesFusionANoOp) {
  const ModelConfig cfg = tiny_model();
  const ParamStore model = init_model_params(cfg, 37);
  FusionNetConfig fc;
  fc.width = 16;
  const ParamStore fusion = init_fusion_params(fc, 41);
  SynthConfig sc;
  sc.size = 32;
  const std::vector<SynthSample> data = {generate_linear_triple(43, sc)};
  const FusionEvalReport rep = run_fusion_eval(model, cfg, fusion, data, 1e9f);
  EXPECT_EQ(rep.fused_uncertainty.epe_all, rep.unfused.epe_all);
  EXPECT_EQ(rep.fused_uncertainty.epe_occ, rep.unfused.epe_occ);
  EXPECT_EQ(rep.fused_uncertainty.fl_all, rep.unfused.fl_all);
}
