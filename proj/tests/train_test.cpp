#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

#include "fhnet/json_util.hpp"
#include "fhnet/optim.hpp"
#include "fhnet/synth.hpp"
#include "fhnet/train.hpp"

using namespace fhnet;
using namespace fhnet::train;
using fhnet::ad::Var;

namespace {

sigproc::WindowSpec toy_window() { return {32, 8, 16, sigproc::TargetAlignment::kTrailing}; }

std::vector<NamedRecord> toy_records(std::size_t count, std::size_t windows, std::uint64_t seed) {
  std::vector<NamedRecord> out;
  for (std::size_t i = 0; i < count; ++i) {
    synth::MixConfig c;
    c.seed = seed + i;
    c.duration_s = 1.0;
    auto rec = sigproc::preprocess(synth::mix_aecg(c));
    // the median stage needs more samples than a toy window span
    const std::size_t n = 32 + (windows - 1) * 16;
    for (auto& l : rec.leads) l.resize(n);
    rec.fecg_ref->resize(n);
    out.push_back({"rec" + std::to_string(i), std::move(rec)});
  }
  return out;
}

TrainConfig toy_train(std::size_t epochs, double lr, std::uint64_t seed) {
  TrainConfig t;
  t.epochs = epochs;
  t.lr = lr;
  t.seed = seed;
  t.window = toy_window();
  return t;
}

}  // namespace

TEST(Metrics, MseLoss) {
  auto a = Tensor::from({2}, {0.0, 0.0});
  auto b = Tensor::from({2}, {1.0, 1.0});
  EXPECT_EQ(mse_loss(ad::constant(b), ad::constant(b)).value().item(), 0.0);
  EXPECT_EQ(mse_loss(ad::constant(a), ad::constant(b)).value().item(), 1.0);
  EXPECT_THROW(mse_loss(ad::constant(a), ad::constant(Tensor::zeros({3}))), ShapeError);

  auto y = Tensor::from({4}, {0.3, -1.0, 2.0, 0.5});
  auto p = ad::leaf(Tensor::from({4}, {1.0, 0.0, -0.5, 0.25}));
  auto loss = mse_loss(p, ad::constant(y));
  ad::backward(loss);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(p.grad()[i], 2.0 * (p.value()[i] - y[i]) / 4.0, 1e-15);
  auto res = grad_check([&](const Var& v) { return mse_loss(v, ad::constant(y)); }, p.value());
  EXPECT_LT(res.max_rel_error, 1e-8);
}

TEST(Metrics, RmseAndRSquared) {
  const std::vector<double> y{0, 1, 2}, yh{0, 1, 1};
  EXPECT_NEAR(rmse(yh, y), std::sqrt(1.0 / 3.0), 1e-15);
  EXPECT_NEAR(*r_squared(yh, y), 0.5, 1e-15);
  EXPECT_EQ(rmse(y, y), 0.0);
  EXPECT_EQ(*r_squared(y, y), 1.0);
  EXPECT_EQ(*r_squared(std::vector<double>{1, 1, 1}, y), 0.0);
  EXPECT_FALSE(r_squared(y, std::vector<double>{4, 4, 4}).has_value());
  EXPECT_THROW(rmse(y, std::vector<double>{1}), ShapeError);
  EXPECT_THROW(r_squared(std::vector<double>{}, std::vector<double>{}), ShapeError);
}

TEST(Metrics, Invariances) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n;
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> y(30), yh(30), ys(30), yhs(30), yn(30), yhn(30);
    const double c = 10.0 * n(rng);
    for (std::size_t i = 0; i < 30; ++i) {
      y[i] = n(rng);
      yh[i] = y[i] + 0.3 * n(rng);
      ys[i] = y[i] + c;
      yhs[i] = yh[i] + c;
      yn[i] = -y[i];
      yhn[i] = -yh[i];
    }
    EXPECT_NEAR(*r_squared(yhs, ys), *r_squared(yh, y), 1e-12);
    EXPECT_EQ(rmse(yhn, yn), rmse(yh, y));
    EXPECT_LE(*r_squared(yh, y), 1.0);
  }
}

TEST(TrainConfig, JsonAndValidation) {
  auto t = TrainConfig::from_json(nlohmann::json::parse(R"({"epochs": 3, "window": {"t_in": 300, "t_out": 50}})"));
  EXPECT_EQ(t.epochs, 3u);
  EXPECT_EQ(t.batch_size, 32u);
  EXPECT_EQ(t.lr, 1e-4);
  EXPECT_EQ(t.clip, 5.0);
  EXPECT_EQ(t.window.label(), "300-50");
  EXPECT_EQ(TrainConfig::from_json(t.to_json()).to_json(), t.to_json());
  EXPECT_THROW(TrainConfig::from_json(nlohmann::json::parse(R"({"epoch": 3})")), ConfigError);
  EXPECT_THROW(TrainConfig::from_json(nlohmann::json::parse(R"({"epochs": 0})")), ConfigError);
  EXPECT_THROW(TrainConfig::from_json(nlohmann::json::parse(R"({"split": 1.0})")), ConfigError);
  EXPECT_THROW(TrainConfig::from_json(nlohmann::json::parse(R"({"lr": -1})")), ConfigError);
  EXPECT_THROW(TrainConfig::from_json(nlohmann::json::parse(R"({"window": {"alignment": "x"}})")), ConfigError);
  EXPECT_THROW(TrainConfig::from_json(nlohmann::json::parse(R"({"window": {"t_in": 10, "t_out": 20}})")), ConfigError);
}

TEST(Windows, TargetsAreNormalizedPerRecord) {
  auto recs = toy_records(2, 4, 1);
  auto set = make_windows(recs, toy_window());
  EXPECT_EQ(set.size(), 8u);
  ASSERT_EQ(set.names.size(), 2u);
  for (std::size_t r = 0; r < 2; ++r) {
    const auto& ref = *recs[r].record.fecg_ref;
    double mean = 0.0;
    for (double v : ref) mean += v / static_cast<double>(ref.size());
    EXPECT_NEAR(set.target_mean[r], mean, 1e-12);
  }
  // trailing alignment: window w covers samples [16w + 24, 16w + 32)
  const auto& ref = *recs[1].record.fecg_ref;
  EXPECT_NEAR(set.targets[5][0] * set.target_std[1] + set.target_mean[1], ref[16 + 24], 1e-12);
  EXPECT_EQ(set.record[5], 1u);

  auto no_ref = recs;
  no_ref[0].record.fecg_ref.reset();
  EXPECT_THROW(make_windows(no_ref, toy_window()), std::invalid_argument);
}

TEST(Train, ValidationLossImprovesAcrossSeeds) {
  auto c = model::ModelConfig::toy();
  int improved = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto recs = toy_records(2, 4, 10 * seed + 3);
    auto r = train::train(c, toy_train(2, 1e-4, seed), recs);
    ASSERT_EQ(r.epochs.size(), 2u);
    ASSERT_TRUE(r.epochs[1].validation_loss.has_value());
    if (*r.epochs[1].validation_loss <= *r.epochs[0].validation_loss) ++improved;
  }
  EXPECT_GE(improved, 4);
}

TEST(Train, DeterministicLogAndCheckpoint) {
  auto c = model::ModelConfig::toy();
  auto recs = toy_records(3, 3, 7);
  auto a = train::train(c, toy_train(2, 1e-3, 11), recs);
  auto b = train::train(c, toy_train(2, 1e-3, 11), recs);
  EXPECT_EQ(a.log.dump(), b.log.dump());
  EXPECT_EQ(model::serialize_checkpoint(a.best), model::serialize_checkpoint(b.best));
  EXPECT_EQ(model::serialize_checkpoint(a.last), model::serialize_checkpoint(b.last));
  auto other = train::train(c, toy_train(2, 1e-3, 12), recs);
  EXPECT_NE(model::serialize_checkpoint(other.last), model::serialize_checkpoint(a.last));
  EXPECT_EQ(a.log["train_records"].size(), 2u);
  EXPECT_EQ(a.log["validation_records"].size(), 1u);
  EXPECT_EQ(a.log.dump().find("wall"), std::string::npos);
}

TEST(Train, ZeroLearningRateLeavesParametersUnchanged) {
  auto c = model::ModelConfig::toy();
  auto recs = toy_records(2, 3, 21);
  auto r = train::train(c, toy_train(3, 0.0, 4), recs);
  EXPECT_EQ(r.last.params, model::init_params(c, 4));
  for (const auto& e : r.epochs) {
    EXPECT_NEAR(e.train_loss, r.epochs[0].train_loss, 1e-12);
    EXPECT_EQ(*e.validation_loss, *r.epochs[0].validation_loss);
  }
}

TEST(Train, RepeatedBatchLossMostlyDecreases) {
  auto c = model::ModelConfig::toy();
  auto recs = toy_records(1, 4, 31);
  auto r = train::train(c, toy_train(50, 1e-4, 2), recs);
  ASSERT_EQ(r.epochs.size(), 50u);
  EXPECT_EQ(r.log["selection"], "train_loss");
  int upticks = 0;
  for (std::size_t i = 1; i < r.epochs.size(); ++i)
    if (r.epochs[i].train_loss > r.epochs[i - 1].train_loss * (1.0 + 1e-9)) ++upticks;
  EXPECT_LE(upticks, 3);
  EXPECT_LT(r.epochs.back().train_loss, r.epochs.front().train_loss);
}

TEST(Train, OverfitsOneWindowAndEvaluatesIt) {
  auto c = model::ModelConfig::toy();
  // same-padded decoder convolutions see later teacher-forced inputs, which a rollout cannot supply
  c.causal_decoder_mstfe = true;
  auto recs = toy_records(1, 1, 41);
  auto t = toy_train(500, 3e-3, 5);
  t.clip = 0.0;
  double reached = std::numeric_limits<double>::infinity();
  std::size_t at = 0;
  auto r = train::train(c, t, recs, [&](const EpochStats& s) {
    if (s.train_loss < reached) reached = s.train_loss;
    if (!at && s.train_loss < 1e-4) at = s.epoch;
  });
  EXPECT_LT(reached, 1e-4);
  EXPECT_GT(at, 0u);
  auto report = evaluate(r.best, "ck", recs, toy_window());
  EXPECT_EQ(report["windows"], 1);
  EXPECT_GT(report["normalized"]["r2"].get<double>(), 0.99);
  EXPECT_GE(report["inverted"]["rmse"].get<double>(), 0.0);
}

TEST(Train, DivergenceGuardNamesEpochAndBatch) {
  auto c = model::ModelConfig::toy();
  auto recs = toy_records(2, 3, 51);
  try {
    train::train(c, toy_train(5, 1e300, 1), recs);
    FAIL() << "expected divergence";
  } catch (const TrainingDiverged& e) {
    EXPECT_GE(e.epoch(), 1u);
    EXPECT_GE(e.batch(), 1u);
    EXPECT_NE(std::string(e.what()).find("epoch"), std::string::npos);
  }
}

TEST(Train, RejectsBadDatasets) {
  auto c = model::ModelConfig::toy();
  EXPECT_THROW(train::train(c, toy_train(1, 1e-4, 0), std::vector<NamedRecord>{}), std::invalid_argument);
  auto recs = toy_records(1, 2, 61);
  auto wrong = toy_train(1, 1e-4, 0);
  wrong.window.t_in = 40;
  EXPECT_THROW(train::train(c, wrong, recs), std::invalid_argument);
  auto three = c;
  three.leads = 3;
  EXPECT_THROW(train::train(three, toy_train(1, 1e-4, 0), recs), std::invalid_argument);
}

TEST(Evaluate, ReportContract) {
  auto c = model::ModelConfig::toy();
  c.t_in = 300;
  c.t_out = 50;
  Checkpoint ck{c, model::init_params(c, 3), std::nullopt, {}};
  sigproc::WindowSpec spec{300, 50, 100, sigproc::TargetAlignment::kTrailing};
  synth::MixConfig mc;
  mc.duration_s = 400.0 / 250.0;
  std::vector<NamedRecord> recs{{"a.csv", sigproc::preprocess(synth::mix_aecg(mc))}};
  auto report = evaluate(ck, "0123456789abcdef", recs, spec);
  EXPECT_EQ(report["window_spec"], "300-50");
  EXPECT_EQ(report["checkpoint_id"], "0123456789abcdef");
  EXPECT_EQ(report["windows"], 2);
  EXPECT_TRUE(report["wall_clock_s"].is_null());
  for (const char* scale : {"normalized", "inverted"}) {
    const auto& s = report[scale];
    EXPECT_GE(s["rmse"].get<double>(), 0.0);
    EXPECT_LE(s["r2"].get<double>(), 1.0);
    EXPECT_TRUE(s.contains("r2_concatenated"));
  }
  ASSERT_EQ(report["records"].size(), 1u);
  EXPECT_EQ(report["records"][0]["name"], "a.csv");
  EXPECT_EQ(report.dump(), evaluate(ck, "0123456789abcdef", recs, spec).dump());
  EXPECT_TRUE(evaluate(ck, "x", recs, spec, {true})["wall_clock_s"].is_number());

  EXPECT_THROW(evaluate(ck, "x", std::vector<NamedRecord>{}, spec), std::invalid_argument);
  EXPECT_THROW(evaluate(ck, "x", recs, toy_window()), std::invalid_argument);
  recs[0].record.fecg_ref.reset();
  EXPECT_THROW(evaluate(ck, "x", recs, spec), std::invalid_argument);
}
