#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>

#include "dpc/policy.hpp"

namespace {

using dpc::ConditioningVector;
using dpc::DiscretePose;
using dpc::PolicyDims;
using dpc::PolicyParams;
using dpc::Rng;
using dpc::TrainConfig;
using dpc::TrainSample;

PolicyDims tiny_dims() {
  PolicyDims d;
  d.d = 8;
  d.img = 12;
  d.emb = 4;
  d.n_cat = 4;
  d.rank = 2;
  return d;
}

std::vector<TrainSample> tiny_batch(const PolicyParams& p, int n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<TrainSample> out;
  for (int i = 0; i < n; ++i) {
    TrainSample s;
    s.img.resize(p.dims.img);
    for (int k = 0; k < p.dims.img; ++k) s.img(k) = rng.uniform(-1.0, 1.0);
    s.category = rng.uniform_int(0, p.dims.n_cat - 1);
    ConditioningVector cv;
    if (i % 2 == 1) {
      cv.failure = dpc::FailureType::Rotation;
      DiscretePose prev;
      for (int h = 0; h < 9; ++h) prev.bins[h] = rng.uniform_int(-49, 50);
      cv.prev = prev;
    }
    s.cond = cv.encode(p.dims);
    if (i % 3 != 2) {
      s.has_pose = true;
      for (int h = 0; h < 9; ++h) s.target[h] = rng.uniform_int(0, 99);
    }
    if (i % 3 != 0) s.failure_label = rng.uniform_int(0, p.dims.n_fail - 1);
    out.push_back(std::move(s));
  }
  return out;
}

// central finite difference of the batch loss wrt one coordinate
double fd_loss(PolicyParams& p, double* coord, const std::vector<TrainSample>& batch,
               bool adapter_only, double h) {
  const double saved = *coord;
  *coord = saved + h;
  const double up = dpc::batch_gradients(p, batch, adapter_only).loss;
  *coord = saved - h;
  const double dn = dpc::batch_gradients(p, batch, adapter_only).loss;
  *coord = saved;
  return (up - dn) / (2 * h);
}

void check_group(PolicyParams& p, Eigen::MatrixXd& param, const Eigen::MatrixXd& analytic,
                 const std::vector<TrainSample>& batch, bool adapter_only, const char* name) {
  Rng rng(dpc::hash_label(name));
  const int checks = std::min<int>(20, static_cast<int>(param.size()));
  for (int i = 0; i < checks; ++i) {
    const int r = rng.uniform_int(0, static_cast<int>(param.rows()) - 1);
    const int c = rng.uniform_int(0, static_cast<int>(param.cols()) - 1);
    const double num = fd_loss(p, &param(r, c), batch, adapter_only, 1e-5);
    const double ana = analytic(r, c);
    const double scale = std::max({std::fabs(num), std::fabs(ana), 1e-5});
    EXPECT_LE(std::fabs(num - ana) / scale, 1e-4)
        << name << "(" << r << "," << c << ") analytic " << ana << " numeric " << num;
  }
}

void check_group(PolicyParams& p, Eigen::VectorXd& param, const Eigen::VectorXd& analytic,
                 const std::vector<TrainSample>& batch, bool adapter_only, const char* name) {
  Rng rng(dpc::hash_label(name));
  const int checks = std::min<int>(20, static_cast<int>(param.size()));
  for (int i = 0; i < checks; ++i) {
    const int r = rng.uniform_int(0, static_cast<int>(param.size()) - 1);
    const double num = fd_loss(p, &param(r), batch, adapter_only, 1e-5);
    const double ana = analytic(r);
    const double scale = std::max({std::fabs(num), std::fabs(ana), 1e-5});
    EXPECT_LE(std::fabs(num - ana) / scale, 1e-4)
        << name << "(" << r << ") analytic " << ana << " numeric " << num;
  }
}

TEST(Policy, GradientsMatchFiniteDifferencesFull) {
  PolicyParams p = dpc::init_policy(tiny_dims(), {1, 1, 1, 0}, 11);
  // nonzero adapters so the effective head differs from the base
  Rng arng(7);
  for (Eigen::Index i = 0; i < p.adapters.B.size(); ++i)
    p.adapters.B.data()[i] = arng.normal() * 0.05;
  const auto batch = tiny_batch(p, 6, 21);
  auto g = dpc::batch_gradients(p, batch, false);
  check_group(p, p.W1, g.W1, batch, false, "W1");
  check_group(p, p.b1, g.b1, batch, false, "b1");
  check_group(p, p.W2, g.W2, batch, false, "W2");
  check_group(p, p.b2, g.b2, batch, false, "b2");
  check_group(p, p.head_W, g.head_W, batch, false, "head_W");
  check_group(p, p.head_b, g.head_b, batch, false, "head_b");
  check_group(p, p.detect_W, g.detect_W, batch, false, "detect_W");
  check_group(p, p.detect_b, g.detect_b, batch, false, "detect_b");
  check_group(p, p.task_emb, g.task_emb, batch, false, "task_emb");
}

TEST(Policy, GradientsMatchFiniteDifferencesAdapterOnly) {
  PolicyParams p = dpc::init_policy(tiny_dims(), {1, 1, 1, 0}, 13);
  Rng arng(8);
  for (Eigen::Index i = 0; i < p.adapters.B.size(); ++i)
    p.adapters.B.data()[i] = arng.normal() * 0.05;
  const auto batch = tiny_batch(p, 6, 22);
  auto g = dpc::batch_gradients(p, batch, true);
  check_group(p, p.adapters.A, g.A, batch, true, "adapters.A");
  check_group(p, p.adapters.B, g.B, batch, true, "adapters.B");
  check_group(p, p.adapters.bias, g.bias, batch, true, "adapters.bias");
  // frozen groups report zero gradient
  EXPECT_EQ(g.W1.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(g.head_W.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(g.task_emb.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Policy, ZeroWeightsPredictSmallestBin) {
  PolicyParams p = dpc::init_policy(PolicyDims{}, std::vector<std::uint8_t>(12, 1), 3);
  p.W1.setZero();
  p.b1.setZero();
  p.W2.setZero();
  p.b2.setZero();
  p.head_W.setZero();
  p.head_b.setZero();
  p.adapters.A.setZero();
  p.adapters.B.setZero();
  p.adapters.bias.setZero();
  const auto st = dpc::sample_scene(dpc::CategoryTable::builtin(), 0, 5);
  const auto pred = dpc::predict(p, dpc::render(st), 0);
  for (int h = 0; h < 9; ++h) EXPECT_EQ(pred.pose.bins[h], -49);
}

TEST(Policy, PredictDeterministicAndZeroCondInvariant) {
  PolicyParams p = dpc::init_policy(PolicyDims{}, std::vector<std::uint8_t>(12, 1), 4);
  const auto st = dpc::sample_scene(dpc::CategoryTable::builtin(), 1, 6);
  const auto obs = dpc::render(st);
  const auto a = dpc::predict(p, obs, 1);
  const auto b = dpc::predict(p, obs, 1);
  EXPECT_EQ(a.pose.bins, b.pose.bins);
  for (int h = 0; h < 9; ++h)
    for (int k = 0; k < 100; ++k) EXPECT_EQ(a.logits[h][k], b.logits[h][k]);

  ConditioningVector zero;
  EXPECT_TRUE(zero.empty());
  EXPECT_EQ(zero.encode(p.dims).cwiseAbs().maxCoeff(), 0.0);
  const auto c = dpc::predict(p, obs, 1, zero);
  EXPECT_EQ(a.pose.bins, c.pose.bins);
}

TEST(Policy, UnseenCategoryUsesMeanEmbedding) {
  std::vector<std::uint8_t> seen(12, 1);
  seen[8] = seen[9] = seen[10] = seen[11] = 0;
  PolicyParams p = dpc::init_policy(PolicyDims{}, seen, 5);
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(p.dims.emb);
  for (int c = 0; c < 8; ++c) mean += p.task_emb.row(c).transpose();
  mean /= 8.0;
  EXPECT_LT((dpc::embedding_for(p, 9) - mean).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_EQ(dpc::embedding_for(p, 2), p.task_emb.row(2).transpose());
  EXPECT_THROW(dpc::embedding_for(p, 12), dpc::UnknownCategory);
}

TEST(Policy, MemorizesSingleSample) {
  PolicyDims dims;
  dims.d = 64;
  PolicyParams p = dpc::init_policy(dims, std::vector<std::uint8_t>(12, 1), 17);
  const auto st = dpc::sample_scene(dpc::CategoryTable::builtin(), 2, 31);
  const auto obs = dpc::render(st);
  DiscretePose target;
  Rng trng(9);
  for (int h = 0; h < 9; ++h) target.bins[h] = trng.uniform_int(-49, 50);
  std::vector<TrainSample> data{dpc::make_train_sample(p, obs, 2, {}, target)};
  TrainConfig cfg;
  cfg.learning_rate = 0.05;
  cfg.batch_size = 1;
  cfg.epochs = 300;
  const auto res = dpc::train(p, data, cfg);
  EXPECT_LT(res.final_loss, 0.01);
  const auto pred = dpc::predict(res.params, obs, 2);
  EXPECT_EQ(pred.pose.bins, target.bins);
}

TEST(Policy, ZeroLearningRateIsNoOp) {
  PolicyParams p = dpc::init_policy(tiny_dims(), {1, 1, 0, 0}, 19);
  const auto data = tiny_batch(p, 8, 23);
  TrainConfig cfg;
  cfg.learning_rate = 0.0;
  cfg.epochs = 2;
  const auto res = dpc::train(p, data, cfg);
  EXPECT_TRUE(dpc::params_equal(p, res.params));
}

TEST(Policy, TrainingReducesLossAcrossSeeds) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    PolicyParams p = dpc::init_policy(tiny_dims(), {1, 1, 1, 0}, 100 + seed);
    const auto data = tiny_batch(p, 40, 200 + seed);
    const double before = dpc::batch_gradients(p, data, false).loss;
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.seed = seed;
    const auto res = dpc::train(p, data, cfg);
    const double after = dpc::batch_gradients(res.params, data, false).loss;
    EXPECT_LE(after, before) << "seed " << seed;
  }
}

TEST(Policy, AdapterOnlyLeavesBaseUntouched) {
  PolicyParams p = dpc::init_policy(tiny_dims(), {1, 1, 1, 0}, 29);
  const auto data = tiny_batch(p, 16, 31);
  TrainConfig cfg;
  cfg.adapter_only = true;
  cfg.epochs = 3;
  const auto res = dpc::train(p, data, cfg);
  EXPECT_TRUE(dpc::base_params_equal(p, res.params));
  // and the adapters actually moved
  EXPECT_FALSE(res.params.adapters.B == p.adapters.B);
}

TEST(Policy, SoftmaxNormalizes) {
  Rng rng(41);
  std::array<double, 100> logits;
  for (auto& v : logits) v = rng.uniform(-30.0, 30.0);
  const auto p = dpc::softmax_head(logits);
  double sum = 0;
  for (double v : p) sum += v;
  EXPECT_NEAR(sum, 1.0, 1e-9);
}

TEST(Policy, EntropyKnownValues) {
  dpc::PoseLogits uniform{};
  EXPECT_NEAR(dpc::prediction_entropy(uniform), 9.0 * std::log(100.0), 1e-9);

  dpc::PoseLogits onehot{};
  for (int h = 0; h < 9; ++h) {
    for (int b = 0; b < 100; ++b) onehot[h][b] = -1e6;
    onehot[h][7] = 1e6;
  }
  EXPECT_NEAR(dpc::prediction_entropy(onehot), 0.0, 1e-9);
}

TEST(Policy, ArgmaxTieBreaksTowardSmallerBin) {
  dpc::PoseLogits logits{};
  logits[3][40] = 5.0;
  logits[3][60] = 5.0;  // tie: the lower index wins
  const auto dp = dpc::decode_logits(logits);
  EXPECT_EQ(dp.bins[3], 40 + dpc::kBinLo);
  EXPECT_EQ(dp.bins[0], -49);
}

TEST(Policy, CheckpointRoundTripsExactly) {
  PolicyParams p = dpc::init_policy(tiny_dims(), {1, 0, 1, 0}, 53);
  // dirty the adapters + a training step so values are not init-patterned
  const auto data = tiny_batch(p, 8, 55);
  TrainConfig cfg;
  cfg.epochs = 1;
  p = dpc::train(p, data, cfg).params;

  const std::string path = "/tmp/dpc_ckpt_test.json";
  dpc::save_policy(p, path);
  const PolicyParams q = dpc::load_policy(path);
  EXPECT_TRUE(dpc::params_equal(p, q));
  EXPECT_EQ(q.rng_seed, p.rng_seed);
  EXPECT_EQ(dpc::policy_to_json(p).dump(), dpc::policy_to_json(q).dump());
  std::remove(path.c_str());
}

TEST(Policy, ShapeAndFiniteGuards) {
  PolicyParams p = dpc::init_policy(tiny_dims(), {1, 1, 1, 0}, 61);
  Eigen::VectorXd bad_img = Eigen::VectorXd::Zero(p.dims.img + 1);
  ConditioningVector cv;
  EXPECT_THROW(dpc::assemble_input(p, bad_img, 0, cv.encode(p.dims)), dpc::ShapeMismatch);
  EXPECT_THROW(dpc::train(p, {}, TrainConfig{}), dpc::ShapeMismatch);

  auto batch = tiny_batch(p, 2, 63);
  p.head_b(5) = std::numeric_limits<double>::infinity();
  EXPECT_THROW(dpc::batch_gradients(p, batch, false), dpc::NonFiniteLoss);
}

}  // namespace
