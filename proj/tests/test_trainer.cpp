#include <algorithm>
#include <cmath>
#include <random>
#include <set>
#include <vector>

#include "asldn/trainer.hpp"
#include "support.hpp"

using namespace asldn;

namespace {

NetworkParameters<double> scalar_param(double v) {
  NetworkParameters<double> p;
  p.add("theta", Tensor<double>(Shape{1}, v));
  return p;
}

double step(NetworkParameters<double>& p, AdamState<double>& s, double g) {
  const double before = p[0].tensor[0];
  std::vector<Tensor<double>> grads{Tensor<double>(Shape{1}, g)};
  adam_step<double>(p, grads, s);
  return p[0].tensor[0] - before;
}

// Per-pixel samples for the constant-predictor harness: `count` targets of
// shape [1,H,W], stored as training pairs with an all-zero input.
std::vector<TrainingPair<double>> harness_pairs(const std::vector<Tensor<double>>& targets) {
  std::vector<TrainingPair<double>> pairs;
  for (const auto& t : targets) pairs.push_back({Tensor<double>(t.shape()), t});
  return pairs;
}

Tensor<double> fit_bias_image(const std::vector<Tensor<double>>& targets, LossKind loss,
                              std::size_t epochs, double lr = 1e-3) {
  NetworkParameters<double> p;
  const auto& s = targets.front().shape();
  p.add("bias_image", Tensor<double>(Shape{1, s[0], s[1], s[2]}));
  TrainConfig tc;
  tc.loss = loss;
  tc.batch_size = targets.size();
  tc.micro_batch = targets.size();
  tc.epochs = epochs;
  tc.seed = 3;
  tc.adam.lr = lr;
  AdamState<double> state(p, tc.adam);
  const auto pairs = harness_pairs(targets);
  train(BiasImagePredictor<double>{}, p, std::span<const TrainingPair<double>>(pairs), tc, state);
  return p[0].tensor;
}

std::vector<Tensor<double>> draw_targets(std::size_t count, std::mt19937_64& rng) {
  std::vector<Tensor<double>> out;
  std::gamma_distribution<double> skewed(2.0, 0.2);  // mean and median differ
  for (std::size_t k = 0; k < count; ++k) {
    Tensor<double> t(Shape{1, 3, 4});
    for (auto& v : t.values()) v = skewed(rng);
    out.push_back(t);
  }
  return out;
}

double pixel_mean(const std::vector<Tensor<double>>& ts, std::size_t i) {
  double s = 0;
  for (const auto& t : ts) s += t[i];
  return s / static_cast<double>(ts.size());
}

double pixel_median(const std::vector<Tensor<double>>& ts, std::size_t i) {
  std::vector<double> v;
  for (const auto& t : ts) v.push_back(t[i]);
  std::sort(v.begin(), v.end());
  return v.size() % 2 ? v[v.size() / 2] : 0.5 * (v[v.size() / 2 - 1] + v[v.size() / 2]);
}

}  // namespace

TEST(Adam, FirstStepMovesByLearningRate) {
  for (double g : {1e-5, -0.3, 5.0, -1e4}) {
    auto p = scalar_param(1.0);
    AdamState<double> s(p, AdamHyper{});
    const double d = step(p, s, g);
    EXPECT_GE(std::abs(d), 0.000999) << g;
    EXPECT_LE(std::abs(d), 0.001) << g;
    EXPECT_EQ(d < 0, g > 0);
    EXPECT_EQ(s.step, 1u);
  }
}

TEST(Adam, ZeroGradientNeverMoves) {
  auto p = scalar_param(0.25);
  AdamState<double> s(p, AdamHyper{});
  for (int k = 0; k < 100; ++k) EXPECT_EQ(step(p, s, 0.0), 0.0);
  EXPECT_EQ(p[0].tensor[0], 0.25);
  EXPECT_EQ(s.step, 100u);
}

TEST(Adam, ConvergesOnScalarQuadratic) {
  auto p = scalar_param(0.0);
  AdamState<double> s(p, AdamHyper{0.01});
  for (int k = 0; k < 5000; ++k) step(p, s, 2.0 * (p[0].tensor[0] - 3.0));
  EXPECT_NEAR(p[0].tensor[0], 3.0, 1e-3);
}

TEST(Adam, StepBoundedByLrForConstantMagnitudeGradients) {
  std::mt19937_64 rng(10);
  std::bernoulli_distribution sign(0.5);
  std::uniform_real_distribution<double> mag(1e-3, 1e3);
  for (int run = 0; run < 50; ++run) {
    auto p = scalar_param(0.0);
    AdamState<double> s(p, AdamHyper{});
    const double m = mag(rng);
    for (int k = 0; k < 200; ++k) EXPECT_LE(std::abs(step(p, s, sign(rng) ? m : -m)), 1e-3 * (1 + 1e-12));
  }
}

TEST(Adam, StepBoundedByBiasCorrectedRatioInGeneral) {
  // |m_hat / sqrt(v_hat)| <= (1 - b1) / sqrt(1 - b2) for any gradient sequence.
  const double bound = 1e-3 * (1 - 0.9) / std::sqrt(1 - 0.999);
  std::mt19937_64 rng(11);
  std::cauchy_distribution<double> heavy(0.0, 1.0);
  for (int run = 0; run < 50; ++run) {
    auto p = scalar_param(0.0);
    AdamState<double> s(p, AdamHyper{});
    for (int k = 0; k < 300; ++k) EXPECT_LE(std::abs(step(p, s, heavy(rng))), bound * (1 + 1e-9));
  }
}

TEST(Adam, SpikeAfterQuietPeriodExceedsLr) {
  auto p = scalar_param(0.0);
  AdamState<double> s(p, AdamHyper{});
  for (int k = 0; k < 5000; ++k) step(p, s, 1e-6);
  const double d = std::abs(step(p, s, 1.0));
  EXPECT_GT(d, 3.0e-3);
  EXPECT_LT(d, 3.17e-3);
}

TEST(Adam, MissingGradientIsAnError) {
  auto p = scalar_param(0.0);
  AdamState<double> s(p, AdamHyper{});
  std::vector<Tensor<double>> none;
  EXPECT_ERROR_CODE(adam_step<double>(p, none, s), ErrorCode::MissingGradient);
  std::vector<Tensor<double>> empty(1);
  EXPECT_ERROR_CODE(adam_step<double>(p, empty, s), ErrorCode::MissingGradient);
  EXPECT_EQ(s.step, 0u);
}

TEST(Trainer, ParseLossKind) {
  EXPECT_EQ(parse_loss_kind("l1"), LossKind::L1);
  EXPECT_EQ(parse_loss_kind("L2"), LossKind::L2);
  EXPECT_ERROR_CODE(parse_loss_kind("huber"), ErrorCode::InvalidArgument);
}

TEST(Trainer, EpochOrderIsASeededPermutation) {
  const auto a = epoch_order(40, 5, 1, true);
  EXPECT_EQ(a, epoch_order(40, 5, 1, true));
  EXPECT_NE(a, epoch_order(40, 5, 2, true));
  EXPECT_EQ(std::set<std::size_t>(a.begin(), a.end()).size(), 40u);
  const auto id = epoch_order(5, 5, 1, false);
  EXPECT_EQ(id, (std::vector<std::size_t>{0, 1, 2, 3, 4}));
}

TEST(Harness, L2ConvergesToSampleMean) {
  std::mt19937_64 rng(21);
  const auto targets = draw_targets(15, rng);
  const auto fit = fit_bias_image(targets, LossKind::L2, 3000);
  for (std::size_t i = 0; i < fit.size(); ++i) EXPECT_NEAR(fit[i], pixel_mean(targets, i), 1e-2);
}

TEST(Harness, L1ConvergesToSampleMedian) {
  std::mt19937_64 rng(22);
  const auto targets = draw_targets(15, rng);
  const auto fit = fit_bias_image(targets, LossKind::L1, 3000);
  for (std::size_t i = 0; i < fit.size(); ++i) EXPECT_NEAR(fit[i], pixel_median(targets, i), 2e-2);
}

TEST(Harness, L1ResistsOutlierContamination) {
  std::mt19937_64 rng(23);
  std::normal_distribution<double> clean(0.5, 0.05);
  std::vector<Tensor<double>> targets;
  for (int k = 0; k < 41; ++k) {
    Tensor<double> t(Shape{1, 2, 2});
    for (auto& v : t.values()) v = clean(rng);
    targets.push_back(t);
  }
  std::vector<double> clean_median, clean_mean;
  for (std::size_t i = 0; i < 4; ++i) {
    clean_median.push_back(pixel_median(targets, i));
    clean_mean.push_back(pixel_mean(targets, i));
  }
  // Replace 10% of the references by large positive outliers.
  for (int k = 0; k < 4; ++k)
    for (auto& v : targets[static_cast<std::size_t>(k)].values()) v += 10.0;
  const auto l1 = fit_bias_image(targets, LossKind::L1, 2000);
  const auto l2 = fit_bias_image(targets, LossKind::L2, 4000, 1e-2);
  for (std::size_t i = 0; i < 4; ++i) {
    const double contaminated_mean = pixel_mean(targets, i);
    const double bias = contaminated_mean - clean_mean[i];  // 40/41 analytically
    EXPECT_NEAR(bias, 40.0 / 41.0, 1e-12);
    EXPECT_NEAR(l1[i], clean_median[i], 2e-2);
    EXPECT_NEAR(l2[i], contaminated_mean, 1e-2);
    EXPECT_GE(l2[i] - clean_mean[i], 0.99 * bias);
  }
}

TEST(Trainer, MicroBatchingMatchesFullBatchGradient) {
  std::mt19937_64 rng(30);
  const auto targets = draw_targets(10, rng);
  const auto pairs = harness_pairs(targets);
  auto run = [&](std::size_t micro) {
    NetworkParameters<double> p;
    p.add("bias_image", Tensor<double>(Shape{1, 1, 3, 4}, 0.1));
    TrainConfig tc;
    tc.loss = LossKind::L2;
    tc.batch_size = 4;
    tc.micro_batch = micro;
    tc.epochs = 3;
    AdamState<double> s(p, tc.adam);
    train(BiasImagePredictor<double>{}, p, std::span<const TrainingPair<double>>(pairs), tc, s);
    return p[0].tensor;
  };
  const auto full = run(4), micro = run(1), odd = run(3);
  for (std::size_t i = 0; i < full.size(); ++i) {
    EXPECT_NEAR(full[i], micro[i], 1e-12);
    EXPECT_NEAR(full[i], odd[i], 1e-12);
  }
}

TEST(Trainer, KeepsPartialLastBatchAndIsDeterministic) {
  std::mt19937_64 rng(31);
  const auto targets = draw_targets(10, rng);
  const auto pairs = harness_pairs(targets);
  auto run = [&] {
    NetworkParameters<double> p;
    p.add("bias_image", Tensor<double>(Shape{1, 1, 3, 4}));
    TrainConfig tc;
    tc.batch_size = 4;
    tc.epochs = 5;
    tc.seed = 99;
    AdamState<double> s(p, tc.adam);
    std::vector<std::size_t> epochs;
    auto r = train(BiasImagePredictor<double>{}, p, std::span<const TrainingPair<double>>(pairs), tc, s,
                   [&](const EpochSummary<double>& e) { epochs.push_back(e.epoch); });
    EXPECT_EQ(epochs, (std::vector<std::size_t>{1, 2, 3, 4, 5}));
    EXPECT_EQ(r.steps, 15u);  // ceil(10 / 4) per epoch
    EXPECT_EQ(s.step, 15u);
    return std::make_pair(r.epoch_loss, p[0].tensor);
  };
  const auto a = run(), b = run();
  EXPECT_EQ(a.first, b.first);
  EXPECT_EQ(a.second, b.second);
}

TEST(Trainer, Errors) {
  NetworkParameters<double> p;
  p.add("bias_image", Tensor<double>(Shape{1, 1, 2, 2}));
  AdamState<double> s(p, AdamHyper{});
  TrainConfig tc;
  std::vector<TrainingPair<double>> none;
  EXPECT_ERROR_CODE(train(BiasImagePredictor<double>{}, p, std::span<const TrainingPair<double>>(none), tc, s),
                    ErrorCode::InvalidArgument);

  std::vector<TrainingPair<double>> mixed{{Tensor<double>(Shape{1, 2, 2}), Tensor<double>(Shape{1, 2, 2})},
                                          {Tensor<double>(Shape{1, 3, 2}), Tensor<double>(Shape{1, 3, 2})}};
  EXPECT_ERROR_CODE(train(BiasImagePredictor<double>{}, p, std::span<const TrainingPair<double>>(mixed), tc, s),
                    ErrorCode::ShapeMismatch);

  std::vector<TrainingPair<double>> nan{
      {Tensor<double>(Shape{1, 2, 2}), Tensor<double>(Shape{1, 2, 2}, std::nan(""))}};
  EXPECT_ERROR_CODE(train(BiasImagePredictor<double>{}, p, std::span<const TrainingPair<double>>(nan), tc, s),
                    ErrorCode::NumericalFailure);

  tc.batch_size = 0;
  EXPECT_ERROR_CODE(tc.validate(), ErrorCode::InvalidArgument);
}

TEST(Trainer, L2LossDecreasesOnNoisyPairs) {
  std::mt19937_64 rng(40);
  std::normal_distribution<double> noise(0.0, 0.3);
  std::vector<TrainingPair<double>> pairs;
  for (int k = 0; k < 16; ++k) {
    Tensor<double> in(Shape{1, 3, 3}), ref(Shape{1, 3, 3});
    for (std::size_t i = 0; i < 9; ++i) {
      in[i] = 1.0 + noise(rng);
      ref[i] = 1.0 + noise(rng);
    }
    pairs.push_back({in, ref});
  }
  NetworkParameters<double> p;
  p.add("bias_image", Tensor<double>(Shape{1, 1, 3, 3}));
  TrainConfig tc;
  tc.loss = LossKind::L2;
  tc.batch_size = 4;
  tc.epochs = 50;
  tc.adam.lr = 0.01;
  AdamState<double> s(p, tc.adam);
  const auto r = train(BiasImagePredictor<double>{}, p, std::span<const TrainingPair<double>>(pairs), tc, s);
  EXPECT_LT(r.epoch_loss.back(), r.epoch_loss.front());
  for (double l : r.epoch_loss) EXPECT_GT(l, 0.0);
}
