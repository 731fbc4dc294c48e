#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "nfgen/detect.hpp"
#include "nfgen/error.hpp"
#include "oracles.hpp"

using namespace nfgen;

namespace {

DetectionExample attack_example(int window, int onset, int end, double per_minute = 1.0) {
  DetectionExample ex;
  ex.label = 1;
  ex.type = AttackType::dns;
  ex.marks.assign(static_cast<std::size_t>(window), 0);
  ex.volume.assign(static_cast<std::size_t>(window), per_minute);
  for (int t = onset; t < end; ++t) ex.marks[static_cast<std::size_t>(t)] = 1;
  ex.onset = onset;
  ex.end = end;
  return ex;
}

DetectionExample normal_example(int window, int customer = 0) {
  DetectionExample ex;
  ex.customer = customer;
  ex.marks.assign(static_cast<std::size_t>(window), 0);
  ex.volume.assign(static_cast<std::size_t>(window), 1.0);
  return ex;
}

}  // namespace

TEST(Cusum, StepChangeDetectedAtStep) {
  std::vector<double> ref;
  for (int i = 0; i < 30; ++i) ref.push_back(i % 2 ? 11.0 : 9.0);  // mu 10, sigma 1
  std::vector<double> x(20, 10.0);
  for (int t = 10; t < 20; ++t) x[static_cast<std::size_t>(t)] = 100.0;
  const auto r = cusum_onset(ref, x);
  EXPECT_DOUBLE_EQ(r.mu, 10.0);
  EXPECT_DOUBLE_EQ(r.sigma, 1.0);
  ASSERT_TRUE(r.onset);
  EXPECT_EQ(*r.onset, 10);
}

TEST(Cusum, MatchesLiteralRecursion) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(50, 5);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> ref(60), x(30);
    for (auto& v : ref) v = n(rng);
    for (auto& v : x) v = n(rng) + (trial % 3 == 0 ? 0.0 : 8.0);
    const auto r = cusum_onset(ref, x, 0.5, 5.0);
    EXPECT_EQ(r.onset, oracle::cusum_oracle(x, r.mu, r.sigma, 0.5, 5.0));
  }
}

TEST(Cusum, FlatReferenceAndShortReference) {
  const std::vector<double> flat(20, 0.0);
  const auto r = cusum_onset(flat, std::vector<double>{0, 0, 7});
  EXPECT_TRUE(r.sigma_substituted);
  EXPECT_DOUBLE_EQ(r.sigma, 1.0);
  EXPECT_EQ(r.onset, 2);
  EXPECT_THROW(cusum_onset(std::vector<double>(5, 1.0), flat), ValidationError);
}

TEST(Survival, ProductAndMonotone) {
  const std::vector<double> h{0.1, 0.5, 0.0, 1.0};
  const auto s = survival_from_hazards(h);
  EXPECT_DOUBLE_EQ(s[0], 0.9);
  EXPECT_DOUBLE_EQ(s[1], 0.45);
  EXPECT_DOUBLE_EQ(s[2], 0.45);
  EXPECT_DOUBLE_EQ(s[3], 0.0);
  std::mt19937_64 rng(1);
  SurvivalHead head(8, 16);
  head.init_random(2, 0.2);
  for (int trial = 0; trial < 50; ++trial) {
    Eigen::MatrixXd states = Eigen::MatrixXd::Random(30, 8) * 3.0;
    const auto c = head.survival(states);
    for (std::size_t t = 0; t < c.size(); ++t) {
      EXPECT_GE(c[t], 0.0);
      EXPECT_LE(c[t], 1.0);
      if (t) EXPECT_LE(c[t], c[t - 1]);
    }
  }
}

TEST(Detect, FirstIndexBelowThreshold) {
  const std::vector<double> s{0.9, 0.8, 0.4};
  EXPECT_EQ(detect(s, 0.5), 2);
  EXPECT_EQ(detect(s, 0.95), 0);
  EXPECT_FALSE(detect(s, 0.3));
}

TEST(Effectiveness, VolumeFractions) {
  // Anomalous minutes 10..20 inclusive.
  const auto ex = attack_example(30, 10, 21);
  EXPECT_DOUBLE_EQ(effectiveness_overhead(ex, 10).effectiveness, 100.0);
  EXPECT_DOUBLE_EQ(effectiveness_overhead(ex, 15).effectiveness, 100.0 * 6.0 / 11.0);
  EXPECT_DOUBLE_EQ(effectiveness_overhead(ex, 3).effectiveness, 100.0);
  EXPECT_DOUBLE_EQ(effectiveness_overhead(ex, std::nullopt).effectiveness, 0.0);
  EXPECT_DOUBLE_EQ(effectiveness_overhead(ex, 5).overhead, 100.0 * 14.0 / 19.0);
  const auto neg = normal_example(30);
  EXPECT_DOUBLE_EQ(effectiveness_overhead(neg, std::nullopt).overhead, 0.0);
  EXPECT_DOUBLE_EQ(effectiveness_overhead(neg, 27).overhead, 10.0);
  auto broken = attack_example(30, 10, 21);
  std::fill(broken.volume.begin(), broken.volume.end(), 0.0);
  EXPECT_THROW(effectiveness_overhead(broken, 10), ValidationError);
}

TEST(Report, ConfusionMetrics) {
  std::vector<DetectionExample> ex;
  std::vector<std::optional<int>> det;
  for (int i = 0; i < 4; ++i) {
    ex.push_back(attack_example(30, 10, 20));
    det.push_back(i < 3 ? std::optional<int>(11 + i) : std::nullopt);
  }
  for (int i = 0; i < 4; ++i) {
    ex.push_back(normal_example(30));
    det.push_back(i == 0 ? std::optional<int>(29) : std::nullopt);
  }
  const auto r = report(ex, det, 0.5);
  EXPECT_EQ(r.tp, 3);
  EXPECT_EQ(r.fn, 1);
  EXPECT_EQ(r.fp, 1);
  EXPECT_EQ(r.tn, 3);
  EXPECT_DOUBLE_EQ(r.fpr, 25.0);
  EXPECT_DOUBLE_EQ(r.fnr, 25.0);
  EXPECT_DOUBLE_EQ(r.f1, 0.75);
  EXPECT_EQ(r.mitigation_times, (std::vector<int>{1, 2, 3}));
  EXPECT_DOUBLE_EQ(r.mitigation_median, 2.0);
  EXPECT_FALSE(r.to_table().empty());
}

TEST(SurvivalHeadTest, LossGradientMatchesFiniteDifferences) {
  SurvivalHead head(5, 7);
  head.init_random(4, 0.1);
  head.params() += Eigen::VectorXd::Random(static_cast<Eigen::Index>(head.parameter_count())) * 0.3;
  std::vector<Eigen::MatrixXd> states;
  std::vector<DetectionExample> ex;
  for (int i = 0; i < 4; ++i) {
    states.push_back(Eigen::MatrixXd::Random(12, 5));
    ex.push_back(i % 2 ? attack_example(12, 3 + i, 12) : normal_example(12));
  }
  Eigen::VectorXd g = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(head.parameter_count()));
  head.loss(states, ex, &g);
  Eigen::VectorXd fd(g.size());
  const double h = 1e-6;
  for (Eigen::Index i = 0; i < g.size(); ++i) {
    SurvivalHead a = head, b = head;
    a.params()[i] += h;
    b.params()[i] -= h;
    fd[i] = (a.loss(states, ex) - b.loss(states, ex)) / (2 * h);
  }
  EXPECT_LT((g - fd).norm() / std::max(1e-12, fd.norm()), 1e-6);
}

TEST(SurvivalHeadTest, JsonRoundTripAndPrior) {
  SurvivalHead head(4, 3);
  head.init_random(1, 0.05);
  const auto back = SurvivalHead::from_json(json::parse(head.to_json().dump()));
  EXPECT_EQ(back.params(), head.params());
  const auto hz = head.hazards(Eigen::MatrixXd::Zero(2, 4));
  EXPECT_NEAR(hz[0], 0.05, 0.05);
}

TEST(Finetune, SeparatesSyntheticStates) {
  // Attack minutes carry a shifted state; the head should learn to fire there.
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n(0, 1);
  std::vector<Eigen::MatrixXd> states;
  std::vector<DetectionExample> ex;
  for (int i = 0; i < 20; ++i) {
    const bool attack = i % 2 == 0;
    auto e = attack ? attack_example(20, 8, 20) : normal_example(20);
    Eigen::MatrixXd s(20, 6);
    for (int t = 0; t < 20; ++t)
      for (int k = 0; k < 6; ++k) s(t, k) = n(rng) * 0.3 + (attack && t >= 8 && k == 0 ? 2.0 : 0.0);
    states.push_back(s);
    ex.push_back(e);
  }
  DetectionConfig cfg;
  cfg.head_hidden = 16;
  cfg.epochs = 300;
  cfg.learning_rate = 1e-2;
  const auto res = finetune(states, ex, cfg);
  EXPECT_LT(res.loss_history.back(), res.loss_history.front());
  std::vector<std::optional<int>> det;
  for (const auto& s : states) det.push_back(detect(res.head.survival(s), 0.5));
  const auto r = report(ex, det, 0.5);
  EXPECT_EQ(r.tp, 10);
  EXPECT_EQ(r.fp, 0);
}

TEST(Threshold, SelectsFeasibleAndMonotoneInCap) {
  // Two customers; curves drop at different times.
  std::vector<DetectionExample> ex;
  std::vector<std::vector<double>> curves;
  auto drop_at = [](int t, int w) {
    std::vector<double> c(static_cast<std::size_t>(w));
    for (int i = 0; i < w; ++i) c[static_cast<std::size_t>(i)] = i < t ? 0.95 - 0.01 * i : 0.3 - 0.01 * i;
    return c;
  };
  for (int c = 0; c < 2; ++c) {
    auto a = attack_example(20, 10, 20);
    a.customer = c;
    ex.push_back(a);
    curves.push_back(drop_at(11, 20));
    ex.push_back(normal_example(20, c));
    curves.push_back(drop_at(c == 0 ? 18 : 25, 20));
  }
  const auto grid = default_tau_grid();
  ASSERT_EQ(grid.size(), 99u);
  double prev_eff = -1.0;
  for (double cap : {0.0, 1.0, 5.0, 20.0, 50.0, 100.0}) {
    const auto p = select_threshold(ex, curves, cap, 100.0, grid);
    if (!p.feasible) continue;
    EXPECT_GE(p.mean_effectiveness, prev_eff);
    prev_eff = p.mean_effectiveness;
  }
  // A zero cap is met only by thresholds that never fire on normal minutes.
  const auto strict = select_threshold(ex, curves, 0.0, 100.0, grid);
  EXPECT_TRUE(strict.feasible);
  const auto loose = select_threshold(ex, curves, 100.0, 100.0, grid);
  EXPECT_DOUBLE_EQ(loose.mean_effectiveness, 100.0);
}

TEST(Threshold, InfeasibleFallsBackToFewestViolations) {
  std::vector<DetectionExample> ex{normal_example(10, 0), normal_example(10, 1)};
  std::vector<std::vector<double>> curves{std::vector<double>(10, 0.0), std::vector<double>(10, 0.0)};
  const auto p = select_threshold(ex, curves, 0.1, 80.0, default_tau_grid());
  EXPECT_FALSE(p.feasible);
  EXPECT_DOUBLE_EQ(p.violating_fraction, 1.0);
  EXPECT_DOUBLE_EQ(p.tau, 0.01);
}

TEST(DetectionConfigTest, ValidationAndJson) {
  DetectionConfig c;
  c.window = 0;
  EXPECT_THROW(c.validate(), ValidationError);
  c = DetectionConfig{};
  EXPECT_EQ(DetectionConfig::from_json(c.to_json()).to_json(), c.to_json());
}
