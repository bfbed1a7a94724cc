#include <gtest/gtest.h>

#include <cstring>

#include "lsc/learning.hpp"
#include "lsc/io.hpp"

using namespace lsc;

namespace {

TrainConfig small_config(SolverKind kind) {
  TrainConfig c;
  c.solver = kind;
  c.params.u0 = u0_from_pi(0.3, 1.0);
  c.batch_size = 10;
  c.t_max = 3;
  c.eval_period = 0.5;
  c.nested = {6, 50, true};
  return c;
}

}  // namespace

TEST(Train, ZeroLengthRunKeepsTheInitialState) {
  const BarsSource src(BarsSpec{});
  TrainConfig c = small_config(SolverKind::LSC_L0);
  c.t_max = 0;
  const RunArtifact a = train(c, src);
  ASSERT_EQ(a.traces.size(), 1u);
  EXPECT_EQ(a.traces[0].t, 0.0);
  EXPECT_EQ(a.dict.a(), random_dictionary(64, 16, c.seed).a());
  EXPECT_TRUE(a.reservoir.values.empty());

  TrainConfig d = small_config(SolverKind::DSC);
  d.nested.outer = 0;
  const RunArtifact b = train(d, src);
  EXPECT_EQ(b.dict.a(), random_dictionary(64, 16, d.seed).a());
  EXPECT_FALSE(b.sampled);

  d.nested.outer = 3;
  d.learn.dictionary = false;
  const RunArtifact fixed = train(d, src, bars_dictionary(8));
  EXPECT_EQ(fixed.dict.a(), bars_dictionary(8).a());
  EXPECT_EQ(fixed.reservoir.values.size(), 3u * 16u * 10u);
}

TEST(Train, ExplicitInitAndSizes) {
  const BarsSource src(BarsSpec{});
  TrainConfig c = small_config(SolverKind::LSC_L0);
  c.learn.dictionary = false;
  const RunArtifact a = train(c, src, bars_dictionary(8));
  EXPECT_EQ(a.dict.a(), bars_dictionary(8).a());
  EXPECT_EQ(a.traces.size(), 7u);  // t = 0, 0.5, ..., 3
  EXPECT_NEAR(a.traces.back().mean_cosine, 1.0, 1e-12);
  c.k = 20;
  EXPECT_EQ(train(c, src).dict.k(), 20);
  EXPECT_THROW(train(c, src, random_dictionary(10, 4, 1)), DimensionError);
}

TEST(Train, ReservoirHonoursBurnInAndThinning) {
  const BarsSource src(BarsSpec{});
  TrainConfig c = small_config(SolverKind::LSC_L0);
  c.params.tau_x = 1.0;
  c.reservoir_burn_in = 0.5;
  c.reservoir_thin = 0.25;
  const RunArtifact a = train(c, src);
  EXPECT_TRUE(a.sampled);
  // Per presentation of 100 steps: positions 50, 75, 100; 3 presentations.
  EXPECT_EQ(a.reservoir.seen, 3u * 3u * 16u * 10u);
  for (double t : a.reservoir.times) {
    const double within = t - std::floor(t - 1e-9);
    EXPECT_TRUE(std::abs(within - 0.5) < 1e-9 || std::abs(within - 0.75) < 1e-9 || std::abs(within - 1.0) < 1e-9)
        << t;
  }
}

TEST(Reservoir, UniformAndDeterministicReplacement) {
  Reservoir r{1000, 7, 0, {}, {}};
  for (int i = 0; i < 100000; ++i) r.add(static_cast<double>(i), static_cast<double>(i));
  EXPECT_EQ(r.values.size(), 1000u);
  EXPECT_EQ(r.seen, 100000u);
  // Kept items should be uniform over the stream: mean index ~ N/2, SE ~ 912.
  const double mean = std::accumulate(r.values.begin(), r.values.end(), 0.0) / 1000.0;
  EXPECT_NEAR(mean, 50000.0, 4000.0);
  std::size_t early = 0;
  for (double v : r.values) early += v < 50000;
  EXPECT_NEAR(static_cast<double>(early), 500.0, 80.0);

  Reservoir again{1000, 7, 0, {}, {}};
  for (int i = 0; i < 100000; ++i) again.add(static_cast<double>(i), static_cast<double>(i));
  EXPECT_EQ(r.values, again.values);
}

TEST(Checkpoint, ResumeMatchesUninterruptedRun) {
  const BarsSource src(BarsSpec{});
  for (SolverKind kind : {SolverKind::LSC_L0, SolverKind::DSC}) {
    TrainConfig c = small_config(kind);
    c.learn.u0 = kind == SolverKind::LSC_L0;
    c.snapshot_period = kind == SolverKind::DSC ? 1.0 : 1.5;
    std::vector<Checkpoint> snaps;
    Trainer full(c, src);
    full.run([&](const Checkpoint& cp) { snaps.push_back(cp); });
    ASSERT_FALSE(snaps.empty()) << to_string(kind);

    Trainer resumed(c, src, snaps.front());
    resumed.run();
    const RunArtifact a = full.artifact(), b = resumed.artifact();
    EXPECT_EQ(a.dict.a(), b.dict.a()) << to_string(kind);
    EXPECT_EQ(a.params.u0, b.params.u0);
    EXPECT_EQ(trace_csv(a.traces), trace_csv(b.traces));
    EXPECT_EQ(a.reservoir.values, b.reservoir.values);
  }
}

TEST(Train, NonFiniteStateNamesTheTensor) {
  const BarsSource src(BarsSpec{});
  TrainConfig c = small_config(SolverKind::LSC_L0);
  c.params.tau_a = 1e-12;  // dictionary explodes on the first steps
  c.params.tau_u0 = 1e-12;
  try {
    train(c, src);
    FAIL() << "expected NonFiniteError";
  } catch (const NonFiniteError& e) {
    EXPECT_GE(e.step, 1u);
    EXPECT_FALSE(e.tensor.empty());
    EXPECT_NE(std::string(e.what()).find(e.tensor), std::string::npos);
  }
}

TEST(TrainConfig, Validation) {
  TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  c.eval_period = 0.015;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainConfig{};
  c.solver = SolverKind::DSC;
  c.learn.u0 = true;
  EXPECT_THROW(c.validate(), ConfigError);
  c.learn.u0 = false;
  c.learn.sigma = true;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainConfig{};
  c.reservoir_thin = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainConfig{};
  c.params.dt = 2;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Summaries, ConvergedPiAndWindows) {
  std::vector<TraceRecord> tr(20);
  for (std::size_t i = 0; i < tr.size(); ++i) {
    tr[i].lambda = 2.0;
    tr[i].u0 = i < 18 ? 0.0 : u0_from_pi(0.25, 2.0);
  }
  const Spread s = converged_pi(tr);
  EXPECT_NEAR(s.mean, 0.25, 1e-15);
  EXPECT_EQ(final_window(tr, 0.1, [](const TraceRecord& r) { return r.u0; }).size(), 2u);
  EXPECT_EQ(final_window(tr, 0.0, [](const TraceRecord& r) { return r.u0; }).size(), 1u);
  EXPECT_TRUE(std::isnan(converged_pi({}).mean));
}

TEST(Summaries, DuplicatePairs) {
  Matrix a = bars_dictionary(3).a();  // 9 x 6
  Matrix b(9, 8);
  b << a, -2 * a.col(1), 0.5 * a.col(4);
  const auto pairs = duplicate_pairs(b);
  ASSERT_EQ(pairs.size(), 2u);
  EXPECT_EQ(pairs[0], std::make_pair(Eigen::Index{1}, Eigen::Index{6}));
  EXPECT_EQ(pairs[1], std::make_pair(Eigen::Index{4}, Eigen::Index{7}));
  b.col(7).setZero();
  EXPECT_EQ(duplicate_pairs(b).size(), 1u);
}

TEST(Sweep, MonotonicityChecker) {
  EXPECT_TRUE(check_non_increasing({0.5, 0.4, 0.3}).monotone);
  EXPECT_TRUE(check_non_increasing({0.5, 0.505, 0.3}).monotone);
  EXPECT_FALSE(check_non_increasing({0.5, 0.52, 0.3}).monotone);
  EXPECT_FALSE(check_non_increasing({0.5, 0.505, 0.3, 0.305}).monotone);
  EXPECT_EQ(check_non_increasing({0.5, 0.52, 0.3}).large_increases, 1u);
}

TEST(Sweep, SpecValidationAndPointConfigs) {
  SweepSpec s;
  s.base = small_config(SolverKind::LCA);
  s.values = {0.5, 1.0, 2.0};
  EXPECT_NO_THROW(s.validate());
  EXPECT_EQ(s.point_config(2.0, 64).params.lambda, 2.0);
  s.values = {0.5, 0.5};
  EXPECT_THROW(s.validate(), ConfigError);
  s.values = {};
  EXPECT_THROW(s.validate(), ConfigError);

  s.param = SweepParam::Overcompleteness;
  s.values = {1, 2};
  EXPECT_THROW(s.validate(), ConfigError);  // needs l0lsc with learn_u0
  s.base.solver = SolverKind::LSC_L0;
  s.base.learn.u0 = true;
  EXPECT_NO_THROW(s.validate());
  s.base_k = 16;
  EXPECT_EQ(s.point_config(1.5, 64).k, 24);
  s.base_k = 0;
  EXPECT_EQ(s.point_config(2, 64).k, 128);
  EXPECT_EQ(parse_sweep_param("u0"), SweepParam::U0);
  EXPECT_THROW(parse_sweep_param("sigma"), ConfigError);
}

TEST(Sweep, LambdaGridOrdersHeldOutActivity) {
  const BarsSource src(BarsSpec{});
  SweepSpec s;
  s.base = small_config(SolverKind::LCA);
  s.base.nested = {20, 300, true};
  s.values = {0.3, 1.0, 3.0};
  s.heldout_batches = 3;
  std::size_t calls = 0;
  const SweepResult r = sweep_lambda_vs_pi(s, src, [&](std::size_t, const TrainConfig&, const RunArtifact* a,
                                                        const SweepPoint& pt) {
    ++calls;
    EXPECT_NE(a, nullptr);
    EXPECT_TRUE(pt.ok);
  });
  EXPECT_EQ(calls, 3u);
  ASSERT_TRUE(r.monotonicity.has_value());
  EXPECT_TRUE(r.monotonicity->monotone);
  EXPECT_GT(r.points[0].summary.mean, r.points[2].summary.mean);
}

TEST(Sweep, FailingPointIsRecordedAndSkipped) {
  const BarsSource src(BarsSpec{});
  SweepSpec s;
  s.param = SweepParam::U0;
  s.base = small_config(SolverKind::LSC_L0);
  s.base.t_max = 1;
  s.values = {-1.0, 1.0};  // u0 < 0 is invalid
  const SweepResult r = run_sweep(s, src);
  ASSERT_EQ(r.points.size(), 2u);
  EXPECT_FALSE(r.points[0].ok);
  EXPECT_NE(r.points[0].error.find("u0"), std::string::npos);
  EXPECT_TRUE(r.points[1].ok);
  EXPECT_FALSE(r.monotonicity.has_value());
}
