#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <vector>

#include <boost/math/distributions/beta.hpp>
#include <boost/math/distributions/gamma.hpp>
#include <boost/math/distributions/normal.hpp>
#include <gtest/gtest.h>

#include "test_util.hpp"

namespace {

using namespace nupf;
using nupf::testing::error_code;
using nupf::testing::obs;
using nupf::testing::scalar_lg_spec;

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("nupf_test_" + name);
}

TEST(LogReturns, Examples) {
  const std::vector<double> p{1.0, std::exp(0.01)};
  const auto y = log_return_preprocess(p);
  ASSERT_EQ(y.size(), 1u);
  EXPECT_NEAR(y[0].values[0], 1.0, 1e-12);
  EXPECT_EQ(y[0].time_index, 1);

  const std::vector<double> flat(6, 1.3);
  const auto z = log_return_preprocess(flat);
  EXPECT_EQ(z.size(), 5u);
  for (const auto& o : z) EXPECT_EQ(o.values[0], 0.0);
}

TEST(LogReturns, Errors) {
  const std::vector<double> one{1.0};
  EXPECT_EQ(error_code([&] { (void)log_return_preprocess(one); }), Errc::InvalidParam);
  const std::vector<double> neg{1.0, -2.0, 3.0};
  EXPECT_EQ(error_code([&] { (void)log_return_preprocess(neg); }), Errc::NonPositivePrice);
  const std::vector<double> zero{1.0, 0.0};
  EXPECT_EQ(error_code([&] { (void)log_return_preprocess(zero); }), Errc::NonPositivePrice);
}

TEST(PriceCsv, RoundTrip) {
  const auto path = temp_file("prices.csv").string();
  PriceSeries s{{"2020-01-01", "2020-01-02", "2020-01-03"}, {1.1, 1.12, 1.095}};
  write_price_csv(path, s);
  const auto back = read_price_csv(path);
  EXPECT_EQ(back.dates, s.dates);
  EXPECT_EQ(back.prices, s.prices);
  std::filesystem::remove(path);
}

TEST(PriceCsv, ErrorsNameTheLine) {
  const auto path = temp_file("bad.csv").string();
  {
    std::ofstream out(path);
    out << "date,price\n2020-01-01,1.0\n2020-01-02,abc\n";
  }
  try {
    (void)read_price_csv(path);
    FAIL() << "no error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::Io);
    EXPECT_NE(std::string(e.what()).find(":3:"), std::string::npos) << e.what();
  }
  {
    std::ofstream out(path);
    out << "date,price\n2020-01-01,-1.0\n";
  }
  EXPECT_EQ(error_code([&] { (void)read_price_csv(path); }), Errc::NonPositivePrice);
  std::filesystem::remove(path);
  EXPECT_EQ(error_code([&] { (void)read_price_csv(path); }), Errc::Io);
}

TEST(TruncatedNormal, SupportOverMillionDraws) {
  RngStream r(1);
  const double inf = std::numeric_limits<double>::infinity();
  for (int k = 0; k < 1000000; ++k) {
    const double s = truncated_normal(1e-3, 1e-2, 0.0, inf, r);
    ASSERT_GT(s, 0.0);
    const double p = truncated_normal(0.999, 1e-2, -1.0, 1.0, r);
    ASSERT_GT(p, -1.0);
    ASSERT_LT(p, 1.0);
  }
}

TEST(TruncatedNormal, FarTailAndMoments) {
  RngStream r(2);
  const double inf = std::numeric_limits<double>::infinity();
  for (int k = 0; k < 1000; ++k) EXPECT_GT(truncated_normal(0.0, 1.0, 12.0, inf, r), 12.0);

  // E[X] = m + s (phi(a) - phi(b)) / (Phi(b) - Phi(a))
  const boost::math::normal n01;
  const double m = 0.3;
  const double s = 0.5;
  const double a = (0.0 - m) / s;
  const double b = (0.5 - m) / s;
  const double expected = m + s * (boost::math::pdf(n01, a) - boost::math::pdf(n01, b)) /
                                  (boost::math::cdf(n01, b) - boost::math::cdf(n01, a));
  std::vector<double> xs;
  for (int k = 0; k < 100000; ++k) xs.push_back(truncated_normal(m, s, 0.0, 0.5, r));
  EXPECT_NEAR(stats::mean(xs), expected, 4.0 * stats::std_error(xs));
  const auto cdf = [&](double x) {
    const double z = (x - m) / s;
    return (boost::math::cdf(n01, z) - boost::math::cdf(n01, a)) / (boost::math::cdf(n01, b) - boost::math::cdf(n01, a));
  };
  xs.resize(5000);
  EXPECT_GT(stats::ks_one_sample(xs, cdf).p_value, 0.01);
}

TEST(TruncatedNormal, Errors) {
  RngStream r(3);
  EXPECT_EQ(error_code([&] { (void)truncated_normal(0.0, 1.0, 1.0, 1.0, r); }), Errc::InvalidParam);
  EXPECT_EQ(error_code([&] { (void)truncated_normal(5.0, 0.0, 0.0, 1.0, r); }), Errc::InvalidParam);
  EXPECT_EQ(truncated_normal(0.5, 0.0, 0.0, 1.0, r), 0.5);
}

TEST(Jitter, ZeroVarianceIsIdentity) {
  const JitterKernel none{0.0, 0.0, 0.0};
  RngStream r(4);
  const SVParams p{0.2, 0.05, 0.97};
  const auto q = none.apply(p, r);
  EXPECT_EQ(q.vec(), p.vec());
}

TEST(Jitter, PreservesSupport) {
  const JitterKernel j{1e-1, 1e-2, 1e-2};
  RngStream r(5);
  SVParams p{0.0, 1e-3, 0.999};
  for (int k = 0; k < 100000; ++k) {
    p = j.apply(p, r);
    ASSERT_TRUE(p.in_support());
  }
}

TEST(Prior, MatchesReferenceDensities) {
  const ParamPrior prior;
  const SVParams p{0.4, 0.15, 0.93};
  const double expected = std::log(boost::math::pdf(boost::math::normal(0.0, 1.0), 0.4)) +
                          std::log(boost::math::pdf(boost::math::gamma_distribution<>(2.0, 0.1), 0.15)) +
                          std::log(boost::math::pdf(boost::math::beta_distribution<>(120.0, 2.0), 0.93));
  EXPECT_NEAR(prior.log_density(p), expected, 1e-10);
}

TEST(Prior, OutsideSupport) {
  const ParamPrior prior;
  for (const SVParams& p : {SVParams{0.0, -0.1, 0.9}, SVParams{0.0, 0.0, 0.9}, SVParams{0.0, 0.1, 1.0},
                            SVParams{0.0, 0.1, -0.5}, SVParams{NAN, 0.1, 0.9}}) {
    EXPECT_EQ(prior.log_density(p), -std::numeric_limits<double>::infinity());
  }
}

TEST(Pmh, IdentityProposalAlwaysAccepts) {
  const auto chain = pmh_generic(
      Eigen::Vector2d(0.1, 0.2), Eigen::Vector2d::Zero(), 200, [](const Eigen::VectorXd&) { return 0.0; },
      [](const Eigen::VectorXd& th, const RngStream&) { return -th.squaredNorm(); }, RngStream(6));
  EXPECT_EQ(acceptance_rate(chain.accepted), 1.0);
  for (const auto& s : chain.samples) EXPECT_EQ(s, Eigen::Vector2d(0.1, 0.2));
}

TEST(Pmh, ZeroPriorProposalsSkipTheLikelihood) {
  int calls = 0;
  const auto chain = pmh_generic(
      Eigen::VectorXd::Constant(1, 0.5), Eigen::VectorXd::Constant(1, 2.0), 500,
      [](const Eigen::VectorXd& th) { return th[0] > 0.0 && th[0] < 1.0 ? 0.0 : -INFINITY; },
      [&](const Eigen::VectorXd&, const RngStream&) {
        ++calls;
        return 0.0;
      },
      RngStream(7));
  int in_support = 0;
  for (const auto& s : chain.samples) {
    EXPECT_GT(s[0], 0.0);
    EXPECT_LT(s[0], 1.0);
  }
  for (bool a : chain.accepted) in_support += a ? 1 : 0;
  // with a flat likelihood every in-support proposal is accepted
  EXPECT_EQ(calls, 1 + in_support);
  EXPECT_LT(in_support, 500);
}

TEST(Pmh, InitialPointOutsideSupport) {
  EXPECT_EQ(error_code([] {
              (void)pmh_generic(
                  Eigen::VectorXd::Zero(1), Eigen::VectorXd::Ones(1), 10,
                  [](const Eigen::VectorXd&) { return -INFINITY; },
                  [](const Eigen::VectorXd&, const RngStream&) { return 0.0; }, RngStream(1));
            }),
            Errc::InvalidParam);
}

// Posterior of theta = log q for a scalar random walk, prior N(0, 1), with
// the exact Kalman evidence in place of a particle estimate.
struct ExactEvidenceTarget {
  std::vector<Observation> ys;

  ExactEvidenceTarget() {
    const auto m = build_linear_gaussian(scalar_lg_spec(1.0, 1.0)).model;
    ys = simulate(m, 50, RngStream(8)).observations;
  }
  [[nodiscard]] double log_target(double theta) const {
    return -0.5 * theta * theta + kalman_filter(scalar_lg_spec(std::exp(theta), 1.0), ys).log_evidence;
  }
  [[nodiscard]] std::vector<double> thinned_chain(std::uint64_t seed, int samples, int thin) const {
    const auto chain = pmh_generic(
        Eigen::VectorXd::Zero(1), Eigen::VectorXd::Constant(1, 1.0), 1000 + samples * thin,
        [](const Eigen::VectorXd& th) { return -0.5 * th[0] * th[0]; },
        [this](const Eigen::VectorXd& th, const RngStream&) {
          return kalman_filter(scalar_lg_spec(std::exp(th[0]), 1.0), ys).log_evidence;
        },
        RngStream(seed));
    std::vector<double> out;
    for (int k = 0; k < samples; ++k) out.push_back(chain.samples[static_cast<std::size_t>(1000 + (k + 1) * thin - 1)][0]);
    return out;
  }
};

TEST(Pmh, ExactEvidenceChainMatchesReference) {
  const ExactEvidenceTarget target;
  const auto chain = target.thinned_chain(9, 10000, 10);
  const auto reference = target.thinned_chain(10, 10000, 10);
  EXPECT_GT(stats::ks_two_sample(chain, reference).p_value, 0.01);

  // quadrature CDF of the same target
  const double lo = -8.0;
  const double hi = 6.0;
  const int cells = 4000;
  const double h = (hi - lo) / cells;
  std::vector<double> grid(cells + 1);
  std::vector<double> dens(cells + 1);
  double peak = -INFINITY;
  for (int i = 0; i <= cells; ++i) {
    grid[i] = lo + h * i;
    dens[i] = target.log_target(grid[i]);
    peak = std::max(peak, dens[i]);
  }
  std::vector<double> cum(cells + 1, 0.0);
  for (int i = 1; i <= cells; ++i) {
    cum[i] = cum[i - 1] + 0.5 * h * (std::exp(dens[i - 1] - peak) + std::exp(dens[i] - peak));
  }
  const auto cdf = [&](double x) {
    if (x <= lo) return 0.0;
    if (x >= hi) return 1.0;
    const auto i = static_cast<std::size_t>((x - lo) / h);
    const double frac = (x - grid[i]) / h;
    return (cum[i] + frac * (cum[i + 1] - cum[i])) / cum.back();
  };
  EXPECT_GT(stats::ks_one_sample(chain, cdf).p_value, 0.01);
}

TEST(Diagnostics, AcceptanceRateWindow) {
  const std::vector<bool> a{true, false, false, true, true, true};
  EXPECT_DOUBLE_EQ(acceptance_rate(a), 4.0 / 6.0);
  EXPECT_DOUBLE_EQ(acceptance_rate(a, 1, 3), 0.0);
  EXPECT_DOUBLE_EQ(acceptance_rate(a, 3), 1.0);
  EXPECT_EQ(error_code([&] { (void)acceptance_rate(a, 3, 3); }), Errc::InsufficientChain);
  EXPECT_EQ(error_code([&] { (void)acceptance_rate(std::vector<bool>{}); }), Errc::InsufficientChain);
}

TEST(Diagnostics, AutocorrelationOfWhiteNoiseAndAr1) {
  RngStream r(11);
  const int n = 20000;
  std::vector<double> white(n);
  std::vector<double> ar(n);
  double prev = 0.0;
  for (int t = 0; t < n; ++t) {
    white[t] = r.normal();
    prev = 0.8 * prev + r.normal();
    ar[t] = prev;
  }
  const auto acf_w = autocorrelation(white, 20);
  EXPECT_DOUBLE_EQ(acf_w[0], 1.0);
  for (int k = 1; k <= 20; ++k) EXPECT_LT(std::abs(acf_w[k]), 4.0 / std::sqrt(n)) << k;
  const auto acf_a = autocorrelation(ar, 3);
  for (int k = 1; k <= 3; ++k) EXPECT_NEAR(acf_a[k], std::pow(0.8, k), 0.03) << k;
}

TEST(Diagnostics, AutocorrelationEdgeCases) {
  const std::vector<double> flat(10, 2.0);
  const auto acf = autocorrelation(flat, 3);
  EXPECT_EQ(acf, (std::vector<double>{1.0, 0.0, 0.0, 0.0}));
  EXPECT_EQ(error_code([&] { (void)autocorrelation(flat, 10); }), Errc::InsufficientChain);
  EXPECT_EQ(error_code([&] { (void)autocorrelation(flat, -1); }), Errc::InsufficientChain);

  PMHChain chain;
  for (int i = 0; i < 5; ++i) chain.samples.push_back({static_cast<double>(i), 0.1, 0.9});
  const auto mu = autocorrelation(chain, SVParam::Mu, 1);
  EXPECT_NEAR(mu[1], 0.4, 1e-12);
  EXPECT_EQ(autocorrelation(chain, SVParam::Phi, 1)[1], 0.0);
}

std::vector<Observation> sv_observations(int horizon) {
  const auto m = build_stochvol(StochVolSpec{});
  return simulate(m, horizon, RngStream(12)).observations;
}

TEST(Npf, SingleParameterParticleIsPlainFilter) {
  const auto ys = sv_observations(20);
  const JitterKernel none{0.0, 0.0, 0.0};
  FilterSetup inner;
  inner.particles = 30;
  const RngStream rng(13);
  NPFState s = npf_init(1, 30, ParamPrior{}, rng);
  const SVParams theta = s.theta[0];
  FilterState shadow = s.inner[0];
  const auto model = build_stochvol(theta.spec());
  for (const auto& y : ys) {
    const auto rec = npf_step(s, y, none, inner, rng);
    const auto ref = bpf_step(shadow, model, y, rng.split(1'000'000'007ULL, 0));
    EXPECT_EQ(rec.log_evidence_increment, ref.log_evidence_increment);
    EXPECT_EQ(s.theta[0].vec(), theta.vec());
  }
  EXPECT_EQ(s.log_evidence, shadow.cumulative_log_evidence);
  for (std::size_t i = 0; i < shadow.ensemble.size(); ++i) EXPECT_EQ(s.inner[0].ensemble.states[i], shadow.ensemble.states[i]);
}

TEST(Npf, SingleObservationSingleParticle) {
  const auto ys = sv_observations(1);
  const JitterKernel none{0.0, 0.0, 0.0};
  FilterSetup inner;
  NPFState s = npf_init(1, 1, ParamPrior{}, RngStream(14));
  const auto rec = npf_step(s, ys[0], none, inner, RngStream(14));
  const auto model = build_stochvol(s.theta[0].spec());
  EXPECT_NEAR(rec.log_evidence_increment, model.log_likelihood(ys[0], s.inner[0].ensemble.states[0]), 1e-12);
}

TEST(Npf, ZeroJitterOnlyReweights) {
  const auto ys = sv_observations(30);
  const JitterKernel none{0.0, 0.0, 0.0};
  FilterSetup inner;
  inner.kind = FilterKind::Nupf;
  inner.nudge = {{SelectionScheme::Independent, 4}, NudgeOperator::gradient(4.0, false)};
  NPFState s = npf_init(8, 20, ParamPrior{}, RngStream(15));
  const auto initial = s.theta;
  for (const auto& y : ys) (void)npf_step(s, y, none, inner, RngStream(15));
  for (const auto& th : s.theta) {
    bool found = false;
    for (const auto& p : initial) found = found || th.vec() == p.vec();
    EXPECT_TRUE(found);
  }
}

TEST(Npf, JitterKeepsParametersInSupport) {
  const auto ys = sv_observations(100);
  FilterSetup inner;
  const JitterKernel wide{1e-1, 1e-2, 1e-2};
  NPFState s = npf_init(20, 10, ParamPrior{}, RngStream(16));
  std::vector<NpfStepRecord> trace;
  for (const auto& y : ys) {
    trace.push_back(npf_step(s, y, wide, inner, RngStream(16)));
    for (const auto& th : s.theta) ASSERT_TRUE(th.in_support());
  }
  EXPECT_TRUE(std::isfinite(npf_evidence(trace)));
  EXPECT_EQ(npf_evidence(trace), s.log_evidence);
}

TEST(Npf, DeterministicAndRejectsOtherInnerKinds) {
  const auto ys = sv_observations(25);
  FilterSetup inner;
  const JitterKernel j;
  const double a = npf_evidence(ys, 5, 10, ParamPrior{}, j, inner, RngStream(17));
  const double b = npf_evidence(ys, 5, 10, ParamPrior{}, j, inner, RngStream(17));
  EXPECT_EQ(a, b);
  inner.kind = FilterKind::Apf;
  EXPECT_EQ(error_code([&] { (void)npf_evidence(ys, 2, 2, ParamPrior{}, j, inner, RngStream(1)); }),
            Errc::UnsupportedModel);
  EXPECT_EQ(error_code([&] { (void)npf_init(0, 2, ParamPrior{}, RngStream(1)); }), Errc::InvalidParam);
}

TEST(PmhRun, ChainStaysInSupport) {
  const auto ys = sv_observations(50);
  PmhSettings settings;
  settings.iterations = 100;
  settings.inner.particles = 50;
  const auto chain = pmh_run(ys, ParamPrior{}, settings, RngStream(18));
  ASSERT_EQ(chain.samples.size(), 100u);
  for (const auto& s : chain.samples) EXPECT_TRUE(s.in_support());
  const double rate = acceptance_rate(chain);
  EXPECT_GT(rate, 0.0);
  EXPECT_LT(rate, 1.0);
}

}  // namespace
