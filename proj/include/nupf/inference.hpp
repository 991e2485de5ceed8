#pragma once

#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <boost/math/distributions/normal.hpp>
#include <Eigen/Core>

#include "nupf/core.hpp"
#include "nupf/filters/particle.hpp"
#include "nupf/filters/run.hpp"
#include "nupf/models/stochvol.hpp"
#include "nupf/rng.hpp"

namespace nupf {

// ---------------------------------------------------------------------------
// Data
// ---------------------------------------------------------------------------

/// y_t = 100 log(s_t / s_{t-1}), t = 1..T.
inline std::vector<Observation> log_return_preprocess(std::span<const double> prices) {
  if (prices.size() < 2) throw Error(Errc::InvalidParam, "need at least two prices");
  for (double s : prices) {
    if (!(s > 0.0) || !std::isfinite(s)) throw Error(Errc::NonPositivePrice, "price " + std::to_string(s));
  }
  std::vector<Observation> out;
  out.reserve(prices.size() - 1);
  for (std::size_t t = 1; t < prices.size(); ++t) {
    Eigen::VectorXd y(1);
    y[0] = 100.0 * std::log(prices[t] / prices[t - 1]);
    out.push_back({std::move(y), static_cast<int>(t)});
  }
  return out;
}

struct PriceSeries {
  std::vector<std::string> dates;
  std::vector<double> prices;
};

/// Reads a `date,price` CSV with a header row.
inline PriceSeries read_price_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::Io, "cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw Error(Errc::Io, path + ": empty file");
  if (line.rfind("date,price", 0) != 0) throw Error(Errc::Io, path + ": expected header 'date,price'");
  PriceSeries out;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw Error(Errc::Io, path + ":" + std::to_string(lineno) + ": missing comma");
    const std::string price = line.substr(comma + 1);
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(price, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != price.size()) {
      throw Error(Errc::Io, path + ":" + std::to_string(lineno) + ": bad price '" + price + "'");
    }
    if (!(v > 0.0)) throw Error(Errc::NonPositivePrice, path + ":" + std::to_string(lineno));
    out.dates.push_back(line.substr(0, comma));
    out.prices.push_back(v);
  }
  return out;
}

inline void write_price_csv(const std::string& path, const PriceSeries& series) {
  std::ofstream out(path);
  if (!out) throw Error(Errc::Io, "cannot write " + path);
  out << "date,price\n";
  out.precision(10);
  for (std::size_t i = 0; i < series.prices.size(); ++i) out << series.dates[i] << ',' << series.prices[i] << '\n';
}

// ---------------------------------------------------------------------------
// Parameters, priors, jitter
// ---------------------------------------------------------------------------

struct SVParams {
  double mu = 0.0;
  double sigma_v = 0.1;
  double phi = 0.95;

  [[nodiscard]] bool in_support() const noexcept {
    return std::isfinite(mu) && sigma_v > 0.0 && phi > -1.0 && phi < 1.0;
  }
  [[nodiscard]] StochVolSpec spec() const { return {mu, sigma_v, phi}; }
  [[nodiscard]] Eigen::Vector3d vec() const { return {mu, sigma_v, phi}; }
  static SVParams from(const Eigen::VectorXd& v) { return {v[0], v[1], v[2]}; }
};

/// mu ~ N(0, 1), sigma_v ~ Gamma(2, scale 0.1), phi ~ Beta(120, 2).
struct ParamPrior {
  double mu_mean = 0.0;
  double mu_sd = 1.0;
  double sigma_shape = 2.0;
  double sigma_scale = 0.1;
  double phi_a = 120.0;
  double phi_b = 2.0;

  [[nodiscard]] double log_density(const SVParams& p) const {
    const double ninf = -std::numeric_limits<double>::infinity();
    if (!p.in_support() || p.phi <= 0.0) return ninf;
    const double z = (p.mu - mu_mean) / mu_sd;
    const double lp_mu = -0.5 * (linalg::kLog2Pi + z * z) - std::log(mu_sd);
    const double lp_sigma = (sigma_shape - 1.0) * std::log(p.sigma_v) - p.sigma_v / sigma_scale -
                            std::lgamma(sigma_shape) - sigma_shape * std::log(sigma_scale);
    const double lp_phi = (phi_a - 1.0) * std::log(p.phi) + (phi_b - 1.0) * std::log1p(-p.phi) -
                          (std::lgamma(phi_a) + std::lgamma(phi_b) - std::lgamma(phi_a + phi_b));
    return lp_mu + lp_sigma + lp_phi;
  }
};

/// N(mean, sd^2) restricted to (lo, hi), by inverse CDF.
inline double truncated_normal(double mean, double sd, double lo, double hi, RngStream& rng) {
  if (!(lo < hi)) throw Error(Errc::InvalidParam, "truncated_normal: empty interval");
  if (sd == 0.0) {
    if (mean > lo && mean < hi) return mean;
    throw Error(Errc::InvalidParam, "truncated_normal: zero sd with mean outside the interval");
  }
  const boost::math::normal std_normal;
  double a = (lo - mean) / sd;
  double b = (hi - mean) / sd;
  // Work in the lower tail for accuracy.
  const bool flip = a > 0.0;
  if (flip) {
    std::swap(a, b);
    a = -a;
    b = -b;
  }
  const double fa = std::isinf(a) ? 0.0 : boost::math::cdf(std_normal, a);
  const double fb = std::isinf(b) ? 1.0 : boost::math::cdf(std_normal, b);
  double z = boost::math::quantile(std_normal, fa + rng.uniform_open() * (fb - fa));
  z = std::clamp(z, a, b);
  if (flip) z = -z;
  double x = mean + sd * z;
  if (!(x > lo)) x = std::nextafter(lo, hi);
  if (!(x < hi)) x = std::nextafter(hi, lo);
  return x;
}

struct JitterKernel {
  double var_mu = 1e-3;
  double var_sigma = 1e-4;
  double var_phi = 1e-4;

  [[nodiscard]] SVParams apply(const SVParams& p, RngStream& rng) const {
    SVParams out = p;
    out.mu = p.mu + std::sqrt(var_mu) * rng.normal();
    out.sigma_v = var_sigma > 0.0
                      ? truncated_normal(p.sigma_v, std::sqrt(var_sigma), 0.0, std::numeric_limits<double>::infinity(), rng)
                      : p.sigma_v;
    out.phi = var_phi > 0.0 ? truncated_normal(p.phi, std::sqrt(var_phi), -1.0, 1.0, rng) : p.phi;
    return out;
  }
};

// ---------------------------------------------------------------------------
// Particle Metropolis-Hastings
// ---------------------------------------------------------------------------

struct GenericChain {
  std::vector<Eigen::VectorXd> samples;
  std::vector<double> log_marginals;
  std::vector<bool> accepted;
  std::vector<bool> degenerate;
};

/// Pseudo-marginal random-walk MH. `log_likelihood` returns an estimate of
/// log p(y | theta) and receives a fresh substream per call; proposals with
/// zero prior density are rejected without evaluating it.
inline GenericChain pmh_generic(const Eigen::VectorXd& theta0, const Eigen::VectorXd& proposal_sd, int iterations,
                                const std::function<double(const Eigen::VectorXd&)>& log_prior,
                                const std::function<double(const Eigen::VectorXd&, const RngStream&)>& log_likelihood,
                                const RngStream& rng) {
  if (iterations < 1) throw Error(Errc::InvalidParam, "pmh: iterations must be >= 1");
  if (proposal_sd.size() != theta0.size()) throw Error(Errc::DimensionMismatch, "pmh: proposal size");
  GenericChain chain;
  chain.samples.reserve(static_cast<std::size_t>(iterations));
  Eigen::VectorXd cur = theta0;
  double cur_lp = log_prior(cur);
  if (!std::isfinite(cur_lp)) throw Error(Errc::InvalidParam, "pmh: initial point outside prior support");
  double cur_ll = log_likelihood(cur, rng.split(0));
  for (int it = 1; it <= iterations; ++it) {
    RngStream step = rng.split(static_cast<std::uint64_t>(it), 1);
    Eigen::VectorXd prop = cur;
    for (Eigen::Index k = 0; k < prop.size(); ++k) prop[k] += proposal_sd[k] * step.normal();
    const double prop_lp = log_prior(prop);
    bool accept = false;
    bool degenerate = false;
    if (std::isfinite(prop_lp)) {
      const double prop_ll = log_likelihood(prop, rng.split(static_cast<std::uint64_t>(it), 2));
      if (!std::isfinite(prop_ll)) {
        degenerate = true;
      } else {
        const double log_ratio = (prop_lp + prop_ll) - (cur_lp + cur_ll);
        if (!std::isfinite(cur_ll) || std::log(step.uniform_open()) < log_ratio) {
          accept = true;
          cur = prop;
          cur_lp = prop_lp;
          cur_ll = prop_ll;
        }
      }
    }
    chain.samples.push_back(cur);
    chain.log_marginals.push_back(cur_ll);
    chain.accepted.push_back(accept);
    chain.degenerate.push_back(degenerate);
  }
  return chain;
}

struct PMHChain {
  std::vector<SVParams> samples;
  std::vector<double> log_marginals;
  std::vector<bool> accepted;
  std::vector<bool> degenerate;
};

struct PmhSettings {
  SVParams initial{0.0, 0.1, 0.95};
  Eigen::Vector3d proposal_var{1e-2, 1e-3, 1e-3};
  int iterations = 2000;
  FilterSetup inner;  // Bpf or Nupf; particles, nudge config, evidence timing
};

/// Stochastic-volatility pMH with an inner particle filter.
inline PMHChain pmh_run(std::span<const Observation> observations, const ParamPrior& prior,
                        const PmhSettings& settings, const RngStream& rng) {
  const auto lp = [&](const Eigen::VectorXd& th) { return prior.log_density(SVParams::from(th)); };
  const auto ll = [&](const Eigen::VectorXd& th, const RngStream& r) {
    const StateSpaceModel model = build_stochvol(SVParams::from(th).spec());
    const FilterOutput out = run_filter(model, observations, settings.inner, r);
    return out.degenerate_steps > 0 ? -std::numeric_limits<double>::infinity() : out.log_evidence;
  };
  const GenericChain g = pmh_generic(settings.initial.vec(), settings.proposal_var.cwiseSqrt(),
                                     settings.iterations, lp, ll, rng);
  PMHChain chain;
  chain.samples.reserve(g.samples.size());
  for (const auto& s : g.samples) chain.samples.push_back(SVParams::from(s));
  chain.log_marginals = g.log_marginals;
  chain.accepted = g.accepted;
  chain.degenerate = g.degenerate;
  return chain;
}

inline void write_chain_csv(const std::string& path, const PMHChain& chain) {
  std::ofstream out(path);
  if (!out) throw Error(Errc::Io, "cannot write " + path);
  out << "iter,mu,sigma_v,phi,log_marginal,accepted\n";
  out.precision(12);
  for (std::size_t i = 0; i < chain.samples.size(); ++i) {
    const auto& s = chain.samples[i];
    out << i + 1 << ',' << s.mu << ',' << s.sigma_v << ',' << s.phi << ',' << chain.log_marginals[i] << ','
        << (chain.accepted[i] ? 1 : 0) << '\n';
  }
}

// ---------------------------------------------------------------------------
// Diagnostics
// ---------------------------------------------------------------------------

/// Mean of accepted flags over [begin, end); end < 0 means the chain end.
inline double acceptance_rate(const std::vector<bool>& accepted, std::ptrdiff_t begin = 0, std::ptrdiff_t end = -1) {
  const auto n = static_cast<std::ptrdiff_t>(accepted.size());
  if (end < 0) end = n;
  if (begin < 0 || begin >= end || end > n) throw Error(Errc::InsufficientChain, "acceptance_rate: empty window");
  std::ptrdiff_t hits = 0;
  for (std::ptrdiff_t i = begin; i < end; ++i) hits += accepted[static_cast<std::size_t>(i)] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(end - begin);
}

inline double acceptance_rate(const PMHChain& chain, std::ptrdiff_t begin = 0, std::ptrdiff_t end = -1) {
  return acceptance_rate(chain.accepted, begin, end);
}

/// Sample ACF with the biased (1/T) normalisation, lags 0..max_lag.
inline std::vector<double> autocorrelation(std::span<const double> x, int max_lag) {
  if (max_lag < 0 || x.size() <= static_cast<std::size_t>(max_lag)) {
    throw Error(Errc::InsufficientChain, "autocorrelation: chain shorter than max_lag + 1");
  }
  const double n = static_cast<double>(x.size());
  double m = 0.0;
  for (double v : x) m += v;
  m /= n;
  double c0 = 0.0;
  for (double v : x) c0 += (v - m) * (v - m);
  std::vector<double> acf(static_cast<std::size_t>(max_lag) + 1, 0.0);
  if (c0 == 0.0) {
    acf[0] = 1.0;
    return acf;
  }
  for (int k = 0; k <= max_lag; ++k) {
    double ck = 0.0;
    for (std::size_t t = static_cast<std::size_t>(k); t < x.size(); ++t) ck += (x[t] - m) * (x[t - static_cast<std::size_t>(k)] - m);
    acf[static_cast<std::size_t>(k)] = ck / c0;
  }
  return acf;
}

enum class SVParam { Mu, SigmaV, Phi };

inline std::vector<double> autocorrelation(const PMHChain& chain, SVParam which, int max_lag) {
  std::vector<double> x;
  x.reserve(chain.samples.size());
  for (const auto& s : chain.samples) {
    x.push_back(which == SVParam::Mu ? s.mu : which == SVParam::SigmaV ? s.sigma_v : s.phi);
  }
  return autocorrelation(x, max_lag);
}

// ---------------------------------------------------------------------------
// Nested particle filter
// ---------------------------------------------------------------------------

struct NPFState {
  std::vector<SVParams> theta;
  std::vector<FilterState> inner;
  int time = 0;
  double log_evidence = 0.0;
};

struct NpfStepRecord {
  double log_evidence_increment = 0.0;
  Eigen::Vector3d theta_mean = Eigen::Vector3d::Zero();
  int degenerate = 0;
};

inline NPFState npf_init(int k, int n, const ParamPrior& prior, const RngStream& rng) {
  if (k < 1 || n < 1) throw Error(Errc::InvalidParam, "npf: K and N must be >= 1");
  NPFState s;
  const RngStream base = rng.split(0, 0);
  for (int i = 0; i < k; ++i) {
    RngStream r = base.split(static_cast<std::uint64_t>(i));
    SVParams p;
    do {
      p.mu = prior.mu_mean + prior.mu_sd * r.normal();
      p.sigma_v = std::gamma_distribution<double>(prior.sigma_shape, prior.sigma_scale)(r);
      const double ga = std::gamma_distribution<double>(prior.phi_a, 1.0)(r);
      const double gb = std::gamma_distribution<double>(prior.phi_b, 1.0)(r);
      p.phi = ga / (ga + gb);
    } while (!p.in_support());
    s.theta.push_back(p);
    s.inner.push_back(init_particles(build_stochvol(p.spec()), static_cast<std::size_t>(n), r.split(1)));
  }
  return s;
}

/// Jitter, advance each inner filter by one observation, weight the
/// parameter particles by their inner evidence increments, resample. The
/// evidence increment uses inner likelihoods taken before any nudging.
inline NpfStepRecord npf_step(NPFState& state, const Observation& y, const JitterKernel& jitter,
                              const FilterSetup& inner, const RngStream& rng) {
  const int t = state.time + 1;
  const RngStream step = rng.split(static_cast<std::uint64_t>(t));
  const std::size_t k = state.theta.size();
  std::vector<double> log_w(k);
  std::vector<double> log_ev(k);
  NpfStepRecord rec;
  for (std::size_t i = 0; i < k; ++i) {
    RngStream jr = step.split(0, i);
    state.theta[i] = jitter.apply(state.theta[i], jr);
    const StateSpaceModel model = build_stochvol(state.theta[i].spec());
    const RngStream ir = rng.split(1'000'000'007ULL, i);
    StepRecord r;
    // Inner filters keep their own clock; align it with the outer one.
    state.inner[i].time = t - 1;
    if (inner.kind == FilterKind::Nupf) {
      r = nupf_step(state.inner[i], model, y, inner.nudge, ir, EvidenceTiming::PreNudge);
    } else if (inner.kind == FilterKind::Bpf) {
      r = bpf_step(state.inner[i], model, y, ir);
    } else {
      throw Error(Errc::UnsupportedModel, "npf: inner filter must be bpf or nupf");
    }
    if (r.degenerate) ++rec.degenerate;
    log_ev[i] = r.pre_nudge_increment;
    log_w[i] = r.log_evidence_increment;
  }
  const double ninf = -std::numeric_limits<double>::infinity();
  double max_e = ninf;
  for (double v : log_ev) max_e = std::max(max_e, v);
  if (max_e == ninf) {
    rec.log_evidence_increment = ninf;
  } else {
    double acc = 0.0;
    for (double v : log_ev) acc += std::exp(v - max_e);
    rec.log_evidence_increment = max_e + std::log(acc / static_cast<double>(k));
  }

  ParticleEnsemble outer;
  for (std::size_t i = 0; i < k; ++i) {
    StateVector idx(1);
    idx[0] = static_cast<double>(i);
    outer.states.push_back(idx);
  }
  try {
    auto norm = normalize_log_weights(log_w);
    outer.log_weights = std::move(norm.log_weights);
  } catch (const Error& e) {
    if (e.code() != Errc::AllWeightsZero) throw;
    outer.log_weights.assign(k, -std::log(static_cast<double>(k)));
  }
  outer.normalized = true;
  for (std::size_t i = 0; i < k; ++i) rec.theta_mean += std::exp(outer.log_weights[i]) * state.theta[i].vec();
  RngStream rr = step.split(stream::kResample);
  const ParticleEnsemble picked = resample_multinomial(outer, rr);
  std::vector<SVParams> theta(k);
  std::vector<FilterState> filters(k);
  for (std::size_t i = 0; i < k; ++i) {
    const auto src = static_cast<std::size_t>(picked.states[i][0]);
    theta[i] = state.theta[src];
    filters[i] = state.inner[src];
  }
  state.theta = std::move(theta);
  state.inner = std::move(filters);
  state.time = t;
  state.log_evidence += rec.log_evidence_increment;
  return rec;
}

/// log of prod_t (1 / KN) sum_i sum_j g_t(x_t^{(i,j)}).
inline double npf_evidence(std::span<const NpfStepRecord> trace) {
  double total = 0.0;
  for (const auto& r : trace) total += r.log_evidence_increment;
  return total;
}

inline double npf_evidence(std::span<const Observation> observations, int k, int n, const ParamPrior& prior,
                           const JitterKernel& jitter, const FilterSetup& inner, const RngStream& rng) {
  NPFState s = npf_init(k, n, prior, rng);
  std::vector<NpfStepRecord> trace;
  trace.reserve(observations.size());
  for (const auto& y : observations) trace.push_back(npf_step(s, y, jitter, inner, rng));
  return npf_evidence(trace);
}

}  // namespace nupf
