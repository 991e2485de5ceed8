// Generates the bundled synthetic price series from the stochastic-volatility
// model: prices follow s_t = s_{t-1} exp(y_t / 100) with y_t the simulated returns.

#include <cstdio>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "nupf/inference.hpp"
#include "nupf/models/stochvol.hpp"
#include "nupf/simulate.hpp"

namespace {

// Civil date from days since 1970-01-01 (proleptic Gregorian).
std::string iso_date(long days) {
  days += 719468;
  const long era = (days >= 0 ? days : days - 146096) / 146097;
  const long doe = days - era * 146097;
  const long yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
  const long doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
  const long mp = (5 * doy + 2) / 153;
  const long d = doy - (153 * mp + 2) / 5 + 1;
  const long m = mp < 10 ? mp + 3 : mp - 9;
  const long y = yoe + era * 400 + (m <= 2 ? 1 : 0);
  char buf[64];
  std::snprintf(buf, sizeof buf, "%04ld-%02ld-%02ld", y, m, d);
  return buf;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Write a synthetic date,price CSV from the stochastic-volatility model"};
  std::string out = "sv_prices.csv";
  int returns = 500;
  std::uint64_t seed = 7;
  nupf::StochVolSpec spec{-0.2, 0.15, 0.97};
  double start = 1.10;
  app.add_option("--out", out, "Output CSV path");
  app.add_option("--returns", returns, "Number of returns (prices = returns + 1)")->check(CLI::PositiveNumber);
  app.add_option("--seed", seed, "Seed");
  app.add_option("--mu", spec.mu, "Mean log-volatility");
  app.add_option("--sigma-v", spec.sigma_v, "Log-volatility noise sd");
  app.add_option("--phi", spec.phi, "AR(1) coefficient");
  app.add_option("--start", start, "Initial price");
  CLI11_PARSE(app, argc, argv);

  try {
    const auto model = nupf::build_stochvol(spec);
    const auto traj = nupf::simulate(model, returns, nupf::RngStream(seed));
    nupf::PriceSeries series;
    long day = 18262;  // 2020-01-01
    double price = start;
    series.dates.push_back(iso_date(day));
    series.prices.push_back(price);
    for (const auto& y : traj.observations) {
      ++day;
      price *= std::exp(y.values[0] / 100.0);
      series.dates.push_back(iso_date(day));
      series.prices.push_back(price);
    }
    nupf::write_price_csv(out, series);
    std::cout << "wrote " << series.prices.size() << " prices to " << out << '\n';
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
