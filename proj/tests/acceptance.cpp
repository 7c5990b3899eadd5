// Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "common.hpp"
#include "oracles.hpp"
#include "superlim/cli.hpp"
#include "superlim/skeleton.hpp"
#include "superlim/stats.hpp"

using namespace superlim;
namespace fs = std::filesystem;

namespace {

int failures = 0;

void report(const char* id, bool pass, const std::string& detail) {
  std::printf("%s %s  %s\n", id, pass ? "PASS" : "FAIL", detail.c_str());
  std::fflush(stdout);
  if (!pass) ++failures;
}

std::string fmt(const char* f, double a, double b = 0, double c = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

const std::vector<std::string> kAll = {"feller1", "poissonic", "twosite", "threesite",
                                       "heavytail_q2", "heavytail_q3"};

void ac1() {
  const auto t0 = std::chrono::steady_clock::now();
  const ModelSolution& f = solution("feller1");
  double worst_phi = 0.0;
  for (double theta : {0.1, 1.0, 10.0, 100.0})
    worst_phi = std::max(worst_phi, std::abs(big_Phi(f, theta)[0] - oracle::feller_Phi(theta)));
  const double a = operator_A(f, psi_eval(f, 1.0)).value;
  const SmallValueConstants sv = smallvalue_constants(f, Vector::Ones(1));
  const ModelSolution& p = solution("poissonic");
  const double pv = oracle::poissonic_v();
  const double peps = smallvalue_constants(p, Vector::Ones(1)).epsilon0;
  const double dv = std::abs(f.v()[0] - 1.0);
  const double dl = std::max(std::abs(f.lambda0() - 1.0), std::abs(f.lambda0_star() + 1.0));
  const double dpv = std::abs(p.v()[0] - pv);
  const double deps = std::abs(peps - (pv - 1.0));
  const double secs = seconds_since(t0);
  const bool pass = dv < 1e-10 && dl < 1e-12 && worst_phi < 1e-6 && std::abs(a - 1.0) < 1e-4 &&
                    std::abs(sv.constant - std::exp(-1.0)) < 1e-4 && dpv < 1e-10 && deps < 1e-8 &&
                    secs < 10.0;
  std::ostringstream d;
  d << "closed forms: |v-1|=" << dv << " |lambda|=" << dl << " |Phi|=" << worst_phi << " |A-1|="
    << std::abs(a - 1.0) << " |const-e^-1|=" << std::abs(sv.constant - std::exp(-1.0))
    << " |v_pois|=" << dpv << " |eps_pois|=" << deps << " (" << secs << " s)";
  report("AC1", pass, d.str());
}

void ac2() {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  int violations = 0, checks = 0;
  for (const char* name : {"twosite", "threesite"}) {
    const ModelSolution& sol = solution(name);
    const int d = sol.scenario.sites();
    const double bmax = sol.coeffs.b.maxCoeff();
    for (int k = 0; k < 50; ++k) {
      Vector f(d);
      for (int x = 0; x < d; ++x) f[x] = unit(rng);
      for (double t : {0.5, 1.0, 2.0, 4.0}) {
        const Vector g = vbar_t<double>(sol, f, t);
        const Vector lo = tstar_t(sol, f, t);
        const Vector hi = (1.0 + sup_norm(f) * std::exp(bmax * t)) * lo;
        for (int x = 0; x < d; ++x) {
          ++checks;
          if (g[x] < lo[x] - 1e-8 || g[x] > hi[x] + 1e-8) ++violations;
        }
      }
    }
  }
  report("AC2", violations == 0,
         "T*_t f <= Vbar_t f <= (1+|f| e^{|b| t}) T*_t f: " + std::to_string(violations) +
             " violations in " + std::to_string(checks) + " checks");
}

void ac3() {
  bool pass = true;
  std::ostringstream d;
  for (const char* name : {"poissonic", "twosite"}) {
    const ModelSolution& sol = solution(name);
    const Vector p1 = psi_eval(sol, 1.0);
    const double a = operator_A(sol, p1).value;
    std::vector<double> err;
    for (double t : {5.0, 10.0, 20.0}) {
      const Vector g = vbar_t<double>(sol, p1, t);
      err.push_back(sup_norm(Vector(std::exp(-sol.lambda0_star() * t) * g - a * sol.spectral.phi0_star)));
    }
    const bool ok = err[0] > err[1] && err[1] > err[2] && err[2] < 1e-3;
    pass = pass && ok;
    d << name << " errors " << err[0] << ", " << err[1] << ", " << err[2] << "; ";
  }
  report("AC3", pass, d.str());
}

void ac4() {
  double worst = 0.0;
  for (const auto& name : kAll) {
    const ModelSolution& sol = solution(name);
    for (double theta : log_grid(0.1, 100.0, 13))
      for (double t : {1.0, 2.0}) worst = std::max(worst, psi_residual(sol, theta, t));
  }
  report("AC4", worst < 1e-6, fmt("max psi self-consistency residual %.3g over 6 scenarios", worst));
}

struct WRun {
  const ModelSolution* sol;
  SampleBatch batch;
};

WRun draw_w(const std::string& name, std::size_t n, std::uint64_t seed) {
  const ModelSolution& sol = solution(name);
  const SkeletonModel mdl = build_skeleton(sol);
  SamplerConfig cfg;
  cfg.samples = n;
  cfg.seed = seed;
  cfg.horizon = 15.0;
  cfg.threads = 0;
  const auto t0 = std::chrono::steady_clock::now();
  WRun out{&sol, sample_W(sol, mdl, sol.scenario.initial_measure, cfg)};
  std::printf("     (%s: %zu W samples in %.1f s)\n", name.c_str(), n, seconds_since(t0));
  return out;
}

void ac5(const std::vector<WRun>& runs) {
  bool pass = true;
  std::ostringstream d;
  for (const WRun& r : runs) {
    const SmallValueConstants sv = smallvalue_constants(*r.sol, r.sol->scenario.initial_measure);
    SmallValueOptions so;
    so.seed = 1;
    const EcdfFit fit = smallvalue_fit(r.batch.values, 1e-3, 1e-1, so);
    const bool ok = std::abs(fit.slope - sv.epsilon0) <= 0.05 &&
                    std::abs(fit.constant() / sv.constant - 1.0) <= 0.15;
    pass = pass && ok;
    d << r.sol->scenario.name << " slope " << fit.slope << " vs " << sv.epsilon0 << ", const "
      << fit.constant() << " vs " << sv.constant << "; ";
  }
  report("AC5", pass, d.str());
}

void ac6(const std::vector<WRun>& runs) {
  bool pass = true;
  std::ostringstream d;
  for (const WRun& r : runs) {
    const ModelSolution& sol = *r.sol;
    const Vector& mu = sol.scenario.initial_measure;
    const double n = static_cast<double>(r.batch.values.size());
    const double p0 = std::exp(-sol.v().dot(mu));
    const double zeros = static_cast<double>(std::count(r.batch.values.begin(), r.batch.values.end(), 0.0));
    const double z = (zeros / n - p0) / std::sqrt(p0 * (1 - p0) / n);
    const double dist = laplace_distance(
        r.batch.values, [&](double th) { return std::exp(-big_Phi(sol, th).dot(mu)); }, log_grid(0.1, 10.0, 25));
    const bool ok = std::abs(z) < 3.0 && dist < 0.005;
    pass = pass && ok;
    d << sol.scenario.name << " P0 dev " << z << " sigma, Laplace dist " << dist << "; ";
  }
  report("AC6", pass, d.str());
}

void ac7(const WRun& feller) {
  const ModelSolution& sol = *feller.sol;
  const KdeCheck wide = kde_positivity(feller.batch.values, 0.1, 3.0);
  const KdeCheck mid = kde_positivity(feller.batch.values, 0.2, 2.0);
  double dist = 0.0;
  for (std::size_t i = 0; i < mid.grid.size(); ++i)
    dist = std::max(dist, std::abs(mid.density[i] - oracle::feller_W_density(mid.grid[i])));

  SamplerConfig cfg;
  cfg.samples = 200000;
  cfg.seed = 7;
  cfg.horizon = 15.0;
  cfg.threads = 0;
  const SampleBatch y = sample_Y(sol, build_skeleton(sol), sol.scenario.initial_measure, cfg);
  const double mass = sol.v().dot(sol.scenario.initial_measure);
  std::vector<double> grid;
  for (int i = 0; i <= 300; ++i) grid.push_back(3.0 * i / 300.0);
  const DensitySeries ds = density_series(y.values, mass, grid);
  int below = 0;
  for (std::size_t i = 0; i < grid.size(); ++i)
    if (ds.f[i] < ds.g[i] * mass * std::exp(-mass) - 1e-12) ++below;
  const bool pass = wide.min_density > 0.02 && dist < 0.02 && below == 0;
  report("AC7", pass,
         fmt("feller1 KDE min on [0.1,3] %.4f, sup dist to Bessel density on [0.2,2] %.4f", wide.min_density,
             dist) +
             ", lower-bound violations " + std::to_string(below));
}

void ac8() {
  bool pass = true;
  std::ostringstream d;
  for (const auto& name : kAll) {
    const CharFnCheck c = charfn_check(solution(name));
    pass = pass && c.unit_ok && c.envelope_ok;
    d << name << " sup " << c.sup_unit << (c.envelope_ok ? "" : " envelope rises") << "; ";
  }
  report("AC8", pass, d.str());
}

void ac9(const WRun& feller) {
  const ModelSolution& sol = *feller.sol;
  const TailCheck tc = tail_decay_check(feller.batch.values, [&](double r) { return Ltilde(sol, r); });
  std::ostringstream d;
  d << "feller1 statistic";
  for (double s : tc.statistic) d << ' ' << s;
  d << "; final/first " << tc.statistic.back() / tc.statistic.front();
  report("AC9", tc.pass && !tc.inconclusive, d.str());
}

void ac10() {
  bool atomic_ok = true;
  for (const char* name : {"feller1", "poissonic", "twosite", "threesite"})
    atomic_ok = atomic_ok && llogl_check(scenario(name), solution(name).spectral).finite;
  const bool q2 = llogl_check(scenario("heavytail_q2"), solution("heavytail_q2").spectral).finite;
  const LlogLResult q3 = llogl_check(scenario("heavytail_q3"), solution("heavytail_q3").spectral);
  report("AC10", atomic_ok && !q2 && q3.finite,
         std::string("atomic finite: ") + (atomic_ok ? "yes" : "no") + ", q=2: " + (q2 ? "finite" : "inf") +
             ", q=3: " + (q3.finite ? fmt("%.6g", q3.value) : std::string("inf")));
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void ac11() {
  const fs::path base = fs::temp_directory_path() / "superlim_ac11";
  fs::remove_all(base);
  std::vector<std::string> contents;
  for (const char* threads : {"1", "3"}) {
    const fs::path dir = base / threads;
    std::ostringstream sink;
    cli::run({"sample-w", std::string(SUPERLIM_SCENARIO_DIR) + "/twosite.json", "--out", dir.string(),
              "--samples", "30000", "--seed", "11", "--threads", threads},
             sink, sink);
    for (const auto& e : fs::directory_iterator(dir))
      if (e.path().extension() == ".csv") contents.push_back(slurp(e.path()));
  }
  fs::remove_all(base);
  const bool pass = contents.size() == 2 && !contents[0].empty() && contents[0] == contents[1];
  report("AC11", pass,
         "sample-w batch CSV at 1 vs 3 threads: " + std::string(pass ? "byte-identical" : "differs") + " (" +
             std::to_string(contents.empty() ? 0 : contents[0].size()) + " bytes)");
}

}  // namespace

int main() {
  try {
    ac1();
    ac2();
    ac3();
    ac4();
    const std::vector<WRun> runs = {draw_w("feller1", 1000000, 7), draw_w("poissonic", 1000000, 7)};
    ac5(runs);
    ac6(runs);
    ac7(runs[0]);
    ac8();
    ac9(runs[0]);
    ac10();
    ac11();
  } catch (const std::exception& e) {
    std::printf("acceptance aborted: %s\n", e.what());
    return 2;
  }
  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
