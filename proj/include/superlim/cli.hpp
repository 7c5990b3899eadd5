#pragma once

// Command-line pipeline: each subcommand reads a scenario, computes, writes
// its artifacts into the run directory and appends one manifest record.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "superlim/assumptions.hpp"
#include "superlim/cumulant.hpp"
#include "superlim/io.hpp"
#include "superlim/skeleton.hpp"
#include "superlim/stats.hpp"

namespace superlim::cli {

namespace fs = std::filesystem;

enum ExitCode { kOk = 0, kCheckFailed = 1, kInputError = 2 };

struct Options {
  std::string subcommand;
  std::string target;  // scenario file, or run directory for `report`
  std::string out = "runs";
  std::uint64_t seed = 0;
  std::size_t samples = 100000;
  double horizon = 15.0;
  unsigned threads = 0;
  std::string theta_grid = "0.1:100:13";
  std::string complex_grid = "1:10000:13";
  double horizon_cap = 1e3;
  std::string batch;
  std::uint64_t threshold = WZSampler::kDefaultThreshold;
  double r_lo = 1e-3;
  double r_hi = 1e-1;
  int site = -1;
  double kde_a = 0.1;
  double kde_b = 3.0;
};

/// Raised for missing upstream artifacts; maps to exit code 2.
class MissingArtifact : public InputError {
 public:
  using InputError::InputError;
};

inline const std::vector<std::string>& subcommands() {
  static const std::vector<std::string> names = {"validate",   "spectra",   "extinction",
                                                 "cumulants",  "skeleton",  "sample-w",
                                                 "smallvalue", "tailcheck", "densitycheck",
                                                 "report"};
  return names;
}

/// "lo:hi:n" for n log-spaced points, or a comma-separated list.
inline std::vector<double> parse_grid(const std::string& spec) {
  std::vector<double> out;
  try {
    if (spec.find(':') != std::string::npos) {
      std::stringstream ss(spec);
      std::string a, b, c;
      std::getline(ss, a, ':');
      std::getline(ss, b, ':');
      std::getline(ss, c, ':');
      const double lo = std::stod(a), hi = std::stod(b);
      const int n = std::stoi(c);
      if (!(lo > 0.0) || !(hi >= lo) || n < 1) throw InputError("bad grid range");
      return log_grid(lo, hi, n);
    }
    std::stringstream ss(spec);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(std::stod(item));
  } catch (const std::logic_error&) {
    throw InputError("cannot parse grid \"" + spec + "\" (use lo:hi:n or a comma list)");
  }
  return out;
}

// ---------------------------------------------------------------------------
// Run directory and manifest

class RunDir {
 public:
  explicit RunDir(fs::path root) : root_(std::move(root)) {
    fs::create_directories(root_);
    index_ = count_records();
  }

  const fs::path& root() const { return root_; }
  int index() const { return index_; }

  /// Per-run artifact name such as 0003-feller1-cumulants.json.
  std::string artifact(const std::string& scenario, const std::string& what) const {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04d", index_);
    return std::string(buf) + "-" + scenario + "-" + what;
  }

  fs::path path(const std::string& name) const { return root_ / name; }

  void append(const Json& record) const {
    std::ofstream out(root_ / "manifest.jsonl", std::ios::app | std::ios::binary);
    out << record.dump() << '\n';
  }

  std::vector<Json> records() const {
    std::vector<Json> out;
    std::ifstream in(root_ / "manifest.jsonl");
    std::string line;
    while (std::getline(in, line))
      if (!line.empty()) out.push_back(Json::parse(line));
    return out;
  }

 private:
  int count_records() const {
    std::ifstream in(root_ / "manifest.jsonl");
    int n = 0;
    std::string line;
    while (std::getline(in, line))
      if (!line.empty()) ++n;
    return n;
  }

  fs::path root_;
  int index_ = 0;
};

struct Outcome {
  Json result;                       // verdict document
  std::map<std::string, bool> checks;
  std::vector<std::string> outputs;  // files written besides the verdict
  std::vector<std::string> inputs;   // files reused
  Json parameters = Json::object();
};

namespace detail {

inline Json checks_json(const std::map<std::string, bool>& checks) {
  Json out = Json::object();
  for (const auto& [k, v] : checks) out[k] = v;
  return out;
}

inline LimitOptions limit_options(const Options& o) {
  LimitOptions lo;
  lo.horizon_cap = o.horizon_cap;
  return lo;
}

inline SamplerConfig sampler_config(const Options& o) {
  SamplerConfig cfg;
  cfg.horizon = o.horizon;
  cfg.seed = o.seed;
  cfg.samples = o.samples;
  cfg.threads = o.threads;
  cfg.continuation_threshold = o.threshold;
  return cfg;
}

inline std::string batch_name(const Scenario& s, const char* kind, const Options& o, int site) {
  std::ostringstream key;
  key << hex64(scenario_hash(s)) << '|' << kind << '|' << o.seed << '|' << o.samples << '|'
      << o.horizon << '|' << o.threshold << '|' << site;
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : key.str()) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return s.name + "-" + kind + "-" + hex64(h).substr(0, 12) + ".csv";
}

// Resolves a batch: an explicit --batch path, a matching batch already in the
// run directory, or a fresh draw persisted for later subcommands.
template <class Draw>
SampleBatch resolve_batch(const RunDir& dir, const Scenario& s, const char* kind, const Options& o,
                          int site, Outcome& oc, Draw&& draw, bool allow_explicit = true) {
  if (allow_explicit && !o.batch.empty()) {
    if (!fs::exists(o.batch))
      throw MissingArtifact("batch file not found: " + o.batch +
                            " (run `superlim sample-w` first or drop --batch)");
    SampleBatch b = read_batch_csv(o.batch);
    if (b.scenario_name != s.name)
      throw InputError("batch " + o.batch + " belongs to scenario \"" + b.scenario_name + "\"");
    oc.inputs.push_back(o.batch);
    return b;
  }
  const std::string name = batch_name(s, kind, o, site);
  const fs::path csv = dir.path(name);
  if (fs::exists(csv)) {
    oc.inputs.push_back(name);
    return read_batch_csv(csv);
  }
  SampleBatch b = draw();
  write_batch_csv(b, csv);
  fs::path sidecar = csv;
  sidecar.replace_extension(".json");
  Json meta = batch_metadata(b);
  meta["scenario_hash"] = hex64(scenario_hash(s));
  meta["csv"] = name;
  write_json(meta, sidecar);
  oc.outputs.push_back(name);
  oc.outputs.push_back(sidecar.filename().string());
  return b;
}

inline Json spectral_json(const SpectralData& sd) {
  Json iu = Json::array();
  for (const IuFit& f : sd.iu)
    iu.push_back({{"delta", f.delta},
                  {"c", f.c},
                  {"gamma", std::isfinite(f.gamma) ? Json(f.gamma) : Json("inf")},
                  {"slack", f.slack},
                  {"degenerate", f.degenerate}});
  return {{"lambda0", sd.lambda0},
          {"phi0", vector_json(sd.phi0)},
          {"psi0", vector_json(sd.psi0)},
          {"lambda1", std::isfinite(sd.lambda1) ? Json(sd.lambda1) : Json("-inf")},
          {"residual", sd.residual},
          {"lambda0_star", sd.lambda0_star},
          {"phi0_star", vector_json(sd.phi0_star)},
          {"psi0_star", vector_json(sd.psi0_star)},
          {"residual_star", sd.residual_star},
          {"iu_fit", iu}};
}

inline double mean_of(const std::vector<double>& x) {
  double acc = 0.0;
  for (double xi : x) acc += xi;
  return acc / static_cast<double>(x.size());
}

inline double sd_of(const std::vector<double>& x) {
  const double m = mean_of(x);
  double acc = 0.0;
  for (double xi : x) acc += (xi - m) * (xi - m);
  return std::sqrt(acc / std::max<double>(1.0, static_cast<double>(x.size()) - 1.0));
}

inline int default_site(const ModelSolution& sol) {
  const Vector w = sol.v().cwiseProduct(sol.scenario.initial_measure);
  Eigen::Index best = 0;
  if (w.maxCoeff(&best) > 0.0) return static_cast<int>(best);
  return 0;
}

// ---------------------------------------------------------------------------
// Subcommands

inline Outcome cmd_validate(const Scenario& s, const Options&, const RunDir&) {
  const AssumptionReport rep = validate_assumptions(s);
  Outcome oc;
  oc.result = {{"M_bound", rep.M_bound},
               {"dual_submarkov_ok", rep.dual_submarkov_ok},
               {"continuity_ok", rep.continuity_ok},
               {"square_integrable_ok", rep.square_integrable_ok},
               {"square_integral_t1", rep.square_integral_t1},
               {"iu_checkable", rep.iu_checkable},
               {"lambda0", rep.lambda0},
               {"lambda0_positive", rep.lambda0_positive},
               {"extinction_proxy_ok", rep.extinction_proxy_ok},
               {"failures", rep.failures},
               {"warnings", rep.warnings}};
  oc.checks["assumptions"] = rep.ok();
  return oc;
}

inline void require_assumptions(const Scenario& s) {
  const AssumptionReport rep = validate_assumptions(s);
  if (!rep.ok()) {
    std::string msg = "scenario fails its assumption report:";
    for (const auto& f : rep.failures) msg += "\n  " + f;
    throw ModelError(msg);
  }
}

inline Outcome cmd_spectra(const Scenario& s, const Options&, const RunDir& dir) {
  require_assumptions(s);
  ModelSolution sol = solve_model(s);
  for (double delta : {0.5, 1.0})
    sol.spectral.iu.push_back(iu_fit(s, mean_triple(sol.spectral), delta));
  Outcome oc;
  oc.result = spectral_json(sol.spectral);
  const SpectralData& sd = sol.spectral;
  oc.checks["residual"] = sd.residual < 1e-12 && sd.residual_star < 1e-12;
  oc.checks["positive_vectors"] = (sd.phi0.array() > 0).all() && (sd.psi0.array() > 0).all() &&
                                  (sd.phi0_star.array() > 0).all() && (sd.psi0_star.array() > 0).all();
  oc.checks["lambda0_positive"] = sd.lambda0 > 0.0;
  oc.checks["lambda0_star_negative"] = sd.lambda0_star < 0.0;

  const std::string csv = dir.artifact(s.name, "spectra-q.csv");
  std::ofstream out(dir.path(csv), std::ios::binary);
  out << "t,x,y,q\n";
  char buf[96];
  for (int k = 0; k <= 20; ++k) {
    const double t = 0.25 * k;
    const Matrix tt = semigroup_T(s, t);
    for (int x = 0; x < s.sites(); ++x)
      for (int y = 0; y < s.sites(); ++y) {
        std::snprintf(buf, sizeof buf, "%.17g,%d,%d,%.17g\n", t, x, y, tt(x, y) / s.m()[y]);
        out << buf;
      }
  }
  oc.outputs.push_back(csv);
  return oc;
}

inline Outcome cmd_extinction(const Scenario& s, const Options&, const RunDir&) {
  require_assumptions(s);
  const ExtinctionData ext = extinction_v(s);
  Outcome oc;
  oc.result = {{"v", vector_json(ext.v)},
               {"q", vector_json(ext.q)},
               {"residual", ext.residual},
               {"stationarity", ext.stationarity},
               {"newton_converged", ext.newton_converged},
               {"warnings", ext.warnings}};
  oc.checks["fixed_point"] = ext.residual < 1e-8;
  oc.checks["q_in_unit_interval"] = (ext.q.array() > 0.0).all() && (ext.q.array() < 1.0).all();
  return oc;
}

inline Outcome cmd_cumulants(const Scenario& s, const Options& o, const RunDir& dir) {
  require_assumptions(s);
  const ModelSolution sol = solve_model(s);
  const LimitOptions lopt = limit_options(o);
  Outcome oc;
  const LlogLResult ll = llogl_check(s, sol.spectral);
  oc.result["llogl"] = {{"finite", ll.finite},
                        {"value", ll.finite ? Json(ll.value) : Json("inf")},
                        {"atomic", ll.atomic}};
  oc.checks["llogl_finite"] = ll.finite;
  if (!ll.finite) {
    oc.result["refused"] =
        "L log L fails: the Phi limit under the l0 = 1 convention is not defined for this scenario";
    return oc;
  }

  const std::vector<double> grid = parse_grid(o.theta_grid);
  const std::vector<double> cgrid = parse_grid(o.complex_grid);
  const CumulantTable tab = cumulant_table(sol, grid, cgrid, lopt);
  oc.result["horizon_T"] = tab.horizon_T;
  oc.result["l0_convention"] = tab.l0_convention;

  double resid = 0.0;
  for (double theta : grid)
    for (double t : {1.0, 2.0}) resid = std::max(resid, psi_residual(sol, theta, t, lopt));
  oc.result["psi_residual"] = resid;
  oc.checks["psi_self_consistency"] = resid < 1e-6;

  const CharFnCheck cf = charfn_check(sol, 16, lopt);
  oc.result["charfn"] = {{"sup_unit", cf.sup_unit}, {"delta", cf.delta}, {"decade_max", cf.decade_max}};
  oc.checks["charfn_unit"] = cf.unit_ok;
  oc.checks["charfn_envelope"] = cf.envelope_ok;

  if (s.initial_measure.sum() > 0.0) {
    const SmallValueConstants sv = smallvalue_constants(sol, s.initial_measure, lopt);
    oc.result["epsilon0"] = sv.epsilon0;
    oc.result["A_psi1"] = sv.A_psi1;
    oc.result["A_error"] = sv.A_error;
    oc.result["smallvalue_constant"] = sv.constant;
  }
  Json gl = Json::array();
  for (double t : {0.0, 1.0, 2.0, 5.0, 10.0}) {
    const GammaL g = gamma_L(sol, t, lopt);
    gl.push_back({{"t", t}, {"gamma", g.gamma}, {"L", g.L}, {"r", g.r}, {"h_sup", g.h_sup}});
  }
  oc.result["gamma_L"] = gl;
  const auto [c1, c2] = comparability_constants(sol);
  oc.result["comparability"] = {{"C1", c1}, {"C2", c2}};

  const std::string csv = dir.artifact(s.name, "cumulants.csv");
  {
    std::ofstream out(dir.path(csv), std::ios::binary);
    out << "theta,site,Phi,psi\n";
    char buf[128];
    for (std::size_t i = 0; i < grid.size(); ++i)
      for (int x = 0; x < s.sites(); ++x) {
        std::snprintf(buf, sizeof buf, "%.17g,%d,%.17g,%.17g\n", grid[i], x,
                      tab.Phi(static_cast<Eigen::Index>(i), x), tab.psi(static_cast<Eigen::Index>(i), x));
        out << buf;
      }
  }
  const std::string ccsv = dir.artifact(s.name, "cumulants-complex.csv");
  {
    std::ofstream out(dir.path(ccsv), std::ios::binary);
    out << "theta,site,re_psi,im_psi\n";
    char buf[128];
    for (std::size_t i = 0; i < cgrid.size(); ++i)
      for (int x = 0; x < s.sites(); ++x) {
        const Complex z = tab.psi_complex(static_cast<Eigen::Index>(i), x);
        std::snprintf(buf, sizeof buf, "%.17g,%d,%.17g,%.17g\n", cgrid[i], x, z.real(), z.imag());
        out << buf;
      }
  }
  oc.outputs.push_back(csv);
  oc.outputs.push_back(ccsv);
  return oc;
}

inline Outcome cmd_skeleton(const Scenario& s, const Options& o, const RunDir& dir) {
  require_assumptions(s);
  const ModelSolution sol = solve_model(s);
  const SkeletonModel mdl = build_skeleton(sol);
  const int x0 = o.site >= 0 ? o.site : default_site(sol);
  if (x0 >= s.sites()) throw InputError("--site out of range");
  Outcome oc;
  oc.parameters["site"] = x0;
  const SampleBatch b = resolve_batch(dir, s, "WZ", o, x0, oc, [&] {
    return sample_WZ(mdl, s.name, x0, sampler_config(o));
  }, false);
  const double n = static_cast<double>(b.values.size());
  const double target = mdl.phi0_over_v[x0];
  const double mean = mean_of(b.values);
  const double se = sd_of(b.values) / std::sqrt(n);
  oc.result["mean"] = mean;
  oc.result["mean_analytic"] = target;
  oc.result["mean_se"] = se;
  oc.checks["martingale_mean"] = std::abs(mean - target) <= 3.0 * se;

  Json lap = Json::array();
  bool lap_ok = true;
  for (double theta : {0.5, 1.0, 2.0, 5.0}) {
    std::vector<double> e(b.values.size());
    for (std::size_t i = 0; i < e.size(); ++i) e[i] = std::exp(-theta * b.values[i]);
    const double emp = mean_of(e);
    const double esd = sd_of(e) / std::sqrt(n);
    const double ana = psi_eval(sol, theta, limit_options(o))[x0];
    lap_ok = lap_ok && std::abs(emp - ana) <= 3.0 * esd;
    lap.push_back({{"theta", theta}, {"empirical", emp}, {"psi", ana}, {"se", esd}});
  }
  oc.result["laplace_vs_psi"] = lap;
  oc.checks["psi_match"] = lap_ok;

  // first moments of the skeleton against v^{-1} T_t (v 1_y)
  const std::size_t runs = std::min<std::size_t>(o.samples, 20000);
  Json mom = Json::array();
  bool mom_ok = true;
  for (double t : {1.0, 2.0}) {
    std::vector<std::vector<double>> counts(runs);
    parallel_for(runs, resolve_threads(o.threads), [&](std::size_t i) {
      Philox4x32 eng(o.seed ^ 0x5bd1e995ull, (static_cast<std::uint64_t>(t) << 40) + i);
      const auto c = simulate_skeleton(mdl, x0, t, eng).counts(s.sites());
      counts[i].assign(c.begin(), c.end());
    });
    const Matrix tt = semigroup_T(s, t);
    for (int y = 0; y < s.sites(); ++y) {
      std::vector<double> col(runs);
      for (std::size_t i = 0; i < runs; ++i) col[i] = counts[i][static_cast<std::size_t>(y)];
      const double emp = mean_of(col);
      const double esd = sd_of(col) / std::sqrt(static_cast<double>(runs));
      const double ana = tt(x0, y) * sol.v()[y] / sol.v()[x0];
      const bool ok = std::abs(emp - ana) <= 3.0 * esd + 1e-12;
      mom_ok = mom_ok && ok;
      mom.push_back({{"t", t}, {"site", y}, {"empirical", emp}, {"analytic", ana}, {"se", esd}});
    }
  }
  oc.result["first_moments"] = mom;
  oc.checks["first_moments"] = mom_ok;
  return oc;
}

inline SampleBatch w_batch(const ModelSolution& sol, const Options& o, const RunDir& dir,
                           Outcome& oc) {
  const SkeletonModel mdl = build_skeleton(sol);
  return resolve_batch(dir, sol.scenario, "W", o, -1, oc, [&] {
    return sample_W(sol, mdl, sol.scenario.initial_measure, sampler_config(o));
  });
}

inline Outcome cmd_sample_w(const Scenario& s, const Options& o, const RunDir& dir) {
  require_assumptions(s);
  if (!(s.initial_measure.sum() > 0.0)) throw InputError("mu: must be non-zero to sample W");
  const ModelSolution sol = solve_model(s);
  Outcome oc;
  const SampleBatch b = w_batch(sol, o, dir, oc);
  const double n = static_cast<double>(b.values.size());
  const double vmu = sol.v().dot(s.initial_measure);
  const double p0 = std::exp(-vmu);
  const double zeros = static_cast<double>(std::count(b.values.begin(), b.values.end(), 0.0));
  const double sigma = std::sqrt(p0 * (1.0 - p0) / n);
  oc.result["p_zero"] = zeros / n;
  oc.result["p_zero_analytic"] = p0;
  oc.result["p_zero_sigma"] = sigma;
  oc.checks["zero_mass"] = std::abs(zeros / n - p0) < 3.0 * sigma;

  const std::vector<double> thetas = log_grid(0.1, 10.0, 15);
  const LimitOptions lopt = limit_options(o);
  const double dist = laplace_distance(
      b.values, [&](double th) { return std::exp(-big_Phi(sol, th, lopt).dot(s.initial_measure)); },
      thetas);
  // 0.005 at 10^6 samples, widened with the CLT scale for smaller batches
  const double tol = 0.005 * std::max(1.0, std::sqrt(1e6 / n));
  oc.result["laplace_distance"] = dist;
  oc.result["laplace_tolerance"] = tol;
  oc.checks["laplace"] = dist < tol;
  oc.result["mean"] = mean_of(b.values);
  oc.result["mean_analytic"] = sol.spectral.phi0.dot(s.initial_measure);
  return oc;
}

inline Outcome cmd_smallvalue(const Scenario& s, const Options& o, const RunDir& dir) {
  require_assumptions(s);
  const ModelSolution sol = solve_model(s);
  const LimitOptions lopt = limit_options(o);
  const SmallValueConstants sv = smallvalue_constants(sol, s.initial_measure, lopt);
  Outcome oc;
  const SampleBatch b = w_batch(sol, o, dir, oc);
  SmallValueOptions so;
  so.seed = o.seed;
  const EcdfFit fit = smallvalue_fit(b.values, o.r_lo, o.r_hi, so);
  oc.parameters["r_lo"] = o.r_lo;
  oc.parameters["r_hi"] = o.r_hi;
  oc.result = {{"epsilon0_analytic", sv.epsilon0},
               {"epsilon0_fitted", fit.slope},
               {"epsilon0_ci", {fit.slope_lo, fit.slope_hi}},
               {"constant_analytic", sv.constant},
               {"constant_fitted", fit.constant()},
               {"constant_ci", {fit.constant_lo, fit.constant_hi}},
               {"A_psi1", sv.A_psi1},
               {"r_grid", fit.r_grid},
               {"ecdf", fit.ecdf}};
  oc.checks["slope"] = std::abs(fit.slope - sv.epsilon0) <= 0.05;
  oc.checks["constant"] = std::abs(fit.constant() / sv.constant - 1.0) <= 0.15;
  return oc;
}

inline Outcome cmd_tailcheck(const Scenario& s, const Options& o, const RunDir& dir) {
  require_assumptions(s);
  const ModelSolution sol = solve_model(s);
  const LimitOptions lopt = limit_options(o);
  Outcome oc;
  const SampleBatch b = w_batch(sol, o, dir, oc);
  const TailCheck tc = tail_decay_check(b.values, [&](double r) { return Ltilde(sol, r, lopt); });
  std::vector<double> lt;
  for (double r : tc.r) lt.push_back(Ltilde(sol, r, lopt));
  oc.result = {{"r", tc.r},
               {"statistic", tc.statistic},
               {"Ltilde", lt},
               {"exceedances", tc.exceedances},
               {"inconclusive", tc.inconclusive},
               {"pass", tc.pass}};
  oc.checks["tail_decay"] = tc.pass && !tc.inconclusive;
  return oc;
}

inline Outcome cmd_densitycheck(const Scenario& s, const Options& o, const RunDir& dir) {
  require_assumptions(s);
  const ModelSolution sol = solve_model(s);
  Outcome oc;
  const SampleBatch w = w_batch(sol, o, dir, oc);
  const KdeCheck kc = kde_positivity(w.values, o.kde_a, o.kde_b);
  oc.result["kde_min"] = kc.min_density;
  oc.result["kde_bandwidth"] = kc.bandwidth;
  oc.result["kde_grid"] = kc.grid;
  oc.result["kde_density"] = kc.density;
  oc.checks["kde_positive"] = kc.pass;

  const SkeletonModel mdl = build_skeleton(sol);
  Options yo = o;
  yo.batch.clear();
  const SampleBatch y = resolve_batch(dir, s, "Y", yo, -1, oc, [&] {
    return sample_Y(sol, mdl, s.initial_measure, sampler_config(o));
  });
  const double mass = sol.v().dot(s.initial_measure);
  std::vector<double> ygrid;
  for (int i = 0; i <= 300; ++i) ygrid.push_back(o.kde_b * i / 300.0);
  const DensitySeries ds = density_series(y.values, mass, ygrid);
  const double weight = mass * std::exp(-mass);
  double worst = 0.0;
  bool lower_ok = true;
  for (std::size_t i = 0; i < ygrid.size(); ++i) {
    const double bound = ds.g[i] * weight;
    worst = std::min(worst, ds.f[i] - bound);
    if (ds.f[i] < bound - 1e-12 * std::max(1.0, bound)) lower_ok = false;
  }
  oc.result["series_grid"] = ygrid;
  oc.result["series_f"] = ds.f;
  oc.result["series_mass"] = ds.mass;
  oc.result["series_mass_expected"] = 1.0 - std::exp(-mass);
  oc.result["series_terms"] = ds.terms;
  oc.result["lower_bound_min_gap"] = worst;
  oc.checks["series_lower_bound"] = lower_ok;
  oc.checks["series_mass"] = std::abs(ds.mass - (1.0 - std::exp(-mass))) <= 1e-3;
  return oc;
}

// ---------------------------------------------------------------------------
// Report

inline std::string fmt(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", x);
  return buf;
}

}  // namespace detail

/// Aggregates the latest verdict per (scenario, subcommand) into
/// NNNN-report.json and NNNN-report.txt. Sections are ordered by scenario name.
inline int emit_report(const fs::path& root, std::ostream& out, std::ostream& err) {
  if (!fs::exists(root / "manifest.jsonl")) {
    err << "error: " << root.string() << " has no manifest (empty directory)\n";
    return kInputError;
  }
  const RunDir dir(root);
  const std::vector<Json> records = dir.records();
  std::map<std::string, std::map<std::string, Json>> latest;
  for (const Json& r : records) {
    if (r.value("subcommand", std::string()) == "report") continue;
    latest[r.at("scenario").get<std::string>()][r.at("subcommand").get<std::string>()] = r;
  }
  if (latest.empty()) {
    err << "error: " << root.string() << " has no verdicts to report\n";
    return kInputError;
  }

  Json report = Json::object();
  Json sections = Json::array();
  std::ostringstream text;
  bool all_pass = true;
  for (const auto& [scenario, subs] : latest) {
    Json sec = {{"scenario", scenario}};
    text << "== " << scenario << '\n';
    Json checks = Json::object();
    for (const auto& [sub, rec] : subs) {
      checks[sub] = rec.at("checks");
      for (const auto& [name, pass] : rec.at("checks").items()) {
        text << "  " << (pass.get<bool>() ? "PASS" : "FAIL") << "  " << sub << "." << name << '\n';
        all_pass = all_pass && pass.get<bool>();
      }
    }
    sec["checks"] = checks;

    auto verdict = [&](const std::string& sub) -> Json {
      const auto it = subs.find(sub);
      if (it == subs.end()) return Json();
      return read_json(root / it->second.at("verdict").get<std::string>());
    };
    const Json sv = verdict("smallvalue");
    const Json tc = verdict("tailcheck");
    if (!sv.is_null()) {
      const bool ok = subs.at("smallvalue").at("pass").get<bool>() &&
                      (tc.is_null() || subs.at("tailcheck").at("pass").get<bool>());
      sec["main_tail"] = {{"epsilon0_analytic", sv["epsilon0_analytic"]},
                          {"epsilon0_fitted", sv["epsilon0_fitted"]},
                          {"epsilon0_ci", sv["epsilon0_ci"]},
                          {"constant_analytic", sv["constant_analytic"]},
                          {"constant_fitted", sv["constant_fitted"]},
                          {"constant_ci", sv["constant_ci"]},
                          {"tail_statistic", tc.is_null() ? Json() : tc["statistic"]},
                          {"pass", ok}};
      text << "  main-tail: epsilon0 analytic " << detail::fmt(sv["epsilon0_analytic"].get<double>())
           << " vs fitted " << detail::fmt(sv["epsilon0_fitted"].get<double>()) << " ["
           << detail::fmt(sv["epsilon0_ci"][0].get<double>()) << ", "
           << detail::fmt(sv["epsilon0_ci"][1].get<double>()) << "]; constant analytic "
           << detail::fmt(sv["constant_analytic"].get<double>()) << " vs fitted "
           << detail::fmt(sv["constant_fitted"].get<double>()) << " -> " << (ok ? "PASS" : "FAIL") << '\n';
    }
    const Json dc = verdict("densitycheck");
    if (!dc.is_null()) {
      const bool ok = subs.at("densitycheck").at("pass").get<bool>();
      sec["main_dens"] = {{"kde_min", dc["kde_min"]},
                          {"lower_bound_min_gap", dc["lower_bound_min_gap"]},
                          {"series_mass", dc["series_mass"]},
                          {"series_mass_expected", dc["series_mass_expected"]},
                          {"pass", ok}};
      text << "  main-dens: kde min " << detail::fmt(dc["kde_min"].get<double>()) << ", series mass "
           << detail::fmt(dc["series_mass"].get<double>()) << " vs "
           << detail::fmt(dc["series_mass_expected"].get<double>()) << " -> " << (ok ? "PASS" : "FAIL")
           << '\n';
    }
    sections.push_back(sec);
  }
  report["sections"] = sections;
  report["pass"] = all_pass;

  const std::string jname = dir.artifact("all", "report.json");
  const std::string tname = dir.artifact("all", "report.txt");
  write_json(report, dir.path(jname));
  std::ofstream(dir.path(tname), std::ios::binary) << text.str();
  dir.append({{"run", dir.index()},
              {"scenario", "all"},
              {"subcommand", "report"},
              {"outputs", {jname, tname}},
              {"pass", all_pass}});
  out << text.str();
  return all_pass ? kOk : kCheckFailed;
}

/// Entry point shared by the executable and the tests.
inline int run(std::vector<std::string> args, std::ostream& out = std::cout,
               std::ostream& err = std::cerr) {
  Options o;
  CLI::App app{"superlim: supercritical superprocess numerical lab"};
  app.add_option("subcommand", o.subcommand, "validate | spectra | extinction | cumulants | skeleton | "
                                              "sample-w | smallvalue | tailcheck | densitycheck | report")
      ->required();
  app.add_option("target", o.target, "scenario JSON file (run directory for report)")->required();
  app.add_option("--out", o.out, "run directory");
  app.add_option("--seed", o.seed, "base seed");
  app.add_option("--samples", o.samples, "Monte Carlo sample count");
  app.add_option("--horizon", o.horizon, "simulation horizon T");
  app.add_option("--threads", o.threads, "worker threads (0: all cores; SUPERLIM_THREADS overrides)");
  app.add_option("--theta-grid", o.theta_grid, "lo:hi:n (log-spaced) or comma list");
  app.add_option("--complex", o.complex_grid, "grid for psi(i theta), same syntax");
  app.add_option("--horizon-cap", o.horizon_cap, "largest T used by the Phi limit");
  app.add_option("--batch", o.batch, "existing W batch CSV");
  app.add_option("--threshold", o.threshold, "population at which the Gaussian continuation starts (0: off)");
  app.add_option("--r-lo", o.r_lo, "small-value window lower end");
  app.add_option("--r-hi", o.r_hi, "small-value window upper end");
  app.add_option("--site", o.site, "start site for skeleton batches");
  app.add_option("--kde-a", o.kde_a, "density window lower end");
  app.add_option("--kde-b", o.kde_b, "density window upper end");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kInputError;
  }

  const auto& names = subcommands();
  if (std::find(names.begin(), names.end(), o.subcommand) == names.end()) {
    err << "error: unknown subcommand \"" << o.subcommand << "\"\n";
    return kInputError;
  }
  if (o.subcommand == "report") return emit_report(o.target, out, err);

  const auto start = std::chrono::steady_clock::now();
  try {
    const Scenario s = load_scenario(o.target);
    const RunDir dir(o.out);
    Outcome oc;
    if (o.subcommand == "validate") oc = detail::cmd_validate(s, o, dir);
    else if (o.subcommand == "spectra") oc = detail::cmd_spectra(s, o, dir);
    else if (o.subcommand == "extinction") oc = detail::cmd_extinction(s, o, dir);
    else if (o.subcommand == "cumulants") oc = detail::cmd_cumulants(s, o, dir);
    else if (o.subcommand == "skeleton") oc = detail::cmd_skeleton(s, o, dir);
    else if (o.subcommand == "sample-w") oc = detail::cmd_sample_w(s, o, dir);
    else if (o.subcommand == "smallvalue") oc = detail::cmd_smallvalue(s, o, dir);
    else if (o.subcommand == "tailcheck") oc = detail::cmd_tailcheck(s, o, dir);
    else oc = detail::cmd_densitycheck(s, o, dir);

    bool pass = true;
    for (const auto& [k, v] : oc.checks) pass = pass && v;
    oc.result["scenario"] = s.name;
    oc.result["checks"] = detail::checks_json(oc.checks);
    oc.result["pass"] = pass;
    const std::string verdict = dir.artifact(s.name, o.subcommand + ".json");
    write_json(oc.result, dir.path(verdict));

    Json params = oc.parameters;
    params["samples"] = o.samples;
    params["horizon"] = o.horizon;
    params["theta_grid"] = o.theta_grid;
    params["complex"] = o.complex_grid;
    params["horizon_cap"] = o.horizon_cap;
    params["threshold"] = o.threshold;
    if (!o.batch.empty()) params["batch"] = o.batch;
    std::vector<std::string> outputs = {verdict};
    outputs.insert(outputs.end(), oc.outputs.begin(), oc.outputs.end());
    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    dir.append({{"run", dir.index()},
                {"scenario", s.name},
                {"scenario_hash", hex64(scenario_hash(s))},
                {"subcommand", o.subcommand},
                {"parameters", params},
                {"seed", o.seed},
                {"verdict", verdict},
                {"outputs", outputs},
                {"inputs", oc.inputs},
                {"wall_time_s", wall},
                {"checks", detail::checks_json(oc.checks)},
                {"pass", pass}});
    out << s.name << ' ' << o.subcommand << ": " << (pass ? "PASS" : "FAIL") << '\n';
    for (const auto& [k, v] : oc.checks) out << "  " << (v ? "PASS" : "FAIL") << "  " << k << '\n';
    out << "  verdict: " << (dir.root() / verdict).string() << '\n';
    return pass ? kOk : kCheckFailed;
  } catch (const InputError& e) {
    err << "error: " << e.what() << '\n';
    return kInputError;
  } catch (const PreconditionError& e) {
    err << "error: " << e.what() << '\n';
    return kInputError;
  } catch (const Error& e) {
    err << "failed: " << e.what() << '\n';
    return kCheckFailed;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return kInputError;
  }
}

}  // namespace superlim::cli
