// Acceptance suite: one PASS/FAIL line per criterion.
//
//   lcsurv_acceptance [--replicates N] [--starts S] [--threads T]
//                     [--criteria 1,2,...] [--expect-fail 6,10] [--smoke]
//
// Criteria listed in --expect-fail are reported as "FAIL (expected)" and do
// not affect the exit status; an unexpected PASS of such a criterion is
// reported but also tolerated. Any other FAIL makes the exit status 1.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "lcsurv/io.hpp"
#include "support.hpp"

using namespace lcsurv;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

struct Settings {
  std::size_t replicates = 100;
  std::size_t starts = 30;
  unsigned threads = 1;
  bool smoke = false;
};

std::string num(double v, const char* f = "%.6g") {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// ------------------------------------------------------------------ 1

Verdict information_criteria() {
  struct Row {
    double neg2ll;
    std::size_t n_params;
    double aic, bic, abic;
  };
  const Row rows[] = {{12383.81, 3, 12389.81, 12406.30, 12396.77}, {12258.39, 10, 12278.39, 12333.32, 12301.55},
                     {12235.15, 17, 12269.15, 12362.54, 12308.53}};
  double worst = 0.0;
  std::string where;
  for (const auto& r : rows) {
    const auto s = fit_statistics_from_neg2ll(r.neg2ll, r.n_params, 1796);
    const std::pair<const char*, double> devs[] = {
        {"AIC", s.aic - r.aic}, {"BIC", s.bic - r.bic}, {"aBIC", s.abic - r.abic}};
    for (const auto& [name, d] : devs) {
      if (std::abs(d) > worst) {
        worst = std::abs(d);
        where = std::string(name) + " at N=" + std::to_string(r.n_params);
      }
    }
  }
  return {worst <= 0.01, "max |deviation| " + num(worst, "%.5f") + " (" + where + "), tolerance 0.01"};
}

// ------------------------------------------------------------------ 2

Verdict one_class_collapse() {
  double worst_beta = 0.0, worst_ll = 0.0;
  for (int s = 0; s < 20; ++s) {
    const std::size_t n = 15 + static_cast<std::size_t>(s) * 7 % 36;
    const auto ds = testkit::random_dataset(n, 1 + static_cast<std::size_t>(s % 3), 4000 + s, 0.3, s % 2 == 0);
    const auto direct = fit_cox(ds, std::vector<double>(n, 1.0), Eigen::VectorXd::Zero(static_cast<Eigen::Index>(ds.dim_x())));
    EmOptions em;
    em.n_starts = 3;
    const auto lc = fit_latent_class(ds, 1, em);
    double ll = 0.0;
    for (const auto& r : ds.records) ll += log_observation_density(direct, r);
    worst_beta = std::max(worst_beta, (lc.class_models[0].beta - direct.beta).cwiseAbs().maxCoeff());
    worst_ll = std::max(worst_ll, std::abs(lc.loglik - ll));
  }
  return {worst_beta <= 1e-8 && worst_ll <= 1e-8,
          "20 datasets (n<=50): max |dbeta| " + num(worst_beta, "%.2e") + ", max |dloglik| " + num(worst_ll, "%.2e")};
}

// ------------------------------------------------------------------ 3

Verdict cox_oracle() {
  const auto ds = testkit::make_dataset({1, 2, 3}, {1, 1, 1}, {{1}, {0}, {1}});
  const auto fit = fit_cox(ds, std::vector<double>(3, 1.0), Eigen::VectorXd::Zero(1));
  const double beta_err = std::abs(fit.beta[0] + 0.5 * std::numbers::ln2);
  Rng rng(31);
  double worst = 0.0;
  const double h = 1e-5;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 8 + rng.below(40), p = 1 + rng.below(3);
    const auto d = testkit::random_dataset(n, p, 6000 + trial, 0.3, trial % 2 == 1);
    std::vector<double> w(n);
    for (auto& v : w) v = 0.05 + 0.95 * rng.uniform();
    Eigen::VectorXd beta(static_cast<Eigen::Index>(p));
    for (Eigen::Index j = 0; j < beta.size(); ++j) beta[j] = 0.5 * rng.normal();
    const auto g = pl_derivatives(d, w, beta).gradient;
    for (Eigen::Index j = 0; j < beta.size(); ++j) {
      Eigen::VectorXd bp = beta, bm = beta;
      bp[j] += h;
      bm[j] -= h;
      const double fd = -(neg_log_partial_likelihood(d, w, bp) - neg_log_partial_likelihood(d, w, bm)) / (2 * h);
      worst = std::max(worst, std::abs(fd - g[j]) / std::max(1.0, std::abs(fd)));
    }
  }
  return {beta_err <= 1e-6 && worst <= 1e-5,
          "|beta + ln2/2| " + num(beta_err, "%.2e") + ", max FD rel. error " + num(worst, "%.2e") + " over 50 datasets"};
}

// ------------------------------------------------------------------ 4

Verdict em_ascent(const Settings& st) {
  const SimulationScenario scn;
  const auto rep = generate_replicate(scn, 0);
  EmOptions em;
  em.n_starts = st.starts;
  em.threads = st.threads;
  em.base_seed = derive(rep.seed, "fit", 0);
  const auto fit = fit_latent_class(rep.data, 2, em);
  double worst = 0.0;
  std::size_t failed = 0;
  for (const auto& s : fit.starts_summary) {
    worst = std::max(worst, s.max_decrease);
    if (s.failed) ++failed;
  }
  return {worst <= 1e-10, std::to_string(fit.starts_summary.size()) + " chains at n=1800 (" + std::to_string(failed) +
                              " stopped by other diagnostics): largest loglik drop " + num(worst, "%.2e")};
}

// ------------------------------------------------------------------ 5

Verdict transform() {
  Rng rng(55);
  std::vector<double> t(100000);
  for (auto& v : t) v = normal_to_weibull(rng.normal(), 0.0, 1.0, 0.5, 1.0);
  std::sort(t.begin(), t.end());
  const double n = static_cast<double>(t.size());
  double ks = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double f = 1.0 - std::exp(-t[i] / 0.5);
    ks = std::max({ks, std::abs(f - static_cast<double>(i) / n), std::abs(f - static_cast<double>(i + 1) / n)});
  }
  // Weibull quantile of Phi(s): eta * (-ln(1 - Phi(s)))^(1/lambda)
  double worst = 0.0;
  for (int k = 0; k < 1000; ++k) {
    const double s = -6.0 + 12.0 * k / 999.0;
    for (double lambda : {0.5, 1.0, 2.0}) {
      const double phi_upper = 0.5 * std::erfc(s / std::numbers::sqrt2);
      const double q = 0.5 * std::pow(-std::log(phi_upper), 1.0 / lambda);
      worst = std::max(worst, std::abs(normal_to_weibull(s, 0.0, 1.0, 0.5, lambda) - q));
    }
  }
  return {ks < 0.01 && worst <= 1e-10,
          "KS distance " + num(ks, "%.5f") + " (n=1e5), max pointwise deviation " + num(worst, "%.2e")};
}

// ------------------------------------------------------------------ 6, 7, 10

struct StudyCache {
  bool done = false;
  StudyResult result;
  double seconds = 0.0;
};

const StudyResult& study(const Settings& st, StudyCache& cache) {
  if (!cache.done) {
    const auto t0 = std::chrono::steady_clock::now();
    StudyOptions opt;
    opt.em.n_starts = st.starts;
    opt.threads = st.threads;
    opt.replicates = st.replicates;
    cache.result = run_study(SimulationScenario{}, opt);
    cache.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    cache.done = true;
    std::cout << "  (simulation study: " << cache.result.succeeded << "/" << st.replicates << " replicates in "
              << num(cache.seconds, "%.0f") << " s)\n";
  }
  return cache.result;
}

Verdict band_reproduction(const Settings& st, StudyCache& cache) {
  const auto& s = study(st, cache);
  const double m1 = s.one_class.mean, m2 = s.two_class.mean;
  const std::string detail = "mean AUC one-class " + num(m1, "%.4f") + ", two-class " + num(m2, "%.4f") +
                             ", gain " + num(m2 - m1, "%+.4f") + ", two-class wins " +
                             std::to_string(s.two_class_wins) + "/" + std::to_string(s.succeeded);
  if (st.smoke) return {s.succeeded > 0 && m2 > m1, "ordering only: " + detail};
  const bool ok = s.succeeded == st.replicates && m1 >= 0.55 && m1 <= 0.70 && m2 >= 0.65 && m2 <= 0.85 &&
                  m2 - m1 >= 0.05 && static_cast<double>(s.two_class_wins) >= 0.8 * static_cast<double>(st.replicates);
  return {ok, detail};
}

Verdict bic_recovery(const Settings& st, StudyCache& cache) {
  const auto& s = study(st, cache);
  return {static_cast<double>(s.bic_prefers_two) >= 0.9 * static_cast<double>(st.replicates),
          "BIC(g=2) < BIC(g=1) in " + std::to_string(s.bic_prefers_two) + "/" + std::to_string(st.replicates)};
}

Verdict class_recovery(const Settings& st, StudyCache& cache) {
  const auto& s = study(st, cache);
  return {s.succeeded > 0 && s.mean_class_recovery_auc >= 0.7,
          "mean label-recovery AUC " + num(s.mean_class_recovery_auc, "%.4f") + " over " +
              std::to_string(s.succeeded) + " replicates"};
}

// ------------------------------------------------------------------ 8

Verdict auc_oracle() {
  Rng rng(88);
  double worst = 0.0;
  int checked = 0;
  while (checked < 100) {
    const std::size_t n = 4 + rng.below(27);
    std::vector<double> s(n), t(n);
    std::vector<int> e(n, 1);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = std::round(rng.normal() * 3.0) / 3.0;
      t[i] = rng.exponential();
    }
    const double h = 0.7;
    const double ref = testkit::pair_count_auc(s, t, e, h);
    if (std::isnan(ref)) continue;
    worst = std::max(worst, std::abs(time_dependent_auc(s, t, e, h).auc - ref));
    ++checked;
  }
  return {worst <= 1e-12, "100 uncensored instances (n<=30): max |AUC - pair count| " + num(worst, "%.2e")};
}

// ------------------------------------------------------------------ 9

std::string serialize(const ValidationSummary& v) {
  std::ostringstream o;
  io::write_validation_csv(o, {v});
  o << io::validation_json(v).dump(2);
  return o.str();
}

Verdict validation_machinery(const Settings& st) {
  std::vector<std::string> problems;
  const auto folds = kfold_split(1796, 10, 1);
  auto sizes = folds.sizes();
  std::sort(sizes.begin(), sizes.end());
  const std::vector<std::size_t> expected{179, 179, 179, 179, 180, 180, 180, 180, 180, 180};
  if (sizes != expected) problems.push_back("fold sizes");

  double lo = 1.0, hi = 0.0;
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    auto idx = bootstrap_indices(1796, derive(9, "boot", seed));
    std::sort(idx.begin(), idx.end());
    const double frac = static_cast<double>(std::unique(idx.begin(), idx.end()) - idx.begin()) / 1796.0;
    lo = std::min(lo, frac);
    hi = std::max(hi, frac);
  }
  const double target = 1.0 - std::exp(-1.0);
  if (lo < target - 0.03 || hi > target + 0.03) problems.push_back("bootstrap distinct fraction");

  // byte-level reproducibility across repeated runs and thread counts
  SimulationScenario scn;
  scn.n = 600;
  const auto rep = generate_replicate(scn, 0);
  ValidationOptions vo;
  vo.g = 2;
  vo.em.n_starts = std::min<std::size_t>(st.starts, 5);
  std::vector<std::string> outputs;
  for (unsigned threads : {1u, 1u, 4u}) {
    vo.threads = threads;
    std::string bytes = serialize(cross_validate(rep.data, 10, vo, 17));
    bytes += serialize(bootstrap_validate(rep.data, 6, vo, 17));
    EmOptions em = vo.em;
    em.threads = threads;
    em.base_seed = 17;
    bytes += io::fit_report(fit_latent_class(rep.data, 2, em), rep.data).dump(2);
    SimulationScenario tiny;
    tiny.n = 300;
    tiny.replicates = 3;
    StudyOptions so;
    so.em.n_starts = 2;
    so.threads = threads;
    std::ostringstream o;
    io::write_study_csv(o, run_study(tiny, so));
    bytes += o.str();
    outputs.push_back(std::move(bytes));
  }
  if (outputs[0] != outputs[1]) problems.push_back("repeat run differs");
  if (outputs[0] != outputs[2]) problems.push_back("thread count changes output");

  std::string detail = "fold sizes {180x6, 179x4}; distinct fraction in [" + num(lo, "%.4f") + ", " + num(hi, "%.4f") +
                       "] over 30 seeds; CV, bootstrap, fit and study outputs compared at 1/1/4 threads";
  if (!problems.empty()) {
    detail += "; problems:";
    for (const auto& p : problems) detail += " " + p + ";";
  }
  return {problems.empty(), detail};
}

// ------------------------------------------------------------------ examples

Verdict proportion_recovery(const Settings& st) {
  const SimulationScenario scn;
  const auto rep = generate_replicate(scn, 0);
  EmOptions em;
  em.n_starts = st.starts;
  em.threads = st.threads;
  em.base_seed = derive(rep.seed, "fit", 0);
  const auto fit = fit_latent_class(rep.data, 2, em);
  const auto pi = fit.pi_mean();
  std::vector<std::size_t> modal(2, 0);
  for (auto c : fit.modal_class()) ++modal[c];
  const double m1 = static_cast<double>(modal[0]) / static_cast<double>(rep.data.size());
  const bool ok = std::abs(pi[0] - 0.7) <= 0.08 && std::abs(m1 - 0.7) <= 0.08;
  return {ok, "replicate 0: pi_mean (" + num(pi[0], "%.3f") + ", " + num(pi[1], "%.3f") + "), modal sizes (" +
                  num(m1, "%.3f") + ", " + num(1.0 - m1, "%.3f") + "); target 0.7/0.3 +/- 0.08"};
}

std::set<std::string> parse_list(const std::string& s) {
  std::set<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.insert(item);
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"lcsurv acceptance criteria"};
  Settings st;
  std::string criteria = "1,2,3,4,5,6,7,8,9,10,E1";
  std::string expect_fail;
  app.add_option("--replicates", st.replicates, "simulation replicates for criteria 6, 7 and 10");
  app.add_option("--starts", st.starts, "random EM starts per fit");
  app.add_option("--threads", st.threads, "worker threads");
  app.add_option("--criteria", criteria, "comma-separated criteria to run");
  app.add_option("--expect-fail", expect_fail, "comma-separated criteria known to fail");
  app.add_flag("--smoke", st.smoke, "criterion 6 checks the AUC ordering only");
  CLI11_PARSE(app, argc, argv);

  const auto selected = parse_list(criteria);
  const auto expected = parse_list(expect_fail);
  StudyCache cache;
  const std::vector<std::tuple<std::string, std::string, std::function<Verdict()>>> all{
      {"1", "information-criteria parity", information_criteria},
      {"2", "one-class collapse", one_class_collapse},
      {"3", "Cox oracle", cox_oracle},
      {"4", "EM ascent", [&] { return em_ascent(st); }},
      {"5", "transform correctness", transform},
      {"6", "simulation-study band reproduction", [&] { return band_reproduction(st, cache); }},
      {"7", "model selection recovery", [&] { return bic_recovery(st, cache); }},
      {"8", "AUC oracle equivalence", auc_oracle},
      {"9", "validation machinery", [&] { return validation_machinery(st); }},
      {"10", "class recovery", [&] { return class_recovery(st, cache); }},
      {"E1", "example: class proportions of a default-scenario fit", [&] { return proportion_recovery(st); }},
  };

  int unexpected = 0;
  for (const auto& [id, name, run] : all) {
    if (!selected.count(id)) continue;
    Verdict v;
    try {
      v = run();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    std::string status = v.pass ? "PASS" : "FAIL";
    if (expected.count(id)) status += v.pass ? " (listed as expected failure)" : " (expected; see notes)";
    else if (!v.pass) ++unexpected;
    std::cout << "criterion " << id << " [" << name << "]: " << status << " - " << v.detail << std::endl;
  }
  std::cout << (unexpected == 0 ? "acceptance: no unexpected failures" : "acceptance: unexpected failures") << '\n';
  return unexpected == 0 ? 0 : 1;
}
