#ifndef DYNATE_REPORT_HPP
#define DYNATE_REPORT_HPP

#include <json.hpp>
#include <sstream>
#include <string>
#include <vector>

#include "dynate/estimator.hpp"
#include "dynate/simulation.hpp"

// JSON and CSV serialization of simulation and estimation reports. JSON is
// the full-fidelity format (round-trips the in-memory report exactly); CSV
// carries one metrics row per line.

namespace dynate {

using json = nlohmann::json;

inline void to_json(json& j, const DgpSpec& s) {
  j = json{{"id", dgp_id_name(s.id)}, {"n", s.n}, {"d1", s.d1}, {"d2", s.d2}, {"seed", s.seed}};
}

inline void from_json(const json& j, DgpSpec& s) {
  s.id = parse_dgp_id(j.at("id").get<std::string>());
  j.at("n").get_to(s.n);
  j.at("d1").get_to(s.d1);
  j.at("d2").get_to(s.d2);
  j.at("seed").get_to(s.seed);
}

inline void to_json(json& j, const RawResult& r) {
  j = json{{"ok", r.ok},
           {"error", r.error},
           {"theta_hat", r.theta_hat},
           {"std_error", r.std_error},
           {"n_fits", r.n_fits},
           {"n_converged", r.n_converged},
           {"max_kkt", r.max_kkt}};
}

inline void from_json(const json& j, RawResult& r) {
  j.at("ok").get_to(r.ok);
  j.at("error").get_to(r.error);
  j.at("theta_hat").get_to(r.theta_hat);
  j.at("std_error").get_to(r.std_error);
  j.at("n_fits").get_to(r.n_fits);
  j.at("n_converged").get_to(r.n_converged);
  j.at("max_kkt").get_to(r.max_kkt);
}

inline void to_json(json& j, const MetricsRow& m) {
  j = json{{"estimator", m.estimator}, {"bias", m.bias},         {"rmse", m.rmse},
           {"length", m.length},       {"coverage", m.coverage}, {"esd", m.esd},
           {"asd", m.asd},             {"reps", m.reps}};
}

inline void from_json(const json& j, MetricsRow& m) {
  j.at("estimator").get_to(m.estimator);
  j.at("bias").get_to(m.bias);
  j.at("rmse").get_to(m.rmse);
  j.at("length").get_to(m.length);
  j.at("coverage").get_to(m.coverage);
  j.at("esd").get_to(m.esd);
  j.at("asd").get_to(m.asd);
  j.at("reps").get_to(m.reps);
}

inline void to_json(json& j, const SimulationReport& r) {
  j = json{{"spec", r.spec},
           {"seed", r.seed},
           {"reps", r.reps},
           {"level", r.level},
           {"k_folds", r.k_folds},
           {"clip_eps", r.clip_eps},
           {"penalty_mix", r.penalty_mix},
           {"theta", r.theta},
           {"theta_se", r.theta_se},
           {"theta_source", r.theta_source},
           {"rng", r.rng_name},
           {"estimators", r.estimators},
           {"raw", r.raw},
           {"metrics", r.rows},
           {"failures", r.failures},
           {"wall_clock_seconds", r.wall_clock_seconds}};
}

inline void from_json(const json& j, SimulationReport& r) {
  j.at("spec").get_to(r.spec);
  j.at("seed").get_to(r.seed);
  j.at("reps").get_to(r.reps);
  j.at("level").get_to(r.level);
  j.at("k_folds").get_to(r.k_folds);
  j.at("clip_eps").get_to(r.clip_eps);
  j.at("penalty_mix").get_to(r.penalty_mix);
  j.at("theta").get_to(r.theta);
  j.at("theta_se").get_to(r.theta_se);
  j.at("theta_source").get_to(r.theta_source);
  j.at("rng").get_to(r.rng_name);
  j.at("estimators").get_to(r.estimators);
  j.at("raw").get_to(r.raw);
  j.at("metrics").get_to(r.rows);
  j.at("failures").get_to(r.failures);
  j.at("wall_clock_seconds").get_to(r.wall_clock_seconds);
}

inline void to_json(json& j, const TuningRecord& t) {
  j = json{{"name", t.name},
           {"lambda", t.lambda},
           {"subgroup_size", t.subgroup_size},
           {"converged", t.converged},
           {"sweeps", t.sweeps},
           {"kkt_residual", t.kkt_residual},
           {"cv_dropped_folds", t.cv_dropped_folds}};
}

// One metrics row per line, mirroring the columns of the printed table.
inline std::string simulation_report_csv(const SimulationReport& r) {
  std::ostringstream out;
  out.precision(17);
  out << "estimator,bias,rmse,length,coverage,esd,asd,reps\n";
  for (const MetricsRow& m : r.rows)
    out << m.estimator << ',' << m.bias << ',' << m.rmse << ',' << m.length << ','
        << m.coverage << ',' << m.esd << ',' << m.asd << ',' << m.reps << '\n';
  return out.str();
}

inline json estimate_report_json(const DrEstimate& est) {
  json folds = json::array();
  for (const FoldDiagnostics& d : est.diagnostics) {
    json f{{"fold", d.fold}, {"tuning", d.tuning}};
    folds.push_back(std::move(f));
  }
  return json{{"theta_hat", est.theta_hat},
              {"std_error", est.std_error},
              {"sigma_hat2", est.sigma_hat2},
              {"ci_lower", est.ci.first},
              {"ci_upper", est.ci.second},
              {"level", est.level},
              {"n", est.n},
              {"k_folds", est.k_folds},
              {"per_fold", est.per_fold},
              {"folds", std::move(folds)}};
}

inline std::string estimate_report_csv(const DrEstimate& est) {
  std::ostringstream out;
  out.precision(17);
  out << "metric,value\n";
  out << "theta_hat," << est.theta_hat << '\n';
  out << "std_error," << est.std_error << '\n';
  out << "sigma_hat2," << est.sigma_hat2 << '\n';
  out << "ci_lower," << est.ci.first << '\n';
  out << "ci_upper," << est.ci.second << '\n';
  out << "level," << est.level << '\n';
  out << "n," << est.n << '\n';
  out << "k_folds," << est.k_folds << '\n';
  for (std::size_t k = 0; k < est.per_fold.size(); ++k)
    out << "theta_fold_" << k << ',' << est.per_fold[k] << '\n';
  for (const FoldDiagnostics& d : est.diagnostics)
    for (const TuningRecord& t : d.tuning)
      out << "lambda_fold_" << d.fold << '_' << t.name << ',' << t.lambda << '\n';
  return out.str();
}

}  // namespace dynate

#endif  // DYNATE_REPORT_HPP
