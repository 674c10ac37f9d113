// Command-line front end: `estimate` runs the cross-fitted doubly robust
// estimator on a CSV file, `simulate` reproduces the Monte Carlo studies.
// Exit codes: 0 success, 2 configuration/schema error, 3 estimation failure.
// The output stream carries exactly the report; progress and the human table
// go to the diagnostic stream (unless the report is routed to a file, in
// which case the table may use stdout).

#include <CLI11.hpp>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "dynate/dynate.hpp"

namespace {

std::vector<std::string> split_list(const std::string& csv) {
  std::vector<std::string> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

void emit_report(const std::string& text, const std::string& output_path) {
  if (output_path.empty()) {
    std::cout << text;
    if (!text.empty() && text.back() != '\n') std::cout << '\n';
  } else {
    std::ofstream f(output_path, std::ios::binary);
    if (!f) throw dynate::config_error("cannot open output file '" + output_path + "'");
    f << text;
  }
}

void print_metrics_table(std::ostream& os, const dynate::SimulationReport& report) {
  os << "model " << dynate::dgp_id_name(report.spec.id) << "  n=" << report.spec.n
     << " d1=" << report.spec.d1 << " d2=" << report.spec.d2 << "  theta=" << report.theta
     << "  reps=" << report.reps << (report.failures ? "  failures=" : "")
     << (report.failures ? std::to_string(report.failures) : "") << '\n';
  char line[256];
  std::snprintf(line, sizeof(line), "%-10s %9s %9s %9s %9s %9s %9s\n", "estimator", "Bias",
                "RMSE", "Length", "Coverage", "ESD", "ASD");
  os << line;
  for (const dynate::MetricsRow& m : report.rows) {
    std::snprintf(line, sizeof(line), "%-10s %9.3f %9.3f %9.3f %9.3f %9.3f %9.3f\n",
                  m.estimator.c_str(), m.bias, m.rmse, m.length, m.coverage, m.esd, m.asd);
    os << line;
  }
}

struct CommonOpts {
  int folds = 5;
  std::uint64_t seed = 42;
  double clip_eps = 0.01;
  double level = 0.95;
  double penalty_mix = 1.0;
  std::string output;
  std::string format = "json";
};

void add_common(CLI::App* cmd, CommonOpts& o) {
  cmd->add_option("--folds", o.folds, "cross-fitting folds")->capture_default_str();
  cmd->add_option("--seed", o.seed, "master RNG seed")->capture_default_str();
  cmd->add_option("--clip-eps", o.clip_eps, "propensity clipping bound")->capture_default_str();
  cmd->add_option("--level", o.level, "confidence level")->capture_default_str();
  cmd->add_option("--penalty-mix", o.penalty_mix, "elasticnet mixing (1 = lasso)")
      ->capture_default_str();
  cmd->add_option("--output", o.output, "write the report to this file (default: stdout)");
  cmd->add_option("--format", o.format, "report format: json or csv")->capture_default_str();
}

void check_common(const CommonOpts& o) {
  if (o.format != "json" && o.format != "csv")
    throw dynate::config_error("--format must be json or csv");
  if (!(o.level > 0.0 && o.level < 1.0))
    throw dynate::config_error("--level must lie in (0,1)");
  if (!(o.clip_eps > 0.0 && o.clip_eps < 0.5))
    throw dynate::config_error("--clip-eps must lie in (0,0.5)");
  if (!(o.penalty_mix > 0.0 && o.penalty_mix <= 1.0))
    throw dynate::config_error("--penalty-mix must lie in (0,1]");
  if (o.folds < 2) throw dynate::config_error("--folds must be >= 2");
}

int run_estimate(const std::string& data_path, const dynate::CsvSchema& schema,
                 const CommonOpts& o) {
  check_common(o);
  std::ifstream in(data_path);
  if (!in) throw dynate::config_error("cannot open input file '" + data_path + "'");
  const dynate::TabularData table = dynate::read_csv(in);
  const dynate::Dataset ds = dynate::load_dataset(table, schema);
  std::cerr << "loaded " << ds.n() << " observations (d1=" << ds.d1() << ", d2=" << ds.d2()
            << "); cross-fitting with " << o.folds << " folds\n";

  dynate::DrConfig cfg;
  cfg.k_folds = o.folds;
  cfg.seed = o.seed;
  cfg.clip_eps = o.clip_eps;
  cfg.level = o.level;
  cfg.policy.mix = o.penalty_mix;
  const dynate::DrEstimate est = dynate::estimate_dynamic_ate(ds, cfg);

  for (const dynate::FoldDiagnostics& d : est.diagnostics)
    for (const dynate::TuningRecord& t : d.tuning)
      if (!t.converged)
        std::cerr << "warning: fold " << d.fold << " fit " << t.name
                  << " did not converge (kkt residual " << t.kkt_residual << ")\n";

  if (o.format == "json") {
    dynate::json j = dynate::estimate_report_json(est);
    j["config"] = {{"data", data_path},
                   {"y_col", schema.y_col},
                   {"a1_col", schema.a1_col},
                   {"a2_col", schema.a2_col},
                   {"s1_cols", schema.s1_cols},
                   {"s2_cols", schema.s2_cols},
                   {"folds", o.folds},
                   {"seed", o.seed},
                   {"clip_eps", o.clip_eps},
                   {"level", o.level},
                   {"penalty_mix", o.penalty_mix}};
    emit_report(j.dump(2), o.output);
  } else {
    emit_report(dynate::estimate_report_csv(est), o.output);
  }
  std::cerr << "theta_hat=" << est.theta_hat << " se=" << est.std_error << " ci=["
            << est.ci.first << ", " << est.ci.second << "]\n";
  return 0;
}

int run_simulate(const std::string& dgp, int n, int d1, int d2, bool d2_given, int reps,
                 const std::string& estimators_csv, int threads, const CommonOpts& o) {
  check_common(o);
  dynate::DgpSpec spec;
  spec.id = dynate::parse_dgp_id(dgp);
  spec.n = n;
  spec.d1 = d1;
  spec.d2 = d2_given ? d2 : dynate::default_d2(spec.id, d1);
  spec.seed = o.seed;

  dynate::McOptions mc;
  mc.k_folds = o.folds;
  mc.clip_eps = o.clip_eps;
  mc.level = o.level;
  mc.penalty_mix = o.penalty_mix;
  mc.threads = threads;

  const std::vector<std::string> estimators = split_list(estimators_csv);
  std::cerr << "simulating " << dgp << " n=" << spec.n << " d1=" << spec.d1
            << " d2=" << spec.d2 << " reps=" << reps << "\n";
  const dynate::SimulationReport report =
      dynate::run_monte_carlo(spec, estimators, reps, o.seed, mc);

  const std::string text = o.format == "json" ? dynate::json(report).dump(2)
                                              : dynate::simulation_report_csv(report);
  emit_report(text, o.output);
  // the human-readable table rides the diagnostic stream unless the report
  // went to a file
  print_metrics_table(o.output.empty() ? std::cerr : std::cout, report);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Doubly robust dynamic treatment effect estimation"};
  app.require_subcommand(1);

  // estimate
  auto* est = app.add_subcommand("estimate", "estimate a dynamic ATE from a CSV file");
  std::string data_path, y_col = "y", a1_col = "a1", a2_col = "a2", s1_csv, s2_csv;
  CommonOpts eo;
  est->add_option("--data", data_path, "input CSV with a header row")->required();
  est->add_option("--y-col", y_col, "outcome column")->capture_default_str();
  est->add_option("--a1-col", a1_col, "stage-1 treatment column")->capture_default_str();
  est->add_option("--a2-col", a2_col, "stage-2 treatment column")->capture_default_str();
  est->add_option("--s1-cols", s1_csv, "comma list of stage-1 covariate columns")->required();
  est->add_option("--s2-cols", s2_csv, "comma list of stage-2 covariate columns")->required();
  add_common(est, eo);

  // simulate
  auto* sim = app.add_subcommand("simulate", "run a Monte Carlo study on a synthetic model");
  std::string dgp = "M2", estimators = "dr-lasso,oracle,empdiff";
  int n = 1000, d1 = 100, d2 = 0, reps = 200, threads = 0;
  CommonOpts so;
  sim->add_option("--dgp", dgp, "model id (M1..M10)")->capture_default_str();
  sim->add_option("--n", n, "sample size per replication")->capture_default_str();
  sim->add_option("--d1", d1, "stage-1 covariate dimension")->capture_default_str();
  auto* d2_opt = sim->add_option("--d2", d2, "stage-2 covariate dimension (default per model)");
  sim->add_option("--reps", reps, "number of replications")->capture_default_str();
  sim->add_option("--estimators", estimators,
                  "comma list: dr-lasso, oracle, empdiff, ipw, wipw")
      ->capture_default_str();
  sim->add_option("--threads", threads, "worker threads (0 = all cores)")->capture_default_str();
  add_common(sim, so);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    std::cout << dynate::json{{"error", "config"}, {"message", e.what()}}.dump() << '\n';
    std::cerr << e.what() << '\n';
    return 2;
  }

  try {
    if (est->parsed()) {
      dynate::CsvSchema schema{y_col, a1_col, a2_col, split_list(s1_csv), split_list(s2_csv)};
      return run_estimate(data_path, schema, eo);
    }
    return run_simulate(dgp, n, d1, d2, d2_opt->count() > 0, reps, estimators, threads, so);
  } catch (const dynate::config_error& e) {
    std::cout << dynate::json{{"error", "config"}, {"message", e.what()}}.dump() << '\n';
    std::cerr << "configuration error: " << e.what() << '\n';
    return 2;
  } catch (const dynate::schema_error& e) {
    std::cout << dynate::json{{"error", "schema"}, {"message", e.what()}}.dump() << '\n';
    std::cerr << "schema error: " << e.what() << '\n';
    return 2;
  } catch (const dynate::estimation_error& e) {
    std::cout << dynate::json{{"error", "estimation"}, {"message", e.what()}}.dump() << '\n';
    std::cerr << "estimation error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cout << dynate::json{{"error", "internal"}, {"message", e.what()}}.dump() << '\n';
    std::cerr << "internal error: " << e.what() << '\n';
    return 1;
  }
}
