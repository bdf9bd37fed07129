#pragma once

// propdesign command-line front end. run() is kept in a header so the tests
// can drive it in-process.

#include "propdesign/propdesign.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace propdesign::cli {

using nlohmann::ordered_json;

inline constexpr const char* kSchemaVersion = "1.0";

enum Exit : int { ok = 0, not_optimal = 1, not_estimable = 2, no_convergence = 3, usage = 64 };

struct JobSpec {
  int k = 0;
  int t = 0;
  double rho = 0.0;
  std::string sigma_file;
  double l1 = 0.0;
  double l2 = 0.0;
  std::optional<double> lambda;
  std::string model = "directional";
  std::string target = "direct";
  std::string criterion = "D";
  std::uint64_t seed = 1;
  SolveOptions opts;
  bool csv = false;

  ModelConfig config() const {
    const Model m = parse_model(model);
    double a = l1;
    double b = l2;
    if (lambda) a = b = *lambda;
    return ModelConfig(a, b, m, parse_target(target), parse_criterion(criterion), t);
  }

  Mat sigma() const {
    CovarianceSpec spec{k, rho, std::nullopt};
    if (!sigma_file.empty()) spec.explicit_sigma = load_sigma(sigma_file, k);
    return build_sigma(spec);
  }

  SolveOptions solve_options() const {
    SolveOptions o = opts;
    o.seed = seed;
    return o;
  }

  ordered_json to_json() const {
    const ModelConfig c = config();
    ordered_json j;
    j["k"] = k;
    j["t"] = t;
    if (sigma_file.empty())
      j["rho"] = rho;
    else
      j["sigma_file"] = sigma_file;
    j["lambda1"] = c.lambda1();
    j["lambda2"] = c.lambda2();
    j["model"] = to_string(c.model());
    j["target"] = to_string(c.target());
    j["criterion"] = to_string(c.criterion());
    j["seed"] = seed;
    j["gap_tol"] = opts.gap_tol;
    j["max_iters"] = opts.max_iters;
    j["restarts"] = opts.restarts;
    return j;
  }

  /// k lines of k whitespace-separated reals.
  static Mat load_sigma(const std::string& path, int k) {
    std::ifstream in(path);
    if (!in) throw InvalidConfig("cannot read covariance file " + path);
    std::vector<double> vals;
    double x;
    while (in >> x) vals.push_back(x);
    if (!in.eof()) throw InvalidConfig("covariance file " + path + " contains a non-number");
    if (vals.size() != static_cast<std::size_t>(k) * static_cast<std::size_t>(k))
      throw InvalidConfig("covariance file must hold " + std::to_string(k) + "x" + std::to_string(k) + " numbers");
    Mat s(k, k);
    for (int i = 0; i < k; ++i)
      for (int j = 0; j < k; ++j) s(i, j) = vals[static_cast<std::size_t>(i * k + j)];
    return s;
  }
};

/// Reads a measure from a solution document ({"measure": [{rep, p}...]}),
/// {"measure": {rep: p}} or a bare {rep: p} object.
inline Measure load_measure(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot read measure file " + path);
  ordered_json doc;
  try {
    doc = ordered_json::parse(in);
  } catch (const ordered_json::parse_error& e) {
    throw ValidationError("measure file " + path + " is not valid JSON: " + e.what());
  }
  const ordered_json& m = doc.contains("measure") ? doc["measure"] : doc;
  std::map<std::string, double> w;
  if (m.is_array()) {
    for (const auto& e : m) {
      if (!e.contains("rep") || !e.contains("p")) throw ValidationError("measure entries need rep and p");
      w[e["rep"].get<std::string>()] += e["p"].get<double>();
    }
  } else if (m.is_object()) {
    for (const auto& [rep, p] : m.items()) w[rep] += p.get<double>();
  } else {
    throw ValidationError("measure must be an array or an object");
  }
  return Measure(std::move(w));
}

inline ordered_json header(const std::string& command, const JobSpec& job) {
  ordered_json j;
  j["schema_version"] = kSchemaVersion;
  j["tool"] = {{"name", "propdesign"}, {"version", kVersion}};
  j["command"] = command;
  j["job"] = job.to_json();
  return j;
}

inline ordered_json measure_json(const BlockSet& blocks, const Vec& p) {
  ordered_json arr = ordered_json::array();
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const double w = p(static_cast<Eigen::Index>(i));
    if (w > 0.0) arr.push_back({{"rep", blocks[i].name()}, {"p", w}});
  }
  return arr;
}

inline ordered_json certificate_json(const OptimalityReport& r) {
  ordered_json c;
  c["verdict"] = to_string(r.verdict);
  c["gap"] = r.gap;
  c["max_score"] = r.max_score;
  c["branch"] = to_string(r.branch);
  c["support_ok"] = r.support_ok;
  c["argmax"] = r.argmax_blocks;
  ordered_json s = ordered_json::array();
  for (const auto& [rep, v] : r.scores) s.push_back({{"rep", rep}, {"score", v}});
  c["scores"] = s;
  c["note"] = r.note;
  return c;
}

inline ordered_json matrix_json(const Mat3& V) {
  ordered_json rows = ordered_json::array();
  for (int i = 0; i < 3; ++i) rows.push_back({V(i, 0), V(i, 1), V(i, 2)});
  return rows;
}

inline std::string fixed6(double x) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(6) << x;
  return os.str();
}

inline void emit(std::ostream& out, const ordered_json& doc) { out << doc.dump(2) << "\n"; }

inline int cmd_enumerate(const JobSpec& job, std::ostream& out) {
  const BlockSet blocks = enumerate_blocks(job.k, job.t, job.sigma());
  if (job.csv) {
    out << "rep,members,orbit_size,V00,V01,V02,V11,V12,V22\n";
    for (const auto& c : blocks) {
      std::string members;
      for (const auto& m : c.members) members += (members.empty() ? "" : " ") + m.rep.str();
      const Mat3& V = c.V();
      out << c.name() << "," << members << "," << c.sequence_count() << "," << V(0, 0) << "," << V(0, 1) << ","
          << V(0, 2) << "," << V(1, 1) << "," << V(1, 2) << "," << V(2, 2) << "\n";
    }
    return ok;
  }
  ordered_json doc = header("enumerate", job);
  ordered_json arr = ordered_json::array();
  for (const auto& c : blocks) {
    ordered_json members = ordered_json::array();
    for (const auto& m : c.members) members.push_back({{"rep", m.rep.str()}, {"orbit_size", m.orbit_size}});
    arr.push_back({{"rep", c.name()}, {"members", members}, {"orbit_size", c.sequence_count()}, {"V", matrix_json(c.V())}});
  }
  doc["blocks"] = arr;
  emit(out, doc);
  return ok;
}

inline int report_solution(const std::string& command, const JobSpec& job, const BlockSet& blocks,
                           const SolveResult& r, std::ostream& out) {
  if (job.csv) {
    out << "rep,p\n";
    for (std::size_t i = 0; i < blocks.size(); ++i)
      if (r.weights(static_cast<Eigen::Index>(i)) > 0.0)
        out << blocks[i].name() << "," << fixed6(r.weights(static_cast<Eigen::Index>(i))) << "\n";
    return r.converged ? ok : no_convergence;
  }
  ordered_json doc = header(command, job);
  doc["measure"] = measure_json(blocks, r.weights);
  doc["value"] = r.value;
  doc["certificate"] = certificate_json(r.report);
  doc["diagnostics"] = {{"converged", r.converged},
                        {"iterations", r.iterations},
                        {"restart_values", r.restart_values},
                        {"classes", blocks.size()}};
  emit(out, doc);
  return r.converged ? ok : no_convergence;
}

inline int cmd_solve(const JobSpec& job, std::ostream& out, std::ostream& err) {
  const ModelConfig cfg = job.config();
  const BlockSet blocks = enumerate_blocks(job.k, job.t, job.sigma());
  try {
    return report_solution("solve", job, blocks, solve(blocks, cfg, job.solve_options()), out);
  } catch (const NoConvergence& e) {
    err << "error: " << e.what() << "\n";
    report_solution("solve", job, blocks, e.best(), out);
    return no_convergence;
  }
}

inline int cmd_verify(const JobSpec& job, const std::string& measure_file, std::ostream& out) {
  const ModelConfig cfg = job.config();
  const BlockSet blocks = enumerate_blocks(job.k, job.t, job.sigma());
  const Vec p = load_measure(measure_file).to_vector(blocks);
  const OptimalityReport r = verify(blocks, p, cfg, VerifyOptions{job.opts.gap_tol, job.opts.support_tol});
  const int code = r.verdict == Verdict::optimal ? ok : not_optimal;
  if (job.csv) {
    out << "rep,score\n";
    for (const auto& [rep, s] : r.scores) out << rep << "," << s << "\n";
    return code;
  }
  ordered_json doc = header("verify", job);
  doc["measure"] = measure_json(blocks, p);
  doc["value"] = detail::objective(blocks, p, cfg);
  doc["certificate"] = certificate_json(r);
  emit(out, doc);
  return code;
}

inline constexpr Criterion kAll[] = {Criterion::A, Criterion::D, Criterion::E, Criterion::T};

inline int cmd_efficiency(const JobSpec& job, const std::string& measure_file, bool cross, std::ostream& out) {
  const ModelConfig cfg = job.config();
  const BlockSet blocks = enumerate_blocks(job.k, job.t, job.sigma());
  std::vector<SolveResult> optima;
  for (Criterion c : kAll) optima.push_back(solve(blocks, cfg.with_criterion(c), job.solve_options()));

  std::vector<std::pair<std::string, Vec>> rows;
  if (cross) {
    for (std::size_t i = 0; i < 4; ++i) rows.emplace_back(to_string(kAll[i]) + "-optimal", optima[i].weights);
  } else {
    if (measure_file.empty()) throw InvalidConfig("efficiency needs --measure or --cross");
    rows.emplace_back("measure", load_measure(measure_file).to_vector(blocks));
  }

  if (job.csv) {
    out << "row,A,D,E,T\n";
    for (const auto& [name, p] : rows) {
      out << name;
      for (std::size_t i = 0; i < 4; ++i) out << "," << fixed6(efficiency(blocks, p, cfg.with_criterion(kAll[i]), optima[i]));
      out << "\n";
    }
    return ok;
  }
  ordered_json doc = header("efficiency", job);
  ordered_json table = ordered_json::array();
  for (const auto& [name, p] : rows) {
    ordered_json eff;
    for (std::size_t i = 0; i < 4; ++i) eff[to_string(kAll[i])] = efficiency(blocks, p, cfg.with_criterion(kAll[i]), optima[i]);
    table.push_back({{"row", name}, {"measure", measure_json(blocks, p)}, {"efficiency", eff}});
  }
  doc["table"] = table;
  ordered_json opt;
  for (std::size_t i = 0; i < 4; ++i) opt[to_string(kAll[i])] = optima[i].value;
  doc["optimal_values"] = opt;
  emit(out, doc);
  return ok;
}

inline int cmd_round(const JobSpec& job, const std::string& measure_file, int n, std::ostream& out) {
  if (n < 1) throw InvalidConfig("number of blocks n must be >= 1");
  const ModelConfig cfg = job.config();
  const BlockSet blocks = enumerate_blocks(job.k, job.t, job.sigma());
  const Vec p = load_measure(measure_file).to_vector(blocks);
  const SolveResult best = solve(blocks, cfg, job.solve_options());
  const ExactDesign d = round_to_exact(blocks, p, n, cfg, best.value);
  if (job.csv) {
    out << "rep,count\n";
    for (const auto& [rep, c] : d.counts) out << rep << "," << c << "\n";
    return ok;
  }
  ordered_json doc = header("round", job);
  doc["n"] = n;
  ordered_json counts = ordered_json::array();
  for (const auto& [rep, c] : d.counts) counts.push_back({{"rep", rep}, {"count", c}});
  doc["counts"] = counts;
  ordered_json rows = ordered_json::array();
  for (const auto& r : d.rows) rows.push_back(r.str());
  doc["rows"] = rows;
  doc["efficiency"] = d.efficiency;
  doc["reference_value"] = best.value;
  emit(out, doc);
  return ok;
}

inline int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Optimal block designs under proportional interference models", "propdesign"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kVersion));

  JobSpec job;
  std::string measure_file;
  bool cross = false;
  int n = 0;
  auto add_job = [&](CLI::App* sub, bool model_flags) {
    sub->add_option("-k", job.k, "block size")->required()->check(CLI::PositiveNumber);
    sub->add_option("-t", job.t, "number of treatments")->required()->check(CLI::PositiveNumber);
    auto* rho = sub->add_option("--rho", job.rho, "circulant neighbor correlation");
    sub->add_option("--sigma", job.sigma_file, "covariance file (k lines of k reals)")->excludes(rho);
    sub->add_flag("--csv", job.csv, "flat CSV instead of JSON");
    if (!model_flags) return;
    auto* l1 = sub->add_option("--l1", job.l1, "left-neighbor proportion lambda1");
    auto* l2 = sub->add_option("--l2", job.l2, "right-neighbor proportion lambda2");
    sub->add_option("--lambda", job.lambda, "common lambda (undirectional model)")->excludes(l1)->excludes(l2);
    sub->add_option("--model", job.model, "directional | undirectional")
        ->check(CLI::IsMember({"directional", "undirectional"}));
    sub->add_option("--target", job.target, "direct | total")->check(CLI::IsMember({"direct", "total", "tau", "theta"}));
    sub->add_option("--criterion", job.criterion, "A | D | E | T")->check(CLI::IsMember({"A", "D", "E", "T", "a", "d", "e", "t"}));
    sub->add_option("--seed", job.seed, "restart seed");
    sub->add_option("--gap-tol", job.opts.gap_tol, "optimality gap tolerance")->check(CLI::PositiveNumber);
    sub->add_option("--max-iters", job.opts.max_iters, "iteration cap per restart")->check(CLI::PositiveNumber);
    sub->add_option("--restarts", job.opts.restarts, "number of restarts")->check(CLI::PositiveNumber);
  };

  auto* en = app.add_subcommand("enumerate", "list merged symmetric-block classes");
  add_job(en, false);
  auto* so = app.add_subcommand("solve", "optimal measure with certificate");
  add_job(so, true);
  auto* ve = app.add_subcommand("verify", "check a measure against the equivalence theorem");
  add_job(ve, true);
  ve->add_option("--measure", measure_file, "measure JSON")->required();
  auto* ef = app.add_subcommand("efficiency", "efficiencies under all four criteria");
  add_job(ef, true);
  auto* mopt = ef->add_option("--measure", measure_file, "measure JSON");
  ef->add_flag("--cross", cross, "cross table of the four optimal measures")->excludes(mopt);
  auto* ro = app.add_subcommand("round", "round a measure to an exact design of n blocks");
  add_job(ro, true);
  ro->add_option("--measure", measure_file, "measure JSON")->required();
  ro->add_option("-n", n, "number of blocks")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? ok : usage;
  }

  try {
    if (*en) return cmd_enumerate(job, out);
    if (*so) return cmd_solve(job, out, err);
    if (*ve) return cmd_verify(job, measure_file, out);
    if (*ef) return cmd_efficiency(job, measure_file, cross, out);
    if (*ro) return cmd_round(job, measure_file, n, out);
  } catch (const NotEstimable& e) {
    err << "error: " << e.what() << "\n";
    return not_estimable;
  } catch (const NoConvergence& e) {
    err << "error: " << e.what() << "\n";
    return no_convergence;
  } catch (const Error& e) {
    err << "usage error: " << e.what() << "\n";
    return usage;
  }
  return usage;
}

}  // namespace propdesign::cli
