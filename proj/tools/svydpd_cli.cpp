// Command-line front end: fit | test | influence | simulate | compare.
//
// Reports are JSON written through the deterministic 17-digit serializer,
// study tables are CSV.  Exit codes: 0 success, 1 usage/input/parse errors,
// 2 when a requested fit did not converge.

#include <chrono>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "svydpd/svydpd.hpp"

namespace {

using svydpd::Json;

constexpr int kExitOk = 0;
constexpr int kExitError = 1;
constexpr int kExitNotConverged = 2;

std::vector<double> parse_lambda_list(const std::string& text) {
  std::vector<double> out;
  std::string cur;
  auto flush = [&]() {
    if (cur.empty()) return;
    errno = 0;
    char* end = nullptr;
    const double v = std::strtod(cur.c_str(), &end);
    if (end != cur.c_str() + cur.size() || errno == ERANGE)
      throw svydpd::input_error("cannot parse lambda value '" + cur + "'");
    if (v < 0.0) throw svydpd::input_error("lambda must be nonnegative");
    out.push_back(v);
    cur.clear();
  };
  for (char ch : text) {
    if (ch == ',')
      flush();
    else if (!std::isspace(static_cast<unsigned char>(ch)))
      cur += ch;
  }
  flush();
  if (out.empty()) throw svydpd::input_error("empty lambda list");
  return out;
}

/// A JSON flag value: inline text when it starts with '{' or '[',
/// otherwise the path of a JSON file.
Json json_arg(const std::string& arg, const std::string& what) {
  const std::size_t first = arg.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && (arg[first] == '{' || arg[first] == '['))
    return svydpd::json_from_string(arg, what + " (inline)");
  return svydpd::json_from_string(svydpd::read_text_file(arg), arg);
}

svydpd::OmegaVariant omega_from_string(const std::string& name) {
  if (name == "multinomial") return svydpd::OmegaVariant::ModelMultinomial;
  if (name == "overdispersed") return svydpd::OmegaVariant::Overdispersed;
  if (name == "empirical") return svydpd::OmegaVariant::Empirical;
  throw svydpd::input_error("unknown omega variant '" + name +
                            "'; valid: multinomial, overdispersed, empirical");
}

svydpd::MBarPolicy m_policy_from_string(const std::string& name) {
  if (name == "require-equal") return svydpd::MBarPolicy::RequireEqual;
  if (name == "mean") return svydpd::MBarPolicy::UseMeanM;
  throw svydpd::input_error("unknown m policy '" + name +
                            "'; valid: require-equal, mean");
}

const char* to_string(svydpd::NuMethod m) {
  return m == svydpd::NuMethod::EstimatingEquation ? "estimating-equation" : "moments";
}

Json fit_result_json(const svydpd::FitResult& fr) {
  Json j = Json::object();
  j["converged"] = fr.converged;
  j["iterations"] = fr.iterations;
  j["final_gradient_norm"] = fr.final_gradient_norm;
  j["objective_value"] = fr.objective_value;
  j["beta"] = svydpd::matrix_to_json(fr.beta_hat.beta);
  Json warn = Json::array();
  for (const std::string& w : fr.warnings) warn.push_back(w);
  j["warnings"] = std::move(warn);
  return j;
}

Json bundle_json(const svydpd::CovarianceBundle& b) {
  Json j = Json::object();
  j["omega_variant"] = svydpd::to_string(b.omega_variant);
  j["normalization"] =
      b.normalization == svydpd::Normalization::PerCluster ? "per-cluster" : "per-unit";
  j["sample_scale"] = b.sample_scale;
  j["psi_condition"] = b.psi_condition;
  if (!b.nu_values.empty()) {
    Json nu = Json::array();
    for (double v : b.nu_values) nu.push_back(v);
    j["nu_values"] = std::move(nu);
  }
  j["psi"] = svydpd::matrix_to_json(b.psi);
  j["omega"] = svydpd::matrix_to_json(b.omega);
  j["q"] = svydpd::matrix_to_json(b.q);
  return j;
}

Json overdispersion_json(const svydpd::OverdispersionEstimate& e) {
  Json j = Json::object();
  j["method"] = to_string(e.method);
  j["scope"] = e.scope == svydpd::NuScope::Pooled ? "pooled" : "per-stratum";
  if (e.scope == svydpd::NuScope::PerStratum) j["stratum_id"] = e.stratum_id;
  j["nu"] = e.nu;
  j["rho_squared"] = e.rho_squared;
  j["m_bar"] = e.m_bar;
  j["rho_in_unit_interval"] = e.rho_in_unit_interval;
  return j;
}

Json test_result_json(const svydpd::TestResult& t) {
  Json j = Json::object();
  j["statistic"] = t.statistic;
  j["dof"] = t.dof;
  j["critical_value"] = t.critical_value;
  j["p_value"] = t.p_value;
  j["reject"] = t.reject;
  j["alpha"] = t.alpha;
  return j;
}

Json fitted_probabilities_json(const svydpd::Coefficients& beta,
                               const svydpd::SurveyDataset& data) {
  Json arr = Json::array();
  for (const auto& rec : data.clusters) {
    Json row = Json::object();
    row["stratum"] = rec.stratum_label.empty() ? std::to_string(rec.stratum_id)
                                               : rec.stratum_label;
    row["cluster"] = rec.cluster_label.empty() ? std::to_string(rec.cluster_id)
                                               : rec.cluster_label;
    row["pi"] = svydpd::vector_to_json(svydpd::model_probabilities(beta, rec.covariates));
    arr.push_back(std::move(row));
  }
  return arr;
}

Json dataset_summary_json(const svydpd::SurveyDataset& data, const std::string& path) {
  Json j = Json::object();
  j["path"] = path;
  j["clusters"] = data.n_clusters();
  j["strata"] = static_cast<int>(data.strata().size());
  j["d"] = data.d;
  j["k"] = data.k;
  j["intercept"] = data.intercept_explicit ? "explicit" : "implied";
  j["total_units"] = data.total_units();
  return j;
}

void emit(const std::string& content, const std::string& out_path) {
  if (out_path.empty())
    std::cout << content;
  else
    svydpd::atomic_write(out_path, content);
}

/// Builds the covariance bundle for one fitted lambda, estimating nu first
/// when the overdispersed variant is requested.
svydpd::CovarianceBundle make_bundle(const svydpd::Coefficients& beta,
                                     const svydpd::SurveyDataset& data,
                                     const svydpd::DpdConfig& cfg,
                                     svydpd::OmegaVariant variant,
                                     svydpd::MBarPolicy policy,
                                     svydpd::Normalization norm) {
  if (variant == svydpd::OmegaVariant::Overdispersed) {
    const double nu = svydpd::nu_estimating_equation(beta, data, cfg, policy).nu;
    return svydpd::sandwich(beta, data, cfg, variant, {nu}, norm);
  }
  return svydpd::sandwich(beta, data, cfg, variant, {}, norm);
}

// ---------------------------------------------------------------------------
// fit
// ---------------------------------------------------------------------------

struct FitFlags {
  std::string dataset;
  std::string lambda_list = "0";
  std::string omega = "multinomial";
  std::string m_policy = "require-equal";
  std::string framing = "pooled";
  std::string normalization = "per-cluster";
  bool per_stratum = false;
  bool table_shares = false;
  int multistart = 0;
  int max_iterations = 200;
  double tolerance = 1e-6;
  std::string out;
};

int cmd_fit(const FitFlags& flags) {
  const auto t0 = std::chrono::steady_clock::now();
  const svydpd::SurveyDataset data = svydpd::load_dataset(flags.dataset);
  const std::vector<double> lambdas = parse_lambda_list(flags.lambda_list);
  const svydpd::OmegaVariant variant = omega_from_string(flags.omega);
  const svydpd::MBarPolicy policy = m_policy_from_string(flags.m_policy);
  if (flags.framing != "pooled" && flags.framing != "stratumwise")
    throw svydpd::input_error("unknown framing '" + flags.framing +
                              "'; valid: pooled, stratumwise");
  svydpd::Normalization norm;
  if (flags.normalization == "per-cluster")
    norm = svydpd::Normalization::PerCluster;
  else if (flags.normalization == "per-unit")
    norm = svydpd::Normalization::PerUnit;
  else
    throw svydpd::input_error("unknown normalization '" + flags.normalization +
                              "'; valid: per-cluster, per-unit");

  svydpd::FitConfig fit_cfg;
  fit_cfg.multistart = flags.multistart;
  fit_cfg.max_iterations = flags.max_iterations;
  fit_cfg.gradient_tolerance = flags.tolerance;

  Json report = Json::object();
  report["schema_version"] = 1;
  report["tool"] = "svydpd";
  report["command"] = "fit";
  {
    Json inputs = Json::object();
    inputs["dataset"] = flags.dataset;
    Json grid = Json::array();
    for (double l : lambdas) grid.push_back(l);
    inputs["lambda"] = std::move(grid);
    inputs["omega"] = flags.omega;
    inputs["m_policy"] = flags.m_policy;
    inputs["framing"] = flags.framing;
    inputs["normalization"] = flags.normalization;
    inputs["per_stratum"] = flags.per_stratum;
    inputs["table_shares"] = flags.table_shares;
    inputs["multistart"] = flags.multistart;
    report["inputs"] = std::move(inputs);
  }
  report["dataset_summary"] = dataset_summary_json(data, flags.dataset);

  bool all_converged = true;
  Json results = Json::array();
  for (double lambda : lambdas) {
    const svydpd::DpdConfig cfg{lambda};
    const svydpd::SurveyDataset eff =
        flags.table_shares ? svydpd::table_share_weights(data, lambda) : data;
    const svydpd::FitResult fr = svydpd::fit(eff, cfg, fit_cfg);
    all_converged = all_converged && fr.converged;

    Json entry = Json::object();
    entry["lambda"] = lambda;
    entry["fit"] = fit_result_json(fr);
    entry["covariance"] =
        bundle_json(make_bundle(fr.beta_hat, eff, cfg, variant, policy, norm));

    Json nu_rows = Json::array();
    auto push_estimate = [&](svydpd::NuMethod method) {
      try {
        const svydpd::OverdispersionEstimate e =
            method == svydpd::NuMethod::EstimatingEquation
                ? svydpd::nu_estimating_equation(fr.beta_hat, eff, cfg, policy)
                : svydpd::nu_moments(fr.beta_hat, eff, policy);
        nu_rows.push_back(overdispersion_json(e));
      } catch (const svydpd::error& e) {
        Json row = Json::object();
        row["method"] = to_string(method);
        row["scope"] = "pooled";
        row["error"] = std::string(e.what());
        nu_rows.push_back(std::move(row));
      }
    };
    push_estimate(svydpd::NuMethod::EstimatingEquation);
    push_estimate(svydpd::NuMethod::Moments);
    if (flags.per_stratum) {
      for (svydpd::NuMethod method : {svydpd::NuMethod::EstimatingEquation,
                                      svydpd::NuMethod::Moments}) {
        try {
          for (const auto& e :
               svydpd::nu_per_stratum(fr.beta_hat, eff, cfg, method, policy))
            nu_rows.push_back(overdispersion_json(e));
        } catch (const svydpd::error& e) {
          Json row = Json::object();
          row["method"] = to_string(method);
          row["scope"] = "per-stratum";
          row["error"] = std::string(e.what());
          nu_rows.push_back(std::move(row));
        }
      }
    }
    entry["overdispersion"] = std::move(nu_rows);

    if (flags.framing == "stratumwise") {
      const svydpd::StratumMatrices sm =
          svydpd::stratumwise_matrices(fr.beta_hat, eff, cfg);
      Json strata = Json::array();
      for (std::size_t hi = 0; hi < sm.stratum_ids.size(); ++hi) {
        Json row = Json::object();
        row["stratum_id"] = sm.stratum_ids[hi];
        row["eta"] = sm.eta[static_cast<int>(hi)];
        row["psi"] = svydpd::matrix_to_json(sm.psi[hi]);
        row["omega_model"] = svydpd::matrix_to_json(sm.omega_model[hi]);
        row["omega_empirical"] = svydpd::matrix_to_json(sm.omega_empirical[hi]);
        strata.push_back(std::move(row));
      }
      entry["stratum_matrices"] = std::move(strata);
    }

    entry["fitted_probabilities"] = fitted_probabilities_json(fr.beta_hat, eff);
    results.push_back(std::move(entry));
  }
  report["results"] = std::move(results);
  const auto t1 = std::chrono::steady_clock::now();
  report["timing_seconds"] =
      std::chrono::duration_cast<std::chrono::duration<double>>(t1 - t0).count();

  emit(svydpd::json_to_string(report), flags.out);
  return all_converged ? kExitOk : kExitNotConverged;
}

// ---------------------------------------------------------------------------
// test
// ---------------------------------------------------------------------------

struct TestFlags {
  std::string dataset;
  std::string lambda_list = "0";
  std::string hypothesis;
  double alpha = 0.05;
  std::string omega = "empirical";
  std::string m_policy = "require-equal";
  bool table_shares = false;
  std::string out;
};

int cmd_test(const TestFlags& flags) {
  const svydpd::SurveyDataset data = svydpd::load_dataset(flags.dataset);
  const std::vector<double> lambdas = parse_lambda_list(flags.lambda_list);
  const svydpd::OmegaVariant variant = omega_from_string(flags.omega);
  const svydpd::MBarPolicy policy = m_policy_from_string(flags.m_policy);
  const svydpd::LinearHypothesis hyp = svydpd::hypothesis_from_json(
      json_arg(flags.hypothesis, "hypothesis"), data.param_dim());

  Json report = Json::object();
  report["schema_version"] = 1;
  report["tool"] = "svydpd";
  report["command"] = "test";
  {
    Json inputs = Json::object();
    inputs["dataset"] = flags.dataset;
    Json grid = Json::array();
    for (double l : lambdas) grid.push_back(l);
    inputs["lambda"] = std::move(grid);
    inputs["omega"] = flags.omega;
    inputs["alpha"] = flags.alpha;
    inputs["table_shares"] = flags.table_shares;
    Json h = Json::object();
    h["constraints"] = svydpd::matrix_to_json(hyp.m_matrix.transpose());
    h["rhs"] = svydpd::vector_to_json(hyp.l_vector);
    inputs["hypothesis"] = std::move(h);
    report["inputs"] = std::move(inputs);
  }
  report["dataset_summary"] = dataset_summary_json(data, flags.dataset);

  bool all_converged = true;
  Json results = Json::array();
  for (double lambda : lambdas) {
    const svydpd::DpdConfig cfg{lambda};
    const svydpd::SurveyDataset eff =
        flags.table_shares ? svydpd::table_share_weights(data, lambda) : data;
    const svydpd::FitResult fr = svydpd::fit(eff, cfg);
    all_converged = all_converged && fr.converged;
    const svydpd::CovarianceBundle bundle =
        make_bundle(fr.beta_hat, eff, cfg, variant, policy,
                    svydpd::Normalization::PerCluster);
    const svydpd::TestResult t =
        svydpd::wald_statistic(fr, bundle, hyp, flags.alpha);
    Json entry = Json::object();
    entry["lambda"] = lambda;
    entry["fit"] = fit_result_json(fr);
    entry["test"] = test_result_json(t);
    results.push_back(std::move(entry));
  }
  report["results"] = std::move(results);
  emit(svydpd::json_to_string(report), flags.out);
  return all_converged ? kExitOk : kExitNotConverged;
}

// ---------------------------------------------------------------------------
// influence
// ---------------------------------------------------------------------------

struct InfluenceFlags {
  std::string dataset;
  double lambda = 0.0;
  std::string contamination;
  std::string beta0;
  std::string baseline;
  std::string hypothesis;
  double alpha = 0.05;
  std::string out;
};

svydpd::ContaminationPoint point_from_json(const Json& j,
                                           const svydpd::SurveyDataset& data) {
  if (!j.is_object())
    throw svydpd::input_error("contamination entries must be objects");
  if (!j.contains("stratum") || !j.contains("cluster") || !j.contains("category"))
    throw svydpd::input_error(
        "contamination entries need 'stratum', 'cluster', and 'category'");
  auto match_field = [](const Json& v, int id, const std::string& label) {
    if (v.is_number_integer()) return v.get<int>() == id;
    return v.get<std::string>() == label;
  };
  const svydpd::ClusterRecord* hit = nullptr;
  for (const auto& rec : data.clusters) {
    if (match_field(j.at("stratum"), rec.stratum_id, rec.stratum_label) &&
        match_field(j.at("cluster"), rec.cluster_id, rec.cluster_label)) {
      hit = &rec;
      break;
    }
  }
  if (hit == nullptr)
    throw svydpd::input_error("contamination target not found in the dataset");
  const int category = j.at("category").get<int>();
  if (category < 1 || category > data.num_categories())
    throw svydpd::input_error("contamination category must lie in 1.." +
                              std::to_string(data.num_categories()));
  svydpd::ContaminationPoint point;
  point.target_stratum = hit->stratum_id;
  point.target_cluster = hit->cluster_id;
  point.t_vector = svydpd::Vector::Zero(data.num_categories());
  point.t_vector[category - 1] = 1.0;
  return point;
}

int cmd_influence(const InfluenceFlags& flags) {
  const svydpd::SurveyDataset data = svydpd::load_dataset(flags.dataset);
  const svydpd::DpdConfig cfg{flags.lambda};
  const Json contamination = json_arg(flags.contamination, "contamination");
  if (!contamination.is_array() || contamination.empty())
    throw svydpd::input_error("contamination must be a nonempty JSON array");
  svydpd::ContaminationSet set;
  for (const auto& item : contamination) set.points.push_back(point_from_json(item, data));
  set.validate(data.num_categories());

  bool fitted = false;
  bool converged = true;
  svydpd::Coefficients beta;
  if (!flags.beta0.empty()) {
    beta = svydpd::Coefficients{
        svydpd::matrix_from_json(json_arg(flags.beta0, "beta0"), "beta0")};
    if (beta.d() != data.d || beta.k() != data.k)
      throw svydpd::input_error("beta0 must be d x (k+1) for this dataset");
  } else {
    const svydpd::FitResult fr = svydpd::fit(data, cfg);
    beta = fr.beta_hat;
    fitted = true;
    converged = fr.converged;
  }

  Json report = Json::object();
  report["schema_version"] = 1;
  report["tool"] = "svydpd";
  report["command"] = "influence";
  {
    Json inputs = Json::object();
    inputs["dataset"] = flags.dataset;
    inputs["lambda"] = flags.lambda;
    inputs["beta_source"] = fitted ? "fitted" : "supplied";
    report["inputs"] = std::move(inputs);
  }
  report["dataset_summary"] = dataset_summary_json(data, flags.dataset);
  report["beta"] = svydpd::matrix_to_json(beta.beta);

  Json points = Json::array();
  for (const auto& point : set.points) {
    Json row = Json::object();
    row["stratum"] = point.target_stratum;
    row["cluster"] = point.target_cluster;
    int category = 0;
    for (int s = 0; s < point.t_vector.size(); ++s)
      if (point.t_vector[s] == 1.0) category = s + 1;
    row["category"] = category;
    row["if"] = svydpd::vector_to_json(svydpd::if_estimator(beta, data, cfg, point));
    if (!flags.baseline.empty()) {
      const svydpd::Vector g = svydpd::vector_from_json(
          json_arg(flags.baseline, "baseline"), "baseline");
      row["if_general"] = svydpd::vector_to_json(
          svydpd::if_estimator_general(beta, data, cfg, point, g));
    }
    points.push_back(std::move(row));
  }
  report["points"] = std::move(points);
  if (set.points.size() > 1)
    report["if_joint"] =
        svydpd::vector_to_json(svydpd::if_estimator_multi(beta, data, cfg, set));

  if (!flags.hypothesis.empty()) {
    const svydpd::LinearHypothesis hyp = svydpd::hypothesis_from_json(
        json_arg(flags.hypothesis, "hypothesis"), data.param_dim());
    Json wald = Json::object();
    wald["alpha"] = flags.alpha;
    if (set.points.size() == 1)
      wald["if2"] = svydpd::if2_wald(beta, data, cfg, hyp, set.points.front());
    else
      wald["if2"] = svydpd::if2_wald(beta, data, cfg, hyp, set);
    report["wald_influence"] = std::move(wald);
  }

  emit(svydpd::json_to_string(report), flags.out);
  return converged ? kExitOk : kExitNotConverged;
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

struct SimulateFlags {
  std::string scenario;
  std::string study = "rmse";
  long reps_override = -1;
  long long seed_override = -1;
  std::string out;
  std::string summary;
};

int cmd_simulate(const SimulateFlags& flags) {
  svydpd::ScenarioFile file = svydpd::load_scenario(flags.scenario);
  if (flags.reps_override > 0) file.spec.replications = flags.reps_override;
  if (flags.seed_override >= 0)
    file.spec.seed = static_cast<std::uint64_t>(flags.seed_override);

  std::string csv;
  Json rows_json = Json::array();
  long excluded_total = 0;
  if (flags.study == "rmse") {
    const svydpd::RmseStudy study = svydpd::run_rmse_study(file.spec);
    csv = svydpd::rmse_study_csv(study);
    for (const auto& r : study.rows) {
      Json row = Json::object();
      row["lambda"] = r.lambda;
      row["replications_used"] = r.replications_used;
      row["excluded"] = r.excluded;
      row["rmse_beta"] = r.rmse_beta;
      row["rmse_rho_estimating"] = r.rmse_rho_estimating;
      row["rmse_rho_moments"] = r.rmse_rho_moments;
      row["mean_rho_estimating"] = r.mean_rho_estimating;
      row["mean_rho_moments"] = r.mean_rho_moments;
      rows_json.push_back(std::move(row));
      excluded_total += r.excluded;
    }
  } else if (flags.study == "levelpower") {
    if (!file.has_hypothesis)
      throw svydpd::input_error(
          "levelpower study needs a 'hypothesis' block in the scenario file");
    const svydpd::LevelPowerStudy study = svydpd::run_level_power_study(
        file.spec, file.hypothesis, file.has_beta_alt ? &file.beta_alt : nullptr,
        file.alpha);
    csv = svydpd::level_power_csv(study);
    for (const auto& r : study.rows) {
      Json row = Json::object();
      row["lambda"] = r.lambda;
      row["level_used"] = r.level_used;
      row["level_excluded"] = r.level_excluded;
      row["level"] = r.level;
      row["level_se"] = r.level_se;
      if (r.has_power) {
        row["power_used"] = r.power_used;
        row["power_excluded"] = r.power_excluded;
        row["power"] = r.power;
        row["power_se"] = r.power_se;
      }
      rows_json.push_back(std::move(row));
      excluded_total += r.level_excluded + r.power_excluded;
    }
  } else {
    throw svydpd::input_error("unknown study '" + flags.study +
                              "'; valid: rmse, levelpower");
  }

  emit(csv, flags.out);
  if (!flags.out.empty()) {
    Json summary = Json::object();
    summary["schema_version"] = 1;
    summary["tool"] = "svydpd";
    summary["command"] = "simulate";
    summary["study"] = flags.study;
    summary["seed"] = file.spec.seed;
    summary["replications"] = file.spec.replications;
    summary["excluded_total"] = excluded_total;
    summary["scenario"] = svydpd::scenario_to_json(file);
    summary["rows"] = std::move(rows_json);
    const std::string summary_path =
        flags.summary.empty() ? flags.out + ".summary.json" : flags.summary;
    svydpd::atomic_write(summary_path, svydpd::json_to_string(summary));
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// compare
// ---------------------------------------------------------------------------

struct CompareFlags {
  std::string report_a;  // typically the contaminated fit
  std::string report_b;  // the reference (clean) fit; supplies denominators
  std::string dataset;
  std::string m_policy = "mean";
  std::string out;
};

struct ReportLambdaEntry {
  double lambda = 0.0;
  svydpd::Coefficients beta;
  std::vector<std::pair<std::string, svydpd::Vector>> probabilities;  // key -> pi
  bool has_rho_ee = false;
  double rho_ee = 0.0;
  bool has_rho_mom = false;
  double rho_mom = 0.0;
};

std::vector<ReportLambdaEntry> load_fit_report(const std::string& path) {
  const Json j = svydpd::json_from_string(svydpd::read_text_file(path), path);
  if (!j.is_object() || !j.contains("results"))
    throw svydpd::input_error("'" + path + "' is not a fit report (no results)");
  std::vector<ReportLambdaEntry> out;
  for (const auto& entry : j.at("results")) {
    ReportLambdaEntry e;
    e.lambda = entry.at("lambda").get<double>();
    e.beta = svydpd::Coefficients{
        svydpd::matrix_from_json(entry.at("fit").at("beta"), "report beta")};
    if (entry.contains("fitted_probabilities")) {
      for (const auto& row : entry.at("fitted_probabilities")) {
        const std::string key = row.at("stratum").get<std::string>() + "\x1f" +
                                row.at("cluster").get<std::string>();
        e.probabilities.emplace_back(
            key, svydpd::vector_from_json(row.at("pi"), "report pi"));
      }
    }
    if (entry.contains("overdispersion")) {
      for (const auto& row : entry.at("overdispersion")) {
        if (row.contains("error") || row.at("scope").get<std::string>() != "pooled")
          continue;
        const std::string method = row.at("method").get<std::string>();
        if (method == "estimating-equation") {
          e.rho_ee = row.at("rho_squared").get<double>();
          e.has_rho_ee = true;
        } else if (method == "moments") {
          e.rho_mom = row.at("rho_squared").get<double>();
          e.has_rho_mom = true;
        }
      }
    }
    out.push_back(std::move(e));
  }
  if (out.empty()) throw svydpd::input_error("'" + path + "' has no fit results");
  return out;
}

double masd_pi_from_reports(const ReportLambdaEntry& a, const ReportLambdaEntry& b) {
  if (a.probabilities.empty() || a.probabilities.size() != b.probabilities.size())
    throw svydpd::input_error(
        "reports carry different fitted-probability cluster sets");
  double sum = 0.0;
  long count = 0;
  for (const auto& [key, pa] : a.probabilities) {
    const svydpd::Vector* pb = nullptr;
    for (const auto& [kb, vb] : b.probabilities)
      if (kb == key) {
        pb = &vb;
        break;
      }
    if (pb == nullptr)
      throw svydpd::input_error("cluster missing from the reference report");
    if (pa.size() != pb->size())
      throw svydpd::input_error("fitted probability vectors have different lengths");
    for (int s = 0; s < pa.size(); ++s) {
      sum += std::abs((pa[s] - (*pb)[s]) / (*pb)[s]);
      ++count;
    }
  }
  return sum / static_cast<double>(count);
}

int cmd_compare(const CompareFlags& flags) {
  const std::vector<ReportLambdaEntry> a = load_fit_report(flags.report_a);
  const std::vector<ReportLambdaEntry> b = load_fit_report(flags.report_b);
  const svydpd::MBarPolicy policy = m_policy_from_string(flags.m_policy);
  const bool cross_eval = !flags.dataset.empty();
  svydpd::SurveyDataset data;
  if (cross_eval) data = svydpd::load_dataset(flags.dataset);

  std::string csv =
      "lambda,masd_beta,masd_pi,asd_rho_estimating,asd_rho_moments\n";
  for (const auto& ea : a) {
    const ReportLambdaEntry* eb = nullptr;
    for (const auto& cand : b)
      if (std::abs(cand.lambda - ea.lambda) <= 1e-12) {
        eb = &cand;
        break;
      }
    if (eb == nullptr)
      throw svydpd::input_error("lambda " + svydpd::format_double(ea.lambda) +
                                " missing from the reference report");
    const double mb = svydpd::masd_beta(ea.beta, eb->beta);
    const double mp = masd_pi_from_reports(ea, *eb);
    std::string ee_field, mom_field;
    if (cross_eval) {
      const svydpd::DpdConfig cfg{ea.lambda};
      const double ee_a =
          svydpd::nu_estimating_equation(ea.beta, data, cfg, policy).rho_squared;
      const double ee_b =
          svydpd::nu_estimating_equation(eb->beta, data, cfg, policy).rho_squared;
      ee_field = svydpd::format_double(svydpd::asd(ee_a, ee_b));
      const double mom_a = svydpd::nu_moments(ea.beta, data, policy).rho_squared;
      const double mom_b = svydpd::nu_moments(eb->beta, data, policy).rho_squared;
      mom_field = svydpd::format_double(svydpd::asd(mom_a, mom_b));
    } else {
      if (ea.has_rho_ee && eb->has_rho_ee)
        ee_field = svydpd::format_double(svydpd::asd(ea.rho_ee, eb->rho_ee));
      if (ea.has_rho_mom && eb->has_rho_mom)
        mom_field = svydpd::format_double(svydpd::asd(ea.rho_mom, eb->rho_mom));
    }
    csv += svydpd::format_double(ea.lambda) + "," + svydpd::format_double(mb) + "," +
           svydpd::format_double(mp) + "," + ee_field + "," + mom_field + "\n";
  }
  emit(csv, flags.out);
  return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"Robust polytomous logistic regression for stratified cluster samples"};
  app.require_subcommand(1);

  FitFlags fit_flags;
  CLI::App* fit_cmd = app.add_subcommand(
      "fit", "Fit the model over a lambda grid and report covariances");
  fit_cmd->add_option("dataset", fit_flags.dataset, "dataset CSV path")->required();
  fit_cmd->add_option("--lambda", fit_flags.lambda_list,
                      "comma-separated lambda grid (default 0)");
  fit_cmd->add_option("--omega", fit_flags.omega,
                      "variability matrix: multinomial|overdispersed|empirical");
  fit_cmd->add_option("--m-policy", fit_flags.m_policy,
                      "unequal cluster sizes: require-equal|mean");
  fit_cmd->add_option("--framing", fit_flags.framing,
                      "asymptotic framing: pooled|stratumwise");
  fit_cmd->add_option("--normalization", fit_flags.normalization,
                      "sandwich scale: per-cluster|per-unit");
  fit_cmd->add_flag("--per-stratum", fit_flags.per_stratum,
                    "also estimate nu/rho^2 within each stratum");
  fit_cmd->add_flag("--table-shares", fit_flags.table_shares,
                    "reweight clusters to compare table-share distributions");
  fit_cmd->add_option("--multistart", fit_flags.multistart,
                      "extra perturbed starts (deterministic)");
  fit_cmd->add_option("--max-iterations", fit_flags.max_iterations, "Newton cap");
  fit_cmd->add_option("--tol", fit_flags.tolerance, "sup-norm gradient tolerance");
  fit_cmd->add_option("--out", fit_flags.out, "write the JSON report here");

  TestFlags test_flags;
  CLI::App* test_cmd =
      app.add_subcommand("test", "Wald test of a linear hypothesis M' beta = l");
  test_cmd->add_option("dataset", test_flags.dataset, "dataset CSV path")->required();
  test_cmd->add_option("--lambda", test_flags.lambda_list,
                       "comma-separated lambda grid (default 0)");
  test_cmd->add_option("--hypothesis", test_flags.hypothesis,
                       "hypothesis JSON (inline or a file path)")
      ->required();
  test_cmd->add_option("--alpha", test_flags.alpha, "test level (default 0.05)");
  test_cmd->add_option("--omega", test_flags.omega,
                       "variability matrix (default empirical)");
  test_cmd->add_option("--m-policy", test_flags.m_policy,
                       "unequal cluster sizes: require-equal|mean");
  test_cmd->add_flag("--table-shares", test_flags.table_shares,
                     "reweight clusters to compare table-share distributions");
  test_cmd->add_option("--out", test_flags.out, "write the JSON report here");

  InfluenceFlags infl_flags;
  CLI::App* infl_cmd = app.add_subcommand(
      "influence", "Influence functions under point-mass contamination");
  infl_cmd->add_option("dataset", infl_flags.dataset, "dataset CSV path")->required();
  infl_cmd->add_option("--lambda", infl_flags.lambda, "tuning parameter (default 0)");
  infl_cmd
      ->add_option("--contamination", infl_flags.contamination,
                   "JSON list of {stratum, cluster, category} (inline or path)")
      ->required();
  infl_cmd->add_option("--beta0", infl_flags.beta0,
                       "evaluate at this d x (k+1) matrix instead of fitting");
  infl_cmd->add_option("--baseline", infl_flags.baseline,
                       "baseline composition g for the general influence form");
  infl_cmd->add_option("--hypothesis", infl_flags.hypothesis,
                       "also compute the Wald functional's second-order influence");
  infl_cmd->add_option("--alpha", infl_flags.alpha, "test level (default 0.05)");
  infl_cmd->add_option("--out", infl_flags.out, "write the JSON report here");

  SimulateFlags sim_flags;
  CLI::App* sim_cmd =
      app.add_subcommand("simulate", "Seeded Monte Carlo study over a scenario");
  sim_cmd->add_option("--scenario", sim_flags.scenario, "scenario JSON path")
      ->required();
  sim_cmd->add_option("--study", sim_flags.study, "rmse|levelpower (default rmse)");
  sim_cmd->add_option("--reps", sim_flags.reps_override, "override replication count");
  sim_cmd->add_option("--seed", sim_flags.seed_override, "override the seed");
  sim_cmd->add_option("--out", sim_flags.out,
                      "write the CSV table here (plus <out>.summary.json)");
  sim_cmd->add_option("--summary", sim_flags.summary,
                      "summary JSON path (default <out>.summary.json)");

  CompareFlags cmp_flags;
  CLI::App* cmp_cmd = app.add_subcommand(
      "compare", "Standardized deviations between two fit reports");
  cmp_cmd->add_option("report_a", cmp_flags.report_a, "fit report (e.g. contaminated)")
      ->required();
  cmp_cmd
      ->add_option("report_b", cmp_flags.report_b,
                   "reference fit report; its values are the denominators")
      ->required();
  cmp_cmd->add_option("--dataset", cmp_flags.dataset,
                      "re-evaluate rho^2 on this dataset at both reports' beta");
  cmp_cmd->add_option("--m-policy", cmp_flags.m_policy,
                      "unequal cluster sizes: require-equal|mean (default mean)");
  cmp_cmd->add_option("--out", cmp_flags.out, "write the CSV table here");

  CLI11_PARSE(app, argc, argv);

  try {
    if (fit_cmd->parsed()) return cmd_fit(fit_flags);
    if (test_cmd->parsed()) return cmd_test(test_flags);
    if (infl_cmd->parsed()) return cmd_influence(infl_flags);
    if (sim_cmd->parsed()) return cmd_simulate(sim_flags);
    if (cmp_cmd->parsed()) return cmd_compare(cmp_flags);
    std::cerr << "error: no subcommand\n";
    return kExitError;
  } catch (const svydpd::error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitError;
  }
}
