#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "certrl/attack.hpp"
#include "certrl/certifier.hpp"
#include "certrl/config.hpp"
#include "certrl/env.hpp"
#include "certrl/hash.hpp"
#include "certrl/model.hpp"
#include "certrl/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitError = 1;
constexpr int kExitVerifyFailed = 3;

#ifndef CERTRL_GIT_VERSION
#define CERTRL_GIT_VERSION "v0.0.0-unknown"
#endif

std::string version_string() { return CERTRL_GIT_VERSION; }

class Stopwatch {
 public:
  Stopwatch() : start_(std::chrono::steady_clock::now()) {}
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                         start_)
        .count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

void write_json(const fs::path& path, const json& j) {
  write_text(path, j.dump(2) + "\n");
}

json read_json(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  json j;
  in >> j;
  return j;
}

// Artifact inventory of one command; `report` later rechecks every hash.
class Manifest {
 public:
  Manifest(std::string command, fs::path out_dir, const certrl::RunConfig& rc)
      : command_(std::move(command)), dir_(std::move(out_dir)) {
    doc_["command"] = command_;
    doc_["version"] = version_string();
    doc_["seed"] = rc.seed;
    doc_["config"] = rc.to_key_values();
    doc_["artifacts"] = json::array();
  }

  void add(const std::string& recorded_path, const fs::path& actual) {
    doc_["artifacts"].push_back(
        {{"path", recorded_path},
         {"hash", certrl::hex64(certrl::hash_file(actual.string()))}});
  }

  void add_local(const std::string& rel) { add(rel, dir_ / rel); }

  void finish(double seconds) {
    doc_["timings"] = {{"total_seconds", seconds}};
    write_json(dir_ / ("manifest_" + command_ + ".json"), doc_);
  }

 private:
  json doc_;
  std::string command_;
  fs::path dir_;
};

std::vector<std::string> check_manifests(const fs::path& run_dir) {
  std::vector<std::string> problems;
  bool found = false;
  std::vector<fs::path> manifests;
  for (const auto& entry : fs::directory_iterator(run_dir)) {
    const std::string name = entry.path().filename().string();
    if (name.rfind("manifest_", 0) == 0 &&
        entry.path().extension() == ".json")
      manifests.push_back(entry.path());
  }
  std::sort(manifests.begin(), manifests.end());
  for (const fs::path& mpath : manifests) {
    found = true;
    const std::string name = mpath.filename().string();
    const json man = read_json(mpath);
    for (const json& art : man.at("artifacts")) {
      const std::string rel = art.at("path").get<std::string>();
      const fs::path p =
          fs::path(rel).is_absolute() ? fs::path(rel) : run_dir / rel;
      if (!fs::exists(p)) {
        problems.push_back(name + ": missing artifact " + rel);
        continue;
      }
      if (certrl::hex64(certrl::hash_file(p.string())) !=
          art.at("hash").get<std::string>())
        problems.push_back(name + ": hash mismatch for " + rel);
    }
  }
  if (!found)
    problems.push_back("no manifest_*.json in " + run_dir.string());
  return problems;
}

struct DynamicsHandle {
  certrl::Mdp env;
  std::unique_ptr<certrl::AbstractDynamics> dyn;
};

DynamicsHandle make_dynamics(const certrl::RunConfig& rc,
                             const std::string& model_path) {
  DynamicsHandle h;
  h.env = certrl::make_env(rc.env_name);
  if (rc.exact_env) {
    h.dyn = std::make_unique<certrl::EnvDynamics>(h.env);
  } else {
    if (model_path.empty())
      throw std::invalid_argument("need --model <checkpoint> or --exact-env");
    h.dyn = std::make_unique<certrl::ModelDynamics>(
        certrl::GaussianModel::load(model_path));
  }
  return h;
}

struct CertRow {
  int horizon = 0;
  certrl::WcarResult w;
  double bound = std::numeric_limits<double>::quiet_NaN();
};

CertRow run_wcar(const certrl::GaussianPolicy& policy,
                 const certrl::AbstractDynamics& dyn, const certrl::Mdp& env,
                 const certrl::RunConfig& rc, int horizon) {
  certrl::CertConfig cc = rc.cert;
  cc.horizon = horizon;
  cc.threads = certrl::env_thread_count();
  CertRow row;
  row.horizon = horizon;
  row.w = certrl::wcar(policy, dyn, env.init_sampler,
                       certrl::PerturbationSpec(rc.epsilon), cc, rc.seed);
  if (std::isfinite(row.w.wcar))
    row.bound = certrl::theorem1_bound(
        row.w.wcar, row.w.variance, cc.num_samples, cc.delta, dyn.delta_e(),
        horizon, dyn.dynamics_lipschitz(), policy.lipschitz_upper(),
        dyn.reward_lipschitz(), dyn.d_e());
  return row;
}

int cmd_train(const certrl::RunConfig& rc, const fs::path& out) {
  Stopwatch clock;
  rc.validate();
  const certrl::Mdp env = certrl::make_env(rc.env_name);
  const certrl::TrainResult res = certrl::train(env, rc.train, rc.seed);

  fs::create_directories(out);
  res.policy.save((out / "policy.ckpt").string());
  res.model.save((out / "model.ckpt").string());
  certrl::save_log_csv(res.log, (out / "train_log.csv").string());

  const certrl::EpochLog& last = res.log.back();
  const json summary = {
      {"env", rc.env_name},
      {"seed", rc.seed},
      {"epochs", rc.train.epochs},
      {"env_steps", last.env_steps},
      {"final_nominal_reward", last.nominal_reward},
      {"final_symbolic_loss", last.symbolic_loss},
      {"final_lambda", last.lambda},
      {"final_epsilon", last.epsilon_t},
      {"symbolic_skipped", res.symbolic_skipped},
      {"policy_hash", certrl::hex64(res.policy.content_hash())},
      {"model_hash", certrl::hex64(res.model.content_hash())},
      {"model_error",
       {{"eps_e", res.model.eps_e},
        {"delta_e", res.model.delta_e},
        {"d_e", res.model.d_e}}},
      {"version", version_string()}};
  write_json(out / "train_summary.json", summary);

  Manifest man("train", out, rc);
  man.add_local("policy.ckpt");
  man.add_local("model.ckpt");
  man.add_local("train_log.csv");
  man.add_local("train_summary.json");
  man.finish(clock.seconds());

  std::printf("trained %s for %d epochs: nominal reward %.6g\n",
              rc.env_name.c_str(), rc.train.epochs, last.nominal_reward);
  std::printf("artifacts in %s\n", out.string().c_str());
  return 0;
}

int cmd_certify(const certrl::RunConfig& rc, const std::string& policy_path,
                const std::string& model_path, const fs::path& out) {
  Stopwatch clock;
  rc.validate();
  const certrl::GaussianPolicy policy =
      certrl::GaussianPolicy::load(policy_path);
  const DynamicsHandle h = make_dynamics(rc, model_path);
  const CertRow row = run_wcar(policy, *h.dyn, h.env, rc, rc.cert.horizon);

  fs::create_directories(out / "certs");
  json trace_files = json::array();
  for (std::size_t i = 0; i < row.w.traces.size(); ++i) {
    char name[40];
    std::snprintf(name, sizeof(name), "certs/trace_%05zu.txt", i);
    certrl::save_trace(row.w.traces[i], (out / name).string());
    trace_files.push_back(std::string(name));
  }

  json summary = {
      {"env", rc.env_name},
      {"reward_mode", h.dyn->reward_mode()},
      {"exact_env", rc.exact_env},
      {"epsilon", rc.epsilon},
      {"horizon", rc.cert.horizon},
      {"samples", rc.cert.num_samples},
      {"delta", rc.cert.delta},
      {"seed", rc.seed},
      {"wcar", row.w.wcar},
      {"variance", row.w.variance},
      {"theorem_bound", row.bound},
      {"num_not_certifiable", row.w.num_not_certifiable},
      {"model_error",
       {{"eps_e", h.dyn->eps_e()},
        {"delta_e", h.dyn->delta_e()},
        {"d_e", h.dyn->d_e()}}},
      {"policy_path", fs::absolute(policy_path).string()},
      {"policy_hash", certrl::hex64(policy.content_hash())},
      {"dynamics_hash", certrl::hex64(h.dyn->content_hash())},
      {"trace_files", trace_files},
      {"version", version_string()}};
  if (!rc.exact_env)
    summary["model_path"] = fs::absolute(model_path).string();
  write_json(out / "certify_summary.json", summary);

  Manifest man("certify", out, rc);
  man.add(fs::absolute(policy_path).string(), policy_path);
  if (!rc.exact_env)
    man.add(fs::absolute(model_path).string(), model_path);
  for (const json& t : trace_files) man.add_local(t.get<std::string>());
  man.add_local("certify_summary.json");
  man.finish(clock.seconds());

  std::printf("wcar %.17g over %d samples (horizon %d, epsilon %.17g)\n",
              row.w.wcar, rc.cert.num_samples, rc.cert.horizon, rc.epsilon);
  std::printf("certified lower bound %.17g\n", row.bound);
  if (row.w.num_not_certifiable > 0)
    std::printf("not certifiable: %d of %d samples\n",
                row.w.num_not_certifiable, rc.cert.num_samples);
  std::printf("certificates in %s\n", (out / "certs").string().c_str());
  return 0;
}

int cmd_verify(const std::string& target, std::string policy_path,
               std::string model_path, std::string env_name, bool exact_env) {
  std::vector<fs::path> trace_paths;
  if (fs::is_directory(target)) {
    const json summary = read_json(fs::path(target) / "certify_summary.json");
    for (const json& t : summary.at("trace_files"))
      trace_paths.push_back(fs::path(target) / t.get<std::string>());
    if (policy_path.empty())
      policy_path = summary.at("policy_path").get<std::string>();
    if (summary.at("exact_env").get<bool>()) {
      exact_env = true;
      if (env_name.empty()) env_name = summary.at("env").get<std::string>();
    } else if (model_path.empty()) {
      model_path = summary.at("model_path").get<std::string>();
    }
  } else {
    trace_paths.emplace_back(target);
  }
  if (trace_paths.empty())
    throw std::runtime_error("no certificates to verify");
  if (policy_path.empty())
    throw std::invalid_argument("need --policy <checkpoint>");

  const certrl::GaussianPolicy policy =
      certrl::GaussianPolicy::load(policy_path);
  certrl::Mdp env;
  std::unique_ptr<certrl::AbstractDynamics> dyn;
  if (exact_env) {
    if (env_name.empty())
      throw std::invalid_argument("need --env with --exact-env");
    env = certrl::make_env(env_name);
    dyn = std::make_unique<certrl::EnvDynamics>(env);
  } else {
    if (model_path.empty())
      throw std::invalid_argument("need --model <checkpoint> or --exact-env");
    dyn = std::make_unique<certrl::ModelDynamics>(
        certrl::GaussianModel::load(model_path));
  }

  std::size_t failed = 0;
  for (const fs::path& p : trace_paths) {
    std::string why;
    bool ok = false;
    try {
      const certrl::AbstractTrace trace = certrl::load_trace(p.string());
      ok = certrl::verify_certificate(trace, policy, *dyn, &why);
    } catch (const std::exception& e) {
      why = e.what();
    }
    if (!ok) {
      ++failed;
      std::cerr << json{{"trace", p.string()}, {"error", why}}.dump() << "\n";
    }
  }
  std::printf("verified %zu certificates: %zu ok, %zu failed\n",
              trace_paths.size(), trace_paths.size() - failed, failed);
  return failed == 0 ? 0 : kExitVerifyFailed;
}

int cmd_attack(const certrl::RunConfig& rc, const std::string& policy_path,
               const fs::path& out) {
  Stopwatch clock;
  rc.validate();
  const certrl::Mdp env = certrl::make_env(rc.env_name);
  const certrl::GaussianPolicy policy =
      certrl::GaussianPolicy::load(policy_path);
  const int threads = certrl::env_thread_count();

  json rows = json::array();
  std::string csv = "attack,epsilon,episodes,mean,stddev\n";
  const auto add_row = [&](const std::string& label,
                           const certrl::AttackConfig& cfg) {
    const certrl::AttackResult r = certrl::attacked_return(
        policy, env, cfg, rc.attack_episodes, rc.seed, threads);
    rows.push_back({{"attack", label},
                    {"epsilon", cfg.epsilon},
                    {"episodes", rc.attack_episodes},
                    {"mean", r.mean},
                    {"stddev", r.stddev}});
    char line[160];
    std::snprintf(line, sizeof(line), "%s,%.17g,%d,%.17g,%.17g\n",
                  label.c_str(), cfg.epsilon, rc.attack_episodes, r.mean,
                  r.stddev);
    csv += line;
    std::printf("%-12s mean %.6g stddev %.6g\n", label.c_str(), r.mean,
                r.stddev);
  };

  certrl::AttackConfig nominal = rc.attack;
  nominal.epsilon = 0.0;
  add_row("nominal", nominal);
  for (certrl::AttackKind kind :
       {certrl::AttackKind::random, certrl::AttackKind::grid_corner,
        certrl::AttackKind::gradient_mad}) {
    certrl::AttackConfig cfg = rc.attack;
    cfg.kind = kind;
    cfg.epsilon = rc.epsilon;
    add_row(certrl::to_string(kind), cfg);
  }

  fs::create_directories(out);
  write_text(out / "attack_report.csv", csv);
  const json report = {{"env", rc.env_name},
                       {"seed", rc.seed},
                       {"episodes", rc.attack_episodes},
                       {"policy_path", fs::absolute(policy_path).string()},
                       {"policy_hash", certrl::hex64(policy.content_hash())},
                       {"rows", rows},
                       {"version", version_string()}};
  write_json(out / "attack_report.json", report);

  Manifest man("attack", out, rc);
  man.add(fs::absolute(policy_path).string(), policy_path);
  man.add_local("attack_report.csv");
  man.add_local("attack_report.json");
  man.finish(clock.seconds());
  return 0;
}

int cmd_report(certrl::RunConfig rc, bool had_config_file,
               const fs::path& run_dir, const std::vector<int>& horizons,
               CLI::App* sub) {
  Stopwatch clock;
  if (!fs::is_directory(run_dir))
    throw std::runtime_error("not a run directory: " + run_dir.string());
  for (int T : horizons)
    if (T < 1)
      throw std::invalid_argument("report: horizons must be >= 1");

  const std::vector<std::string> problems = check_manifests(run_dir);
  if (!problems.empty()) {
    std::cerr << json{{"error", "manifest check failed"},
                      {"problems", problems}}
                     .dump()
              << "\n";
    return kExitError;
  }

  const auto passed = [&](const std::string& name) {
    const CLI::Option* op = sub->get_option_no_throw(name);
    return op && op->count() > 0;
  };

  // A bare `report <dir>` reuses the settings the run was certified with.
  const fs::path summary_path = run_dir / "certify_summary.json";
  if (fs::exists(summary_path) && !had_config_file) {
    const json s = read_json(summary_path);
    if (!passed("--env")) rc.env_name = s.at("env").get<std::string>();
    if (!passed("--epsilon")) rc.epsilon = s.at("epsilon").get<double>();
    if (!passed("--samples"))
      rc.cert.num_samples = s.at("samples").get<int>();
    if (!passed("--delta")) rc.cert.delta = s.at("delta").get<double>();
    if (!passed("--exact-env")) rc.exact_env = s.at("exact_env").get<bool>();
    if (!passed("--seed")) rc.seed = s.at("seed").get<std::uint64_t>();
  }
  rc.validate();

  std::string policy_file, model_file;
  if (fs::exists(summary_path)) {
    const json s = read_json(summary_path);
    policy_file = s.at("policy_path").get<std::string>();
    if (s.contains("model_path"))
      model_file = s.at("model_path").get<std::string>();
  }
  if (policy_file.empty() && fs::exists(run_dir / "policy.ckpt"))
    policy_file = (run_dir / "policy.ckpt").string();
  if (model_file.empty() && fs::exists(run_dir / "model.ckpt"))
    model_file = (run_dir / "model.ckpt").string();
  if (policy_file.empty())
    throw std::runtime_error("no policy checkpoint in " + run_dir.string());

  const certrl::GaussianPolicy policy =
      certrl::GaussianPolicy::load(policy_file);
  const DynamicsHandle h = make_dynamics(rc, model_file);

  json rows = json::array();
  std::string csv = "horizon,wcar,wcar_per_step,theorem_bound,bound_per_step\n";
  std::printf("%8s %14s %14s %14s\n", "horizon", "wcar", "wcar/T", "bound");
  for (int T : horizons) {
    const CertRow row = run_wcar(policy, *h.dyn, h.env, rc, T);
    const double per = row.w.wcar / T;
    const double bper = row.bound / T;
    rows.push_back({{"horizon", T},
                    {"wcar", row.w.wcar},
                    {"wcar_per_step", per},
                    {"theorem_bound", row.bound},
                    {"bound_per_step", bper},
                    {"num_not_certifiable", row.w.num_not_certifiable}});
    char line[200];
    std::snprintf(line, sizeof(line), "%d,%.17g,%.17g,%.17g,%.17g\n", T,
                  row.w.wcar, per, row.bound, bper);
    csv += line;
    std::printf("%8d %14.6g %14.6g %14.6g\n", T, row.w.wcar, per, row.bound);
  }

  json report = {{"env", rc.env_name},
                 {"epsilon", rc.epsilon},
                 {"samples", rc.cert.num_samples},
                 {"seed", rc.seed},
                 {"exact_env", rc.exact_env},
                 {"policy_hash", certrl::hex64(policy.content_hash())},
                 {"manifest_check", "ok"},
                 {"wcar_table", rows},
                 {"version", version_string()}};
  if (fs::exists(run_dir / "attack_report.json"))
    report["attack"] = read_json(run_dir / "attack_report.json");
  if (fs::exists(run_dir / "train_summary.json"))
    report["train"] = read_json(run_dir / "train_summary.json");
  if (fs::exists(summary_path)) report["certify"] = read_json(summary_path);

  write_text(run_dir / "report.csv", csv);
  write_json(run_dir / "report.json", report);

  Manifest man("report", run_dir, rc);
  man.add_local("report.csv");
  man.add_local("report.json");
  man.finish(clock.seconds());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"reward certificates for reinforcement learning policies"};
  app.set_version_flag("--version", version_string());
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir = "run";
  std::string env_name, policy_path, model_path, target;
  std::uint64_t seed = 0;
  double epsilon = 0.0, cert_delta = 0.0, delta_e = 0.0;
  int horizon = 0, samples = 0, episodes = 0;
  bool exact_env = false;
  std::vector<int> horizons{1, 2, 5, 10};

  const auto add_shared = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "key = value config file");
    sub->add_option("--seed", seed, "rng seed");
    sub->add_option("--env", env_name, "environment name");
  };

  CLI::App* train_cmd = app.add_subcommand(
      "train", "train a policy against the certified-robustness objective");
  add_shared(train_cmd);
  train_cmd->add_option("--out-dir", out_dir, "output directory");
  train_cmd->add_option("--delta-e", delta_e,
                        "model error confidence level");

  CLI::App* certify_cmd = app.add_subcommand(
      "certify", "sample certified lower bounds and write certificates");
  add_shared(certify_cmd);
  certify_cmd->add_option("--out-dir", out_dir, "output directory");
  certify_cmd->add_option("--policy", policy_path, "policy checkpoint")
      ->required();
  certify_cmd->add_option("--model", model_path, "dynamics model checkpoint");
  certify_cmd->add_flag("--exact-env", exact_env,
                        "certify against the environment's own dynamics");
  certify_cmd->add_option("--epsilon", epsilon,
                          "observation perturbation radius");
  certify_cmd->add_option("--horizon", horizon, "certified horizon");
  certify_cmd->add_option("--samples", samples, "number of start states");
  certify_cmd->add_option("--delta", cert_delta, "bound confidence level");

  CLI::App* verify_cmd = app.add_subcommand(
      "verify", "recheck certificates against their checkpoints");
  verify_cmd
      ->add_option("bundle", target,
                   "certificate bundle directory or single trace file")
      ->required();
  verify_cmd->add_option("--policy", policy_path, "policy checkpoint");
  verify_cmd->add_option("--model", model_path, "dynamics model checkpoint");
  verify_cmd->add_flag("--exact-env", exact_env,
                       "verify against the environment's own dynamics");
  verify_cmd->add_option("--env", env_name, "environment name");

  CLI::App* attack_cmd =
      app.add_subcommand("attack", "empirical attacked-return report");
  add_shared(attack_cmd);
  attack_cmd->add_option("--out-dir", out_dir, "output directory");
  attack_cmd->add_option("--policy", policy_path, "policy checkpoint")
      ->required();
  attack_cmd->add_option("--epsilon", epsilon,
                         "observation perturbation radius");
  attack_cmd->add_option("--episodes", episodes, "episodes per attack row");

  CLI::App* report_cmd = app.add_subcommand(
      "report", "check manifests and aggregate a run directory");
  report_cmd->add_option("run_dir", target, "run directory")->required();
  add_shared(report_cmd);
  report_cmd->add_option("--epsilon", epsilon,
                         "observation perturbation radius");
  report_cmd->add_option("--samples", samples, "number of start states");
  report_cmd->add_option("--delta", cert_delta, "bound confidence level");
  report_cmd->add_flag("--exact-env", exact_env,
                       "certify against the environment's own dynamics");
  report_cmd->add_option("--horizons", horizons,
                         "horizons of the per-step table");

  CLI11_PARSE(app, argc, argv);

  const auto build_rc = [&](CLI::App* sub) {
    certrl::RunConfig rc = config_path.empty()
                               ? certrl::RunConfig()
                               : certrl::RunConfig::from_file(config_path);
    const auto passed = [&](const std::string& name) {
      const CLI::Option* op = sub->get_option_no_throw(name);
      return op && op->count() > 0;
    };
    if (passed("--seed")) rc.seed = seed;
    if (passed("--env")) rc.env_name = env_name;
    if (passed("--epsilon")) rc.epsilon = epsilon;
    if (passed("--horizon")) rc.cert.horizon = horizon;
    if (passed("--samples")) rc.cert.num_samples = samples;
    if (passed("--delta")) rc.cert.delta = cert_delta;
    if (passed("--delta-e")) rc.train.delta_e = delta_e;
    if (passed("--exact-env")) rc.exact_env = exact_env;
    if (passed("--episodes")) rc.attack_episodes = episodes;
    return rc;
  };

  const auto guarded = [&](const std::function<int()>& body) {
    try {
      return body();
    } catch (const std::exception& e) {
      std::cerr << json{{"error", e.what()}}.dump() << "\n";
      return kExitError;
    }
  };

  if (train_cmd->parsed())
    return guarded([&] { return cmd_train(build_rc(train_cmd), out_dir); });
  if (certify_cmd->parsed())
    return guarded([&] {
      return cmd_certify(build_rc(certify_cmd), policy_path, model_path,
                         out_dir);
    });
  if (verify_cmd->parsed())
    return guarded([&] {
      return cmd_verify(target, policy_path, model_path, env_name, exact_env);
    });
  if (attack_cmd->parsed())
    return guarded(
        [&] { return cmd_attack(build_rc(attack_cmd), policy_path, out_dir); });
  if (report_cmd->parsed())
    return guarded([&] {
      return cmd_report(build_rc(report_cmd), !config_path.empty(), target,
                        horizons, report_cmd);
    });
  return kExitError;
}
