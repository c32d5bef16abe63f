#include "certrl/config.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "certrl/env.hpp"

namespace certrl {

namespace {

std::string trim(const std::string& s) {
  const std::size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const std::size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

double to_double(const std::string& key, const std::string& v) {
  const char* c = v.c_str();
  char* end = nullptr;
  const double x = std::strtod(c, &end);
  if (end == c || *end != '\0')
    throw std::invalid_argument("config: bad number for " + key + ": " + v);
  return x;
}

long long to_ll(const std::string& key, const std::string& v) {
  const char* c = v.c_str();
  char* end = nullptr;
  const long long x = std::strtoll(c, &end, 10);
  if (end == c || *end != '\0')
    throw std::invalid_argument("config: bad integer for " + key + ": " + v);
  return x;
}

int to_int(const std::string& key, const std::string& v) {
  const long long x = to_ll(key, v);
  if (x < std::numeric_limits<int>::min() ||
      x > std::numeric_limits<int>::max())
    throw std::invalid_argument("config: integer out of range for " + key);
  return static_cast<int>(x);
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  if (!v.empty() && v[0] == '-')
    throw std::invalid_argument("config: " + key + " must be nonnegative");
  const char* c = v.c_str();
  char* end = nullptr;
  const unsigned long long x = std::strtoull(c, &end, 10);
  if (end == c || *end != '\0')
    throw std::invalid_argument("config: bad integer for " + key + ": " + v);
  return x;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "0" || v == "false") return false;
  if (v == "1" || v == "true") return true;
  throw std::invalid_argument("config: bad boolean for " + key + ": " + v);
}

std::vector<int> to_int_list(const std::string& key, const std::string& v) {
  std::vector<int> out;
  if (trim(v).empty()) return out;
  std::istringstream in(v);
  std::string tok;
  while (std::getline(in, tok, ',')) out.push_back(to_int(key, trim(tok)));
  return out;
}

std::string list_str(const std::vector<int>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(v[i]);
  }
  return out;
}

}  // namespace

std::map<std::string, std::string> parse_key_values(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config: expected key = value on line " +
                                  std::to_string(lineno));
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty())
      throw std::invalid_argument("config: empty key on line " +
                                  std::to_string(lineno));
    if (!kv.emplace(key, value).second)
      throw std::invalid_argument("config: duplicate key " + key);
  }
  return kv;
}

std::map<std::string, std::string> read_key_values(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read config: " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_key_values(buf.str());
}

RunConfig RunConfig::from_key_values(
    const std::map<std::string, std::string>& kv) {
  RunConfig rc;
  for (const auto& [key, v] : kv) {
    if (key == "env") rc.env_name = v;
    else if (key == "seed") rc.seed = to_u64(key, v);
    else if (key == "epsilon") rc.epsilon = to_double(key, v);
    else if (key == "exact_env") rc.exact_env = to_bool(key, v);
    else if (key == "attack_episodes") rc.attack_episodes = to_int(key, v);
    else if (key == "epochs") rc.train.epochs = to_int(key, v);
    else if (key == "init_env_episodes")
      rc.train.init_env_episodes = to_int(key, v);
    else if (key == "env_episodes") rc.train.env_episodes = to_int(key, v);
    else if (key == "env_horizon") rc.train.env_horizon = to_int(key, v);
    else if (key == "model_rollouts") rc.train.model_rollouts = to_int(key, v);
    else if (key == "model_horizon") rc.train.model_horizon = to_int(key, v);
    else if (key == "grad_steps") rc.train.grad_steps = to_int(key, v);
    else if (key == "t_train") rc.train.t_train = to_int(key, v);
    else if (key == "normal_batch") rc.train.normal_batch = to_int(key, v);
    else if (key == "eval_episodes") rc.train.eval_episodes = to_int(key, v);
    else if (key == "train_delta") rc.train.delta = to_double(key, v);
    else if (key == "lambda0") rc.train.lambda0 = to_double(key, v);
    else if (key == "alpha") rc.train.alpha = to_double(key, v);
    else if (key == "alpha_dual") rc.train.alpha_dual = to_double(key, v);
    else if (key == "policy_hidden")
      rc.train.policy_hidden = to_int_list(key, v);
    else if (key == "policy_init_sigma")
      rc.train.policy_init_sigma = to_double(key, v);
    else if (key == "model_hidden")
      rc.train.model_hidden = to_int_list(key, v);
    else if (key == "model_fit_epochs")
      rc.train.model_fit_epochs = to_int(key, v);
    else if (key == "model_batch") rc.train.model_batch = to_int(key, v);
    else if (key == "model_lr") rc.train.model_lr = to_double(key, v);
    else if (key == "model_init_sigma")
      rc.train.model_init_sigma = to_double(key, v);
    else if (key == "delta_e") rc.train.delta_e = to_double(key, v);
    else if (key == "eps_target")
      rc.train.schedule.eps_target = to_double(key, v);
    else if (key == "eps_end_step")
      rc.train.schedule.end_step = to_int(key, v);
    else if (key == "eps_final_step")
      rc.train.schedule.final_step = to_int(key, v);
    else if (key == "eps_temperature")
      rc.train.schedule.temperature = to_double(key, v);
    else if (key == "samples") rc.cert.num_samples = to_int(key, v);
    else if (key == "horizon") rc.cert.horizon = to_int(key, v);
    else if (key == "cert_delta") rc.cert.delta = to_double(key, v);
    else if (key == "attack_kind")
      rc.attack.kind = attack_kind_from_string(v);
    else if (key == "attack_steps") rc.attack.steps = to_int(key, v);
    else if (key == "attack_step_size")
      rc.attack.step_size = to_double(key, v);
    else
      throw std::invalid_argument("config: unknown key " + key);
  }
  return rc;
}

RunConfig RunConfig::from_file(const std::string& path) {
  return from_key_values(read_key_values(path));
}

std::map<std::string, std::string> RunConfig::to_key_values() const {
  std::map<std::string, std::string> kv;
  kv["env"] = env_name;
  kv["seed"] = std::to_string(seed);
  kv["epsilon"] = fmt(epsilon);
  kv["exact_env"] = exact_env ? "1" : "0";
  kv["attack_episodes"] = std::to_string(attack_episodes);
  kv["epochs"] = std::to_string(train.epochs);
  kv["init_env_episodes"] = std::to_string(train.init_env_episodes);
  kv["env_episodes"] = std::to_string(train.env_episodes);
  kv["env_horizon"] = std::to_string(train.env_horizon);
  kv["model_rollouts"] = std::to_string(train.model_rollouts);
  kv["model_horizon"] = std::to_string(train.model_horizon);
  kv["grad_steps"] = std::to_string(train.grad_steps);
  kv["t_train"] = std::to_string(train.t_train);
  kv["normal_batch"] = std::to_string(train.normal_batch);
  kv["eval_episodes"] = std::to_string(train.eval_episodes);
  kv["train_delta"] = fmt(train.delta);
  kv["lambda0"] = fmt(train.lambda0);
  kv["alpha"] = fmt(train.alpha);
  kv["alpha_dual"] = fmt(train.alpha_dual);
  kv["policy_hidden"] = list_str(train.policy_hidden);
  kv["policy_init_sigma"] = fmt(train.policy_init_sigma);
  kv["model_hidden"] = list_str(train.model_hidden);
  kv["model_fit_epochs"] = std::to_string(train.model_fit_epochs);
  kv["model_batch"] = std::to_string(train.model_batch);
  kv["model_lr"] = fmt(train.model_lr);
  kv["model_init_sigma"] = fmt(train.model_init_sigma);
  kv["delta_e"] = fmt(train.delta_e);
  kv["eps_target"] = fmt(train.schedule.eps_target);
  kv["eps_end_step"] = std::to_string(train.schedule.end_step);
  kv["eps_final_step"] = std::to_string(train.schedule.final_step);
  kv["eps_temperature"] = fmt(train.schedule.temperature);
  kv["samples"] = std::to_string(cert.num_samples);
  kv["horizon"] = std::to_string(cert.horizon);
  kv["cert_delta"] = fmt(cert.delta);
  kv["attack_kind"] = to_string(attack.kind);
  kv["attack_steps"] = std::to_string(attack.steps);
  kv["attack_step_size"] = fmt(attack.step_size);
  return kv;
}

std::string RunConfig::to_file_text() const {
  std::string out;
  for (const auto& [key, value] : to_key_values())
    out += key + " = " + value + "\n";
  return out;
}

void RunConfig::validate() const {
  const std::vector<std::string> names = env_names();
  if (std::find(names.begin(), names.end(), env_name) == names.end())
    throw std::invalid_argument("config: unknown env " + env_name);
  if (!std::isfinite(epsilon) || epsilon < 0.0)
    throw std::invalid_argument("config: epsilon must be finite and >= 0");
  if (attack_episodes < 1)
    throw std::invalid_argument("config: attack_episodes must be >= 1");
  train.validate();
  cert.validate();
  attack.validate();
}

int env_thread_count() {
  const char* raw = std::getenv("CERTRL_THREADS");
  if (!raw || !*raw) return 1;
  const int n = to_int("CERTRL_THREADS", raw);
  if (n < 1)
    throw std::invalid_argument("CERTRL_THREADS must be >= 1");
  return n;
}

}  // namespace certrl
