#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "certrl/attack.hpp"
#include "certrl/certifier.hpp"
#include "certrl/trainer.hpp"

namespace certrl {

// Flat "key = value" configuration text: one pair per line, '#' starts a
// comment, blank lines are skipped, duplicate keys are rejected.
std::map<std::string, std::string> parse_key_values(const std::string& text);
std::map<std::string, std::string> read_key_values(const std::string& path);

// Everything one experiment run needs. File keys match to_key_values();
// unknown keys are an error so typos fail loudly. Command-line flags
// override individual fields after loading, so validate() runs at the point
// of use, not inside from_file().
struct RunConfig {
  std::string env_name = "pointmass1";
  std::uint64_t seed = 0;
  // Observation perturbation budget shared by certification and attacks.
  double epsilon = 0.1;
  // Certify against the environment's own dynamics instead of a checkpoint.
  bool exact_env = false;
  int attack_episodes = 100;

  TrainConfig train;
  CertConfig cert;
  AttackConfig attack;

  static RunConfig from_key_values(
      const std::map<std::string, std::string>& kv);
  static RunConfig from_file(const std::string& path);

  std::map<std::string, std::string> to_key_values() const;
  std::string to_file_text() const;

  void validate() const;
};

// CERTRL_THREADS environment variable; unset or empty means 1.
int env_thread_count();

}  // namespace certrl
