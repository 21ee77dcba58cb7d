#pragma once

#include <cstdint>
#include <string>

#include "p2pgrid/harness.hpp"

namespace p2pgrid {

/// Everything the command-line verbs read from a JSON config. See README for
/// the schema. Missing keys keep their defaults.
struct HarnessConfig {
  std::uint64_t seed = 1;
  bool parallel = true;
  NegotiationConfig negotiation;
  ProfileSource profiles;
  ScenarioRecipe scenario;
  GammaSweepConfig sweep;
  MultiAgentConfig experiment;

  /// Copies the shared seed, negotiation settings, profile source and
  /// parallel flag into the per-verb sections.
  void propagate();
};

/// Throws DomainError naming the offending key for unknown keys, wrong types
/// and invalid values.
HarnessConfig parse_config(const std::string& json_text);

/// Throws IoError when the file cannot be read.
HarnessConfig load_config(const std::string& path);

}  // namespace p2pgrid
