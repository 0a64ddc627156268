#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace psfed {

// Invalid configurations are rejected before any work starts; every problem
// found is listed.
struct ConfigError : std::invalid_argument {
  std::vector<std::string> details;
  explicit ConfigError(std::vector<std::string> problems)
      : std::invalid_argument(join(problems)), details(std::move(problems)) {}

 private:
  static std::string join(const std::vector<std::string>& v) {
    std::string out = "invalid configuration";
    for (const auto& s : v) out += "\n  - " + s;
    return out;
  }
};

// Config-driven drivers behind the CLI subcommands. Each takes a JSON
// config, writes its artifacts under the config's "out" directory, and
// returns a JSON summary of what was produced.
nlohmann::json cmd_gen_data(const nlohmann::json& config);
nlohmann::json cmd_train(const nlohmann::json& config);
nlohmann::json cmd_eval(const nlohmann::json& config);
nlohmann::json cmd_ablate(const nlohmann::json& config);
nlohmann::json cmd_report(const nlohmann::json& config);

const char* version_string();

}  // namespace psfed
