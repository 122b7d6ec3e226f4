#ifndef FEDRANE_CLI_HPP_
#define FEDRANE_CLI_HPP_

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

#include "fedrane/federation.hpp"

namespace fedrane::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

/// Bad configuration text; `line` is 1-based, 0 when no line applies.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::size_t line, const std::string& what)
      : std::runtime_error(line > 0 ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

/// Applies `[section]` / `key = value` text on top of `base`. Blank lines and
/// lines starting with '#' or ';' are ignored. Unknown sections or keys,
/// repeated keys and unparsable values raise ConfigError.
federation::RunConfig parse_config(std::string_view text, federation::RunConfig base = {});
federation::RunConfig load_config(const std::filesystem::path& path, federation::RunConfig base = {});

/// Every key in the same format; parse_config(snapshot(c)) reproduces c.
std::string config_snapshot(const federation::RunConfig& config);

/// Command-line values that take precedence over the config file.
struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> aggregator;
  bool no_lra = false;
  bool attention_softmax = false;
  std::optional<double> alpha;
  std::optional<std::size_t> clients;
  std::optional<std::size_t> rounds;
  std::optional<std::size_t> epochs;
  bool dump_graphs = false;
};

/// defaults < env_seed < config file < overrides.
federation::RunConfig resolve_config(const std::optional<std::filesystem::path>& config_path,
                                     const Overrides& overrides, const std::optional<std::string>& env_seed);

struct RunOptions {
  std::optional<std::filesystem::path> config;
  std::filesystem::path out;
  bool force = false;
  Overrides overrides;
  std::optional<std::string> env_seed;
};

int cmd_run(const RunOptions& options, std::ostream& out, std::ostream& err);
int cmd_solve_nash(const std::filesystem::path& input, std::ostream& out, std::ostream& err);
int cmd_partition(const RunOptions& options, std::ostream& out, std::ostream& err);
int cmd_report(const std::filesystem::path& run_dir, bool force, std::ostream& out, std::ostream& err);

/// Full command line, argv[0] included. Reads FEDRANE_SEED from the environment.
int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace fedrane::cli

#endif  // FEDRANE_CLI_HPP_
