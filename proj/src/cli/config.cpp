#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "fedrane/cli.hpp"

namespace fedrane::cli {

using federation::RunConfig;

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

template <typename T>
T parse_unsigned(std::string_view v) {
  T out{};
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || ec != std::errc() || ptr != v.data() + v.size())
    throw std::invalid_argument("expected a non-negative integer, got '" + std::string(v) + "'");
  return out;
}

double parse_real(std::string_view v) {
  double out = 0.0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || ec != std::errc() || ptr != v.data() + v.size() || !std::isfinite(out))
    throw std::invalid_argument("expected a finite number, got '" + std::string(v) + "'");
  return out;
}

bool parse_bool(std::string_view v) {
  if (v == "true") return true;
  if (v == "false") return false;
  throw std::invalid_argument("expected true or false, got '" + std::string(v) + "'");
}

std::vector<std::size_t> parse_widths(std::string_view v) {
  std::vector<std::size_t> out;
  if (v.empty()) return out;
  std::size_t start = 0;
  while (true) {
    const auto comma = v.find(',', start);
    out.push_back(parse_unsigned<std::size_t>(trim(v.substr(start, comma - start))));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

std::string real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string widths(const std::vector<std::size_t>& w) {
  std::string out;
  for (std::size_t i = 0; i < w.size(); ++i) out += (i ? "," : "") + std::to_string(w[i]);
  return out;
}

struct Field {
  const char* section;
  const char* key;
  std::function<void(RunConfig&, std::string_view)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define FEDRANE_SIZE(sec, name, member)                                                              \
  Field {                                                                                            \
    sec, name, [](RunConfig& c, std::string_view v) { c.member = parse_unsigned<std::size_t>(v); }, \
        [](const RunConfig& c) { return std::to_string(c.member); }                                 \
  }
#define FEDRANE_REAL(sec, name, member)                                            \
  Field {                                                                          \
    sec, name, [](RunConfig& c, std::string_view v) { c.member = parse_real(v); }, \
        [](const RunConfig& c) { return real(c.member); }                          \
  }
#define FEDRANE_BOOL(sec, name, member)                                            \
  Field {                                                                          \
    sec, name, [](RunConfig& c, std::string_view v) { c.member = parse_bool(v); }, \
        [](const RunConfig& c) { return std::string(c.member ? "true" : "false"); } \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      FEDRANE_SIZE("federation", "clients", k),
      FEDRANE_SIZE("federation", "rounds", rounds),
      FEDRANE_SIZE("federation", "local_epochs", local_epochs),
      FEDRANE_SIZE("federation", "batch_size", batch_size),
      FEDRANE_REAL("federation", "lr", lr),
      FEDRANE_REAL("federation", "lambda_cd", lambda_cd),
      FEDRANE_REAL("federation", "alpha", alpha),
      Field{"federation", "seed", [](RunConfig& c, std::string_view v) { c.seed = parse_unsigned<std::uint64_t>(v); },
            [](const RunConfig& c) { return std::to_string(c.seed); }},
      Field{"federation", "aggregator",
            [](RunConfig& c, std::string_view v) { c.aggregator = federation::parse_aggregator(v); },
            [](const RunConfig& c) { return std::string(federation::to_string(c.aggregator)); }},
      FEDRANE_REAL("federation", "holdout", holdout),
      FEDRANE_REAL("federation", "train_ratio", train_ratio),
      FEDRANE_SIZE("federation", "min_client_samples", min_client_samples),
      FEDRANE_BOOL("lra", "enabled", lra_enabled),
      FEDRANE_REAL("lra", "lambda_r", lambda_r),
      FEDRANE_REAL("lra", "tau1", tau1),
      FEDRANE_SIZE("lra", "mp_steps", mp_steps),
      FEDRANE_BOOL("lra", "attention_softmax", attention_softmax),
      Field{"model", "extractor_hidden", [](RunConfig& c, std::string_view v) { c.extractor_hidden = parse_widths(v); },
            [](const RunConfig& c) { return widths(c.extractor_hidden); }},
      FEDRANE_SIZE("model", "embedding_dim", embedding_dim),
      Field{"model", "predictor_hidden", [](RunConfig& c, std::string_view v) { c.predictor_hidden = parse_widths(v); },
            [](const RunConfig& c) { return widths(c.predictor_hidden); }},
      Field{"data", "csv", [](RunConfig& c, std::string_view v) { c.dataset.csv_path = std::string(v); },
            [](const RunConfig& c) { return c.dataset.csv_path; }},
      Field{"data", "classes",
            [](RunConfig& c, std::string_view v) { c.dataset.classes = parse_unsigned<int>(v); },
            [](const RunConfig& c) { return std::to_string(c.dataset.classes); }},
      FEDRANE_SIZE("data", "dim", dataset.dim),
      FEDRANE_SIZE("data", "per_class", dataset.per_class),
      FEDRANE_REAL("data", "spread", dataset.spread),
      FEDRANE_SIZE("nash", "max_outer", nash_max_outer),
      FEDRANE_SIZE("nash", "max_inner", nash_max_inner),
      FEDRANE_REAL("nash", "tol", nash_tol),
      Field{"nash", "radius", [](RunConfig& c, std::string_view v) { c.radius = parse_real(v); },
            [](const RunConfig& c) { return c.radius ? real(*c.radius) : std::string(); }},
      FEDRANE_BOOL("output", "dump_graphs", dump_graphs),
  };
  return table;
}

#undef FEDRANE_SIZE
#undef FEDRANE_REAL
#undef FEDRANE_BOOL

}  // namespace

RunConfig parse_config(std::string_view text, RunConfig base) {
  std::string section;
  std::set<std::string> seen;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    const std::string_view line = trim(text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos));
    ++line_no;
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    if (line.empty() || line.front() == '#' || line.front() == ';') continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(line_no, "unterminated section header");
      section = std::string(trim(line.substr(1, line.size() - 2)));
      const bool known = std::any_of(fields().begin(), fields().end(),
                                     [&](const Field& f) { return section == f.section; });
      if (!known) throw ConfigError(line_no, "unknown section [" + section + "]");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ConfigError(line_no, "expected key = value");
    const std::string key(trim(line.substr(0, eq)));
    std::string_view value = trim(line.substr(eq + 1));
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
    if (section.empty()) throw ConfigError(line_no, "key '" + key + "' appears before any [section]");
    const auto it = std::find_if(fields().begin(), fields().end(),
                                 [&](const Field& f) { return section == f.section && key == f.key; });
    if (it == fields().end()) throw ConfigError(line_no, "unknown key '" + key + "' in [" + section + "]");
    if (!seen.insert(section + "." + key).second)
      throw ConfigError(line_no, "duplicate key '" + key + "' in [" + section + "]");
    try {
      it->set(base, value);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(line_no, key + ": " + e.what());
    } catch (const std::out_of_range&) {
      throw ConfigError(line_no, key + ": value out of range");
    }
  }
  return base;
}

RunConfig load_config(const std::filesystem::path& path, RunConfig base) {
  std::ifstream in(path);
  if (!in) throw ConfigError(0, "cannot read config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), std::move(base));
}

std::string config_snapshot(const RunConfig& config) {
  std::string out;
  std::string section;
  for (const Field& f : fields()) {
    if (section != f.section) {
      if (!section.empty()) out += "\n";
      section = f.section;
      out += "[" + section + "]\n";
    }
    const std::string v = f.get(config);
    if (v.empty() && std::string_view(f.key) == "radius") continue;
    out += std::string(f.key) + " = " + v + "\n";
  }
  return out;
}

RunConfig resolve_config(const std::optional<std::filesystem::path>& config_path, const Overrides& overrides,
                         const std::optional<std::string>& env_seed) {
  RunConfig config;
  if (env_seed) {
    try {
      config.seed = parse_unsigned<std::uint64_t>(trim(*env_seed));
    } catch (const std::invalid_argument& e) {
      throw ConfigError(0, std::string("FEDRANE_SEED: ") + e.what());
    }
  }
  if (config_path) config = load_config(*config_path, config);
  if (overrides.seed) config.seed = *overrides.seed;
  if (overrides.aggregator) {
    try {
      config.aggregator = federation::parse_aggregator(*overrides.aggregator);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(0, std::string("--aggregator: ") + e.what());
    }
  }
  if (overrides.no_lra) config.lra_enabled = false;
  if (overrides.attention_softmax) config.attention_softmax = true;
  if (overrides.alpha) config.alpha = *overrides.alpha;
  if (overrides.clients) config.k = *overrides.clients;
  if (overrides.rounds) config.rounds = *overrides.rounds;
  if (overrides.epochs) config.local_epochs = *overrides.epochs;
  if (overrides.dump_graphs) config.dump_graphs = true;
  try {
    config.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(0, e.what());
  }
  return config;
}

}  // namespace fedrane::cli
