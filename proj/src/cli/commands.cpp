#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "fedrane/cli.hpp"
#include "fedrane/rng.hpp"

namespace fedrane::cli {

namespace fs = std::filesystem;
using federation::RunConfig;

namespace {

class OutputExists : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using OutputFile = std::pair<std::string, std::string>;

void refuse_overwrite(const fs::path& dir, const std::vector<std::string>& names, bool force) {
  if (force) return;
  for (const std::string& n : names)
    if (fs::exists(dir / n))
      throw OutputExists((dir / n).string() + " already exists; pass --force to overwrite");
}

// Everything goes to temporary names first, so a failure leaves earlier
// outputs untouched.
void write_outputs(const fs::path& dir, const std::vector<OutputFile>& files, bool force) {
  std::vector<std::string> names;
  for (const auto& f : files) names.push_back(f.first);
  refuse_overwrite(dir, names, force);
  fs::create_directories(dir);
  for (const auto& [name, content] : files) {
    std::ofstream out(dir / (name + ".tmp"), std::ios::binary);
    out << content;
    if (!out) throw std::runtime_error("cannot write " + (dir / name).string());
  }
  for (const auto& f : files) fs::rename(dir / (f.first + ".tmp"), dir / f.first);
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string fixed4(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

template <typename Fn>
int guarded(std::ostream& err, Fn&& fn) {
  try {
    return fn();
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
}

}  // namespace

int cmd_run(const RunOptions& options, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const RunConfig config = resolve_config(options.config, options.overrides, options.env_seed);
    std::vector<std::string> names = {"metrics.csv", "metrics.json", "config.ini", "model.json"};
    if (config.dump_graphs) names.push_back("graphs.jsonl");
    refuse_overwrite(options.out, names, options.force);

    const federation::RunResult result = federation::run(config);
    std::ostringstream csv;
    federation::write_metrics_csv(csv, result.rounds);
    std::vector<OutputFile> files = {
        {"metrics.csv", csv.str()},
        {"metrics.json", federation::metrics_to_json(config, result.rounds)},
        {"config.ini", config_snapshot(config)},
        {"model.json", model::flat_params_to_json(result.final_params)},
    };
    if (config.dump_graphs) {
      std::ostringstream g;
      federation::write_graphs_jsonl(g, result.graphs);
      files.emplace_back("graphs.jsonl", g.str());
    }
    write_outputs(options.out, files, options.force);
    const federation::RoundMetrics& last = result.rounds.back();
    out << "rounds " << config.rounds << "  final gfl " << fixed4(last.gfl_accuracy) << "  pfl "
        << fixed4(last.pfl_accuracy) << "  -> " << options.out.string() << '\n';
    return kExitOk;
  });
}

int cmd_solve_nash(const fs::path& input, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    nlohmann::json doc;
    std::size_t d = 0;
    std::size_t k = 0;
    std::vector<double> values;
    const std::string text = read_file(input);
    try {
      doc = nlohmann::json::parse(text);
      d = doc.at("d").get<std::size_t>();
      k = doc.at("k").get<std::size_t>();
      values = doc.at("g").get<std::vector<double>>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(0, input.string() + ": " + e.what());
    }
    if (d == 0 || k == 0) throw ConfigError(0, input.string() + ": d and k must be positive");
    if (values.size() != d * k)
      throw ConfigError(0, input.string() + ": g has " + std::to_string(values.size()) + " values, expected d*k = " +
                               std::to_string(d * k));
    const Matrix g(d, k, std::move(values));
    const gne::BargainWeights w = gne::nash_solve(g);
    nlohmann::json result;
    result["p"] = w.p;
    result["residual"] = w.residual;
    result["converged"] = w.converged;
    result["utilities"] = gne::utilities(g, matvec(g, w.p));
    result["iterations"] = w.iterations;
    out << result.dump(2) << '\n';
    return kExitOk;
  });
}

int cmd_partition(const RunOptions& options, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const RunConfig config = resolve_config(options.config, options.overrides, options.env_seed);
    refuse_overwrite(options.out, {"partitions.json", "histogram.csv", "config.ini"}, options.force);
    const data::Dataset ds = federation::load_dataset(config);
    data::PartitionSet set{config.k, config.alpha, config.seed, {}};
    set.clients = data::dirichlet_partition(ds, config.k, config.alpha, config.seed, config.min_client_samples);
    for (auto& p : set.clients) p = data::split_local(p, derive_seed(config.seed, {p.client_id}), config.train_ratio);

    std::ostringstream hist;
    hist << "client";
    for (int c = 0; c < ds.num_classes(); ++c) hist << ",class_" << c;
    hist << ",total,entropy\n";
    for (const auto& p : set.clients) {
      const std::vector<std::size_t> h = data::label_histogram(ds, p.indices);
      hist << p.client_id;
      for (std::size_t v : h) hist << ',' << v;
      char e[32];
      std::snprintf(e, sizeof e, "%.10g", data::label_entropy(h));
      hist << ',' << p.indices.size() << ',' << e << '\n';
    }
    write_outputs(options.out,
                  {{"partitions.json", data::partitions_to_json(set)},
                   {"histogram.csv", hist.str()},
                   {"config.ini", config_snapshot(config)}},
                  options.force);
    out << config.k << " clients over " << ds.size() << " samples -> " << options.out.string() << '\n';
    return kExitOk;
  });
}

int cmd_report(const fs::path& run_dir, bool force, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    if (!fs::is_directory(run_dir)) throw std::runtime_error(run_dir.string() + " is not a directory");
    std::vector<fs::path> runs;
    if (fs::exists(run_dir / "metrics.json")) runs.push_back(run_dir);
    std::vector<fs::path> subdirs;
    for (const auto& entry : fs::directory_iterator(run_dir))
      if (entry.is_directory() && fs::exists(entry.path() / "metrics.json")) subdirs.push_back(entry.path());
    std::sort(subdirs.begin(), subdirs.end());
    runs.insert(runs.end(), subdirs.begin(), subdirs.end());
    if (runs.empty()) throw std::runtime_error("no metrics.json under " + run_dir.string());

    struct Row {
      std::string name;
      std::string variant;
      double final_gfl, best_gfl, final_pfl, best_pfl;
    };
    std::vector<Row> rows;
    std::vector<std::pair<fs::path, std::string>> grids;
    for (const fs::path& dir : runs) {
      nlohmann::json doc;
      try {
        doc = nlohmann::json::parse(read_file(dir / "metrics.json"));
      } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error((dir / "metrics.json").string() + ": " + e.what());
      }
      const auto& rounds = doc.at("rounds");
      if (rounds.empty()) throw std::runtime_error((dir / "metrics.json").string() + ": no rounds");
      Row r{dir == run_dir ? std::string(".") : dir.filename().string(), doc.at("variant").get<std::string>(), 0, 0,
            0, 0};
      r.best_gfl = r.best_pfl = -1.0;
      std::ostringstream grid;
      const std::size_t k = doc.at("k").get<std::size_t>();
      for (std::size_t c = 0; c < k; ++c) grid << (c ? "," : "") << "client_" << c;
      grid << '\n';
      for (const auto& m : rounds) {
        r.best_gfl = std::max(r.best_gfl, m.at("gfl").get<double>());
        r.best_pfl = std::max(r.best_pfl, m.at("pfl").get<double>());
        const auto cos = m.at("cosine").get<std::vector<double>>();
        if (cos.size() != k) throw std::runtime_error((dir / "metrics.json").string() + ": cosine width mismatch");
        for (std::size_t c = 0; c < k; ++c) {
          char buf[32];
          std::snprintf(buf, sizeof buf, "%.10g", cos[c]);
          grid << (c ? "," : "") << buf;
        }
        grid << '\n';
      }
      r.final_gfl = rounds.back().at("gfl").get<double>();
      r.final_pfl = rounds.back().at("pfl").get<double>();
      rows.push_back(std::move(r));
      grids.emplace_back(dir, grid.str());
    }
    for (const auto& [dir, _] : grids) refuse_overwrite(dir, {"cosine_grid.csv"}, force);
    for (const auto& [dir, grid] : grids) write_outputs(dir, {{"cosine_grid.csv", grid}}, true);

    std::stable_sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) { return a.final_gfl > b.final_gfl; });
    out << std::left << std::setw(24) << "run" << std::setw(14) << "variant" << std::right << std::setw(10)
        << "final_gfl" << std::setw(10) << "best_gfl" << std::setw(10) << "final_pfl" << std::setw(10) << "best_pfl"
        << '\n';
    for (const Row& r : rows)
      out << std::left << std::setw(24) << r.name << std::setw(14) << r.variant << std::right << std::setw(10)
          << fixed4(r.final_gfl) << std::setw(10) << fixed4(r.best_gfl) << std::setw(10) << fixed4(r.final_pfl)
          << std::setw(10) << fixed4(r.best_pfl) << '\n';
    return kExitOk;
  });
}

int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"FedRANE federated learning simulator"};
  app.require_subcommand(1);

  RunOptions run_opts;
  std::string config_path;
  std::string out_dir;
  std::uint64_t seed = 0;
  std::string aggregator;
  double alpha = 0.0;
  std::size_t clients = 0;
  std::size_t rounds = 0;
  std::size_t epochs = 0;

  const auto add_run_flags = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "configuration file")->check(CLI::ExistingFile);
    sub->add_option("--out", out_dir, "output directory")->required();
    sub->add_option("--seed", seed, "master seed");
    sub->add_option("--aggregator", aggregator, "gne or fedavg")->check(CLI::IsMember({"gne", "fedavg"}));
    sub->add_flag("--no-lra", run_opts.overrides.no_lra, "disable relational augmentation");
    sub->add_flag("--attention-softmax", run_opts.overrides.attention_softmax, "row-softmax attention weights");
    sub->add_option("--alpha", alpha, "Dirichlet concentration");
    sub->add_option("--clients", clients, "number of clients");
    sub->add_option("--rounds", rounds, "communication rounds");
    sub->add_option("--epochs", epochs, "local epochs");
    sub->add_flag("--force", run_opts.force, "overwrite existing outputs");
    sub->add_flag("--dump-graphs", run_opts.overrides.dump_graphs, "write mined batch graphs");
  };
  CLI::App* run_cmd = app.add_subcommand("run", "run a federated experiment");
  add_run_flags(run_cmd);
  CLI::App* part_cmd = app.add_subcommand("partition", "write a Dirichlet client partition");
  add_run_flags(part_cmd);

  std::string nash_input;
  CLI::App* nash_cmd = app.add_subcommand("solve-nash", "solve G^T G p = 1/p for a JSON instance");
  nash_cmd->add_option("input", nash_input, "JSON file {g, d, k}")->required();

  std::string report_dir;
  bool report_force = false;
  CLI::App* report_cmd = app.add_subcommand("report", "summarize run directories");
  report_cmd->add_option("run_dir", report_dir, "run directory")->required();
  report_cmd->add_flag("--force", report_force, "overwrite cosine_grid.csv");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  const auto finish_run_opts = [&](CLI::App* sub) {
    if (!config_path.empty()) run_opts.config = config_path;
    run_opts.out = out_dir;
    if (sub->count("--seed")) run_opts.overrides.seed = seed;
    if (sub->count("--aggregator")) run_opts.overrides.aggregator = aggregator;
    if (sub->count("--alpha")) run_opts.overrides.alpha = alpha;
    if (sub->count("--clients")) run_opts.overrides.clients = clients;
    if (sub->count("--rounds")) run_opts.overrides.rounds = rounds;
    if (sub->count("--epochs")) run_opts.overrides.epochs = epochs;
    if (const char* env = std::getenv("FEDRANE_SEED")) run_opts.env_seed = std::string(env);
  };
  if (*run_cmd) {
    finish_run_opts(run_cmd);
    return cmd_run(run_opts, out, err);
  }
  if (*part_cmd) {
    finish_run_opts(part_cmd);
    return cmd_partition(run_opts, out, err);
  }
  if (*nash_cmd) return cmd_solve_nash(nash_input, out, err);
  return cmd_report(report_dir, report_force, out, err);
}

}  // namespace fedrane::cli
