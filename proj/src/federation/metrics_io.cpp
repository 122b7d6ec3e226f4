#include <cstdio>
#include <ostream>

#include <json.hpp>

#include "fedrane/federation.hpp"

namespace fedrane::federation {

namespace {

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

nlohmann::json matrix_json(const Matrix& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t i = 0; i < m.rows(); ++i) {
    const auto r = m.row(i);
    rows.push_back(std::vector<double>(r.begin(), r.end()));
  }
  return rows;
}

}  // namespace

void write_metrics_csv(std::ostream& out, std::span<const RoundMetrics> rounds) {
  out << "round,gfl,pfl,residual,converged,min_cosine,mean_cosine\n";
  for (const RoundMetrics& m : rounds) {
    out << m.round << ',' << num(m.gfl_accuracy) << ',' << num(m.pfl_accuracy) << ',' << num(m.bargain_residual)
        << ',' << (m.converged ? 1 : 0) << ',' << num(m.min_cosine()) << ',' << num(m.mean_cosine()) << '\n';
  }
}

std::string metrics_to_json(const RunConfig& config, std::span<const RoundMetrics> rounds) {
  nlohmann::json doc;
  std::string variant(to_string(config.aggregator));
  if (config.lra_enabled) variant += "+lra";
  doc["variant"] = variant;
  doc["aggregator"] = std::string(to_string(config.aggregator));
  doc["lra_enabled"] = config.lra_enabled;
  doc["seed"] = config.seed;
  doc["k"] = config.k;
  doc["rounds"] = nlohmann::json::array();
  for (const RoundMetrics& m : rounds) {
    nlohmann::json r;
    r["round"] = m.round;
    r["gfl"] = m.gfl_accuracy;
    r["pfl"] = m.pfl_accuracy;
    r["per_client_accuracy"] = m.per_client_accuracy;
    r["per_client_loss"] = m.per_client_loss;
    r["cosine"] = m.cosine;
    r["p"] = m.p;
    r["residual"] = m.bargain_residual;
    r["converged"] = m.converged;
    doc["rounds"].push_back(std::move(r));
  }
  return doc.dump(2) + "\n";
}

void write_graphs_jsonl(std::ostream& out, std::span<const GraphRecord> graphs) {
  for (const GraphRecord& g : graphs) {
    nlohmann::json line;
    line["round"] = g.round;
    line["client"] = g.client;
    line["epoch"] = g.epoch;
    line["slim_iterations"] = g.graph.slim_iterations;
    line["slim_converged"] = g.graph.slim_converged;
    line["edges"] = g.graph.edges;
    line["cd_loss"] = g.graph.cd_loss;
    line["adjacency_eigenvalues"] = g.graph.adjacency_eigenvalues;
    line["correlation"] = matrix_json(g.graph.correlation);
    line["b"] = matrix_json(g.graph.b);
    out << line.dump() << '\n';
  }
}

}  // namespace fedrane::federation
