#ifndef FEDRANE_FEDERATION_HPP_
#define FEDRANE_FEDERATION_HPP_

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "fedrane/data.hpp"
#include "fedrane/gne.hpp"
#include "fedrane/lra.hpp"
#include "fedrane/model.hpp"

namespace fedrane::federation {

enum class Aggregator { kGne, kFedAvg };

std::string_view to_string(Aggregator a);
/// "gne" or "fedavg"; throws std::invalid_argument otherwise.
Aggregator parse_aggregator(std::string_view text);

/// Where the master dataset comes from. An empty csv_path means the Gaussian
/// mixture generator.
struct DatasetSpec {
  std::string csv_path;
  int classes = 4;
  std::size_t dim = 8;
  std::size_t per_class = 250;
  double spread = 0.5;
};

struct RunConfig {
  std::size_t k = 20;
  std::size_t rounds = 20;
  std::size_t local_epochs = 5;
  std::size_t batch_size = 128;
  double lr = 0.5;
  double lambda_r = 0.1;
  double lambda_cd = 0.2;
  double tau1 = 0.8;
  std::size_t mp_steps = 2;
  double alpha = 0.5;
  std::uint64_t seed = 0;
  Aggregator aggregator = Aggregator::kGne;
  bool lra_enabled = true;
  bool attention_softmax = false;
  DatasetSpec dataset;
  std::vector<std::size_t> extractor_hidden{64, 64};
  std::size_t embedding_dim = 64;
  std::vector<std::size_t> predictor_hidden{64};
  /// Fraction of every class held out as the global test pool.
  double holdout = 0.1;
  double train_ratio = 0.75;
  /// Clients hold at least this many samples after partitioning.
  std::size_t min_client_samples = 4;
  std::size_t nash_max_outer = 20;
  std::size_t nash_max_inner = 200;
  double nash_tol = 1e-6;
  /// Kept for the record only; the solver does not read it.
  std::optional<double> radius;
  bool dump_graphs = false;

  /// Throws std::invalid_argument naming the first bad field.
  void validate() const;
  lra::LraOptions lra_options() const;
  model::Architecture architecture(std::size_t input_dim, std::size_t classes) const;
};

struct RoundMetrics {
  std::size_t round = 0;
  double gfl_accuracy = 0.0;
  double pfl_accuracy = 0.0;
  std::vector<double> per_client_accuracy;
  std::vector<double> per_client_loss;
  std::vector<double> cosine;
  std::vector<double> p;
  /// -1 when no bargain was solved (FedAvg, round 0).
  double bargain_residual = -1.0;
  bool converged = true;

  double min_cosine() const;
  double mean_cosine() const;
};

struct GraphRecord {
  std::size_t round = 0;
  std::size_t client = 0;
  std::size_t epoch = 0;
  lra::GraphDump graph;
};

struct ClientUpdate {
  model::FlatParams params;
  /// Mean training loss of each epoch.
  std::vector<double> epoch_loss;
  std::size_t batches = 0;
};

/// Local training of one client for one round. Batch order is drawn from a
/// stream keyed on (seed, client, round, epoch). When `graphs` is given, the
/// first batch of every epoch records its mined graph.
ClientUpdate client_execute(std::size_t client_id, std::size_t round, const model::FlatParams& theta_global,
                            const RunConfig& config, const data::Partition& partition,
                            const data::Dataset& dataset, std::vector<GraphRecord>* graphs = nullptr);

/// Training objective of `params` on one batch, forward pass only.
double batch_loss(const model::MLPParams& params, const data::Batch& batch, const RunConfig& config);

/// Class predictions for a batch; with LRA enabled the predictor sees the
/// augmented embeddings of that batch.
std::vector<int> predict_labels(const model::MLPParams& params, const Matrix& x, const RunConfig& config);

/// Accuracy over `indices`, evaluated in chunks of batch_size in the given
/// order. A trailing chunk of one sample is folded into the previous chunk.
double evaluate_accuracy(const model::MLPParams& params, const data::Dataset& ds,
                         std::span<const std::size_t> indices, const RunConfig& config);

/// Sample-weighted mean of batch_loss over the same chunks.
double evaluate_loss(const model::MLPParams& params, const data::Dataset& ds, std::span<const std::size_t> indices,
                     const RunConfig& config);

struct ServerResult {
  model::FlatParams theta;
  gne::DeviationMatrix deviations;
  gne::BargainWeights weights;
  /// Bargain residual, -1 for FedAvg.
  double residual = -1.0;
};

ServerResult server_execute(const model::FlatParams& theta, std::span<const model::FlatParams> client_params,
                            std::span<const std::size_t> counts, const RunConfig& config);

/// cos(delta, column_k) for every column; zero columns give 0.
Vector cosine_diagnostic(const gne::DeviationMatrix& g, std::span<const double> delta);

struct RunResult {
  std::vector<RoundMetrics> rounds;
  std::vector<GraphRecord> graphs;
  model::FlatParams final_params;
};

/// Federated training: round 0 reports the initialized model, rounds 1..T
/// train every client then aggregate. Deterministic in the config.
RunResult run(const RunConfig& config);

/// The master dataset named by the config (generated or loaded).
data::Dataset load_dataset(const RunConfig& config);

// Output formats.
void write_metrics_csv(std::ostream& out, std::span<const RoundMetrics> rounds);
std::string metrics_to_json(const RunConfig& config, std::span<const RoundMetrics> rounds);
void write_graphs_jsonl(std::ostream& out, std::span<const GraphRecord> graphs);

}  // namespace fedrane::federation

#endif  // FEDRANE_FEDERATION_HPP_
