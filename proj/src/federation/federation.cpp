#include "fedrane/federation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fedrane/rng.hpp"

namespace fedrane::federation {

namespace {

// Stream tags for derive_seed; every random draw in a run hangs off one of these.
enum Stream : std::uint64_t {
  kDataStream = 1,
  kHoldoutStream = 2,
  kPartitionStream = 3,
  kSplitStream = 4,
  kInitStream = 5,
  kShuffleStream = 6,
  kEvalStream = 7,
};

void require(bool ok, const char* what) {
  if (!ok) throw std::invalid_argument(std::string("run config: ") + what);
}

struct Forward {
  NodeId logits;
  NodeId loss;
};

Forward forward(Tape& tape, const model::ParamNodes& nodes, const data::Batch& batch, const RunConfig& config,
                lra::GraphDump* dump) {
  const NodeId x = tape.constant(batch.x);
  NodeId z_tilde;
  NodeId cd;
  if (config.lra_enabled) {
    const lra::LraNodes l = lra::lra_forward(tape, nodes, x, config.lra_options(), dump);
    z_tilde = l.z_tilde;
    cd = l.cd_loss;
  } else {
    z_tilde = model::feature_extract(tape, nodes, x);
    cd = tape.constant(Matrix(1, 1, 0.0));
  }
  const NodeId logits = model::predict(tape, nodes, z_tilde);
  const NodeId ce = model::cross_entropy(tape, logits, batch.y);
  return {logits, model::total_loss(tape, ce, cd, config.lambda_cd)};
}

std::vector<int> argmax_rows(const Matrix& logits) {
  std::vector<int> out(logits.rows());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    const auto row = logits.row(i);
    out[i] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

data::Dataset subset(const data::Dataset& ds, std::span<const std::size_t> indices) {
  data::Batch b = data::gather(ds, indices);
  return data::Dataset(std::move(b.x), std::move(b.y), ds.num_classes());
}

// Stratified split of the master dataset into (federated pool, held-out pool).
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> holdout_split(const data::Dataset& ds,
                                                                            const RunConfig& config) {
  Rng rng(derive_seed(config.seed, {kHoldoutStream}));
  std::vector<std::size_t> pool;
  std::vector<std::size_t> held;
  for (int c = 0; c < ds.num_classes(); ++c) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < ds.size(); ++i)
      if (ds.labels()[i] == c) members.push_back(i);
    rng.shuffle(std::span<std::size_t>(members));
    std::size_t h = static_cast<std::size_t>(std::lround(config.holdout * static_cast<double>(members.size())));
    h = std::min(std::max<std::size_t>(h, 1), members.size() - 1);
    held.insert(held.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(h));
    pool.insert(pool.end(), members.begin() + static_cast<std::ptrdiff_t>(h), members.end());
  }
  std::sort(pool.begin(), pool.end());
  rng.shuffle(std::span<std::size_t>(held));
  return {pool, held};
}

}  // namespace

std::string_view to_string(Aggregator a) { return a == Aggregator::kGne ? "gne" : "fedavg"; }

Aggregator parse_aggregator(std::string_view text) {
  if (text == "gne") return Aggregator::kGne;
  if (text == "fedavg") return Aggregator::kFedAvg;
  throw std::invalid_argument("aggregator must be gne or fedavg, got '" + std::string(text) + "'");
}

void RunConfig::validate() const {
  require(k >= 1, "k must be at least 1");
  require(batch_size >= 2, "batch_size must be at least 2");
  require(lr > 0.0 && std::isfinite(lr), "lr must be positive");
  require(lambda_r > 0.0, "lambda_r must be positive");
  require(lambda_cd >= 0.0, "lambda_cd must be non-negative");
  require(tau1 > 0.0 && tau1 <= 1.0, "tau1 must lie in (0, 1]");
  require(alpha > 0.0, "alpha must be positive");
  require(holdout > 0.0 && holdout < 1.0, "holdout must lie in (0, 1)");
  require(train_ratio > 0.0 && train_ratio < 1.0, "train_ratio must lie in (0, 1)");
  require(min_client_samples >= 4, "min_client_samples must be at least 4");
  require(embedding_dim >= 2, "embedding_dim must be at least 2");
  require(nash_max_outer >= 1 && nash_max_inner >= 1, "nash budgets must be positive");
  require(nash_tol > 0.0, "nash_tol must be positive");
  if (dataset.csv_path.empty()) {
    require(dataset.classes >= 2, "dataset classes must be at least 2");
    require(dataset.dim >= 2, "dataset dim must be at least 2");
    require(dataset.per_class >= 8, "dataset per_class must be at least 8");
    require(dataset.spread > 0.0, "dataset spread must be positive");
  }
  for (std::size_t w : extractor_hidden) require(w >= 1, "hidden widths must be positive");
  for (std::size_t w : predictor_hidden) require(w >= 1, "hidden widths must be positive");
}

lra::LraOptions RunConfig::lra_options() const {
  lra::LraOptions o;
  o.lambda_r = lambda_r;
  o.tau1 = tau1;
  o.steps = mp_steps;
  o.attention_softmax = attention_softmax;
  return o;
}

model::Architecture RunConfig::architecture(std::size_t input_dim, std::size_t classes) const {
  model::Architecture a;
  a.input_dim = input_dim;
  a.extractor_hidden = extractor_hidden;
  a.embedding_dim = embedding_dim;
  a.predictor_hidden = predictor_hidden;
  a.classes = classes;
  a.mp_steps = mp_steps;
  return a;
}

double RoundMetrics::min_cosine() const {
  if (cosine.empty()) return 0.0;
  return *std::min_element(cosine.begin(), cosine.end());
}

double RoundMetrics::mean_cosine() const {
  if (cosine.empty()) return 0.0;
  return std::accumulate(cosine.begin(), cosine.end(), 0.0) / static_cast<double>(cosine.size());
}

double batch_loss(const model::MLPParams& params, const data::Batch& batch, const RunConfig& config) {
  Tape tape;
  const model::ParamNodes nodes = model::register_params(tape, params);
  return tape.value(forward(tape, nodes, batch, config, nullptr).loss)(0, 0);
}

std::vector<int> predict_labels(const model::MLPParams& params, const Matrix& x, const RunConfig& config) {
  Tape tape;
  const model::ParamNodes nodes = model::register_params(tape, params);
  const NodeId xn = tape.constant(x);
  NodeId z;
  if (config.lra_enabled) {
    z = lra::lra_forward(tape, nodes, xn, config.lra_options()).z_tilde;
  } else {
    z = model::feature_extract(tape, nodes, xn);
  }
  return argmax_rows(tape.value(model::predict(tape, nodes, z)));
}

namespace {

// Consecutive chunks of at most batch_size; a trailing chunk of one sample is
// folded into the previous one.
template <typename Fn>
void for_each_chunk(std::span<const std::size_t> indices, std::size_t batch_size, Fn&& fn) {
  const std::size_t n = indices.size();
  std::size_t start = 0;
  while (start < n) {
    std::size_t end = std::min(n, start + batch_size);
    if (n - end == 1) end = n;
    fn(indices.subspan(start, end - start));
    start = end;
  }
}

}  // namespace

double evaluate_accuracy(const model::MLPParams& params, const data::Dataset& ds,
                         std::span<const std::size_t> indices, const RunConfig& config) {
  if (indices.empty()) throw std::invalid_argument("evaluate_accuracy: no samples");
  std::size_t correct = 0;
  for_each_chunk(indices, config.batch_size, [&](std::span<const std::size_t> chunk) {
    const data::Batch batch = data::gather(ds, chunk);
    const std::vector<int> pred = predict_labels(params, batch.x, config);
    for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == batch.y[i] ? 1 : 0;
  });
  return static_cast<double>(correct) / static_cast<double>(indices.size());
}

double evaluate_loss(const model::MLPParams& params, const data::Dataset& ds, std::span<const std::size_t> indices,
                     const RunConfig& config) {
  if (indices.empty()) throw std::invalid_argument("evaluate_loss: no samples");
  double total = 0.0;
  for_each_chunk(indices, config.batch_size, [&](std::span<const std::size_t> chunk) {
    total += batch_loss(params, data::gather(ds, chunk), config) * static_cast<double>(chunk.size());
  });
  return total / static_cast<double>(indices.size());
}

ClientUpdate client_execute(std::size_t client_id, std::size_t round, const model::FlatParams& theta_global,
                            const RunConfig& config, const data::Partition& partition,
                            const data::Dataset& dataset, std::vector<GraphRecord>* graphs) {
  if (partition.train_indices.empty())
    throw std::invalid_argument("client " + std::to_string(client_id) + ": empty training set");
  ClientUpdate out{theta_global, {}, 0};
  std::vector<std::size_t> order = partition.train_indices;
  const std::size_t n = order.size();
  for (std::size_t epoch = 0; epoch < config.local_epochs; ++epoch) {
    Rng rng(derive_seed(config.seed, {kShuffleStream, client_id, round, epoch}));
    order = partition.train_indices;
    rng.shuffle(std::span<std::size_t>(order));
    double loss_sum = 0.0;
    std::size_t used = 0;
    for (std::size_t start = 0; start < n; start += config.batch_size) {
      const std::size_t end = std::min(n, start + config.batch_size);
      if (end - start < 2) continue;
      const data::Batch batch = data::gather(dataset, std::span(order).subspan(start, end - start));
      Tape tape;
      const model::MLPParams params = model::unflatten(out.params);
      const model::ParamNodes nodes = model::register_params(tape, params);
      const bool record = graphs != nullptr && start == 0 && config.lra_enabled;
      GraphRecord rec{round, client_id, epoch, {}};
      const Forward f = forward(tape, nodes, batch, config, record ? &rec.graph : nullptr);
      const double loss = tape.value(f.loss)(0, 0);
      if (!std::isfinite(loss))
        throw NumericError("client " + std::to_string(client_id) + ": training loss is not finite in round " +
                           std::to_string(round));
      tape.backward();
      out.params = model::sgd_step(out.params, model::flatten(model::collect_gradients(tape, nodes)), config.lr);
      loss_sum += loss;
      ++used;
      if (record) graphs->push_back(std::move(rec));
    }
    out.batches += used;
    out.epoch_loss.push_back(used > 0 ? loss_sum / static_cast<double>(used) : 0.0);
  }
  return out;
}

ServerResult server_execute(const model::FlatParams& theta, std::span<const model::FlatParams> client_params,
                            std::span<const std::size_t> counts, const RunConfig& config) {
  if (counts.size() != client_params.size())
    throw std::invalid_argument("server_execute: " + std::to_string(client_params.size()) + " clients but " +
                                std::to_string(counts.size()) + " sample counts");
  ServerResult out;
  out.deviations = gne::compute_deviations(theta, client_params);
  if (config.aggregator == Aggregator::kGne) {
    gne::NashOptions opts;
    opts.max_outer = config.nash_max_outer;
    opts.max_inner = config.nash_max_inner;
    opts.tol = config.nash_tol;
    out.weights = gne::nash_solve(out.deviations, opts);
    out.residual = out.weights.residual;
  } else {
    out.weights.p = gne::fedavg_weights(counts);
    out.weights.converged = true;
    out.weights.residual = -1.0;
    out.residual = -1.0;
  }
  out.theta = gne::aggregate(theta, out.deviations, out.weights.p);
  return out;
}

Vector cosine_diagnostic(const gne::DeviationMatrix& g, std::span<const double> delta) {
  if (g.g.rows() != delta.size())
    throw ShapeError("cosine_diagnostic: G is " + shape_string(g.g) + ", delta has " +
                     std::to_string(delta.size()) + " entries");
  const double dn = norm2(delta);
  if (dn == 0.0) throw std::invalid_argument("cosine_diagnostic: zero update direction");
  const Vector dots = gne::utilities(g.g, delta);
  Vector out(g.g.cols(), 0.0);
  for (std::size_t k = 0; k < out.size(); ++k) {
    double sq = 0.0;
    for (std::size_t i = 0; i < g.g.rows(); ++i) sq += g.g(i, k) * g.g(i, k);
    if (sq == 0.0) continue;
    out[k] = std::clamp(dots[k] / (std::sqrt(sq) * dn), -1.0, 1.0);
  }
  return out;
}

data::Dataset load_dataset(const RunConfig& config) {
  if (!config.dataset.csv_path.empty()) return data::load_csv(config.dataset.csv_path);
  const DatasetSpec& s = config.dataset;
  return data::generate_synthetic(s.classes, s.dim, s.per_class, s.spread, derive_seed(config.seed, {kDataStream}));
}

RunResult run(const RunConfig& config) {
  config.validate();
  const data::Dataset master = load_dataset(config);
  const auto [pool_idx, held_idx] = holdout_split(master, config);
  const data::Dataset pool = subset(master, pool_idx);
  const data::Dataset held = subset(master, held_idx);
  std::vector<std::size_t> held_order(held.size());
  std::iota(held_order.begin(), held_order.end(), 0);

  std::vector<data::Partition> clients = data::dirichlet_partition(
      pool, config.k, config.alpha, derive_seed(config.seed, {kPartitionStream}), config.min_client_samples);
  std::vector<std::vector<std::size_t>> test_order(config.k);
  std::vector<std::size_t> counts(config.k);
  for (std::size_t c = 0; c < config.k; ++c) {
    clients[c] = data::split_local(clients[c], derive_seed(config.seed, {kSplitStream, c}), config.train_ratio);
    test_order[c] = clients[c].test_indices;
    Rng rng(derive_seed(config.seed, {kEvalStream, c}));
    rng.shuffle(std::span<std::size_t>(test_order[c]));
    counts[c] = clients[c].train_indices.size();
  }

  const model::Architecture arch =
      config.architecture(master.dim(), static_cast<std::size_t>(master.num_classes()));
  model::FlatParams theta = model::flatten(model::init_params(arch, derive_seed(config.seed, {kInitStream})));

  RunResult result;
  {
    RoundMetrics m;
    const model::MLPParams global = model::unflatten(theta);
    m.gfl_accuracy = evaluate_accuracy(global, held, held_order, config);
    for (std::size_t c = 0; c < config.k; ++c) {
      m.per_client_accuracy.push_back(evaluate_accuracy(global, pool, test_order[c], config));
      m.per_client_loss.push_back(evaluate_loss(global, pool, clients[c].train_indices, config));
    }
    m.pfl_accuracy = std::accumulate(m.per_client_accuracy.begin(), m.per_client_accuracy.end(), 0.0) /
                     static_cast<double>(config.k);
    m.cosine.assign(config.k, 0.0);
    result.rounds.push_back(std::move(m));
  }

  for (std::size_t t = 1; t <= config.rounds; ++t) {
    std::vector<model::FlatParams> local;
    RoundMetrics m;
    m.round = t;
    local.reserve(config.k);
    for (std::size_t c = 0; c < config.k; ++c) {
      ClientUpdate u = client_execute(c, t, theta, config, clients[c], pool,
                                      config.dump_graphs ? &result.graphs : nullptr);
      m.per_client_loss.push_back(u.epoch_loss.empty() ? 0.0 : u.epoch_loss.back());
      local.push_back(std::move(u.params));
    }
    ServerResult server = server_execute(theta, local, counts, config);

    Vector delta(theta.size());
    for (std::size_t i = 0; i < delta.size(); ++i) delta[i] = server.theta.values[i] - theta.values[i];
    m.cosine = norm2(delta) > 0.0 ? cosine_diagnostic(server.deviations, delta) : Vector(config.k, 0.0);
    m.p = server.weights.p;
    m.bargain_residual = server.residual;
    m.converged = server.weights.converged;
    theta = std::move(server.theta);

    m.gfl_accuracy = evaluate_accuracy(model::unflatten(theta), held, held_order, config);
    for (std::size_t c = 0; c < config.k; ++c)
      m.per_client_accuracy.push_back(evaluate_accuracy(model::unflatten(local[c]), pool, test_order[c], config));
    m.pfl_accuracy = std::accumulate(m.per_client_accuracy.begin(), m.per_client_accuracy.end(), 0.0) /
                     static_cast<double>(config.k);
    result.rounds.push_back(std::move(m));
  }
  result.final_params = std::move(theta);
  return result;
}

}  // namespace fedrane::federation
