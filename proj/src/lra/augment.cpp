#include <cmath>

#include "fedrane/linalg.hpp"
#include "fedrane/lra.hpp"

namespace fedrane::lra {

NodeId attention_weights(Tape& tape, NodeId h, NodeId receive, NodeId send, const Matrix& mask,
                         std::size_t d, bool normalize) {
  if (d == 0) throw std::invalid_argument("attention_weights: d must be positive");
  const NodeId hm = tape.matmul(h, receive);
  const NodeId hn = tape.matmul(h, send);
  const NodeId scores = tape.scale(tape.matmul(hm, hn, false, true), 1.0 / std::sqrt(static_cast<double>(d)));
  return normalize ? tape.row_softmax(scores, mask) : tape.scale(scores, mask);
}

Matrix attention_weights(const Matrix& h, const Matrix& receive, const Matrix& send,
                         const Matrix& adjacency, std::size_t d, bool normalize, double threshold) {
  Tape tape;
  const NodeId a = attention_weights(tape, tape.constant(h), tape.constant(receive), tape.constant(send),
                                     neighbor_mask(adjacency, threshold), d, normalize);
  return tape.value(a);
}

NodeId message_passing(Tape& tape, NodeId z, const Matrix& mask,
                       std::span<const std::array<NodeId, 3>> steps, bool normalize) {
  const std::size_t b = tape.value(z).rows();
  const std::size_t d = tape.value(z).cols();
  if (mask.rows() != b || mask.cols() != b)
    throw ShapeError("message_passing: mask is " + shape_string(mask) + " for a batch of " + std::to_string(b));
  NodeId h = z;
  for (const auto& w : steps) {
    const NodeId alpha = attention_weights(tape, h, w[1], w[2], mask, d, normalize);
    h = tape.matmul(alpha, tape.matmul(h, w[0]));
  }
  return h;
}

Matrix message_passing(const Matrix& z, const RelationalGraph& graph,
                       std::span<const model::LraStepWeights> weights, std::size_t steps, bool normalize) {
  if (weights.size() < steps)
    throw ShapeError("message_passing: " + std::to_string(steps) + " steps but " +
                     std::to_string(weights.size()) + " weight sets");
  Tape tape;
  std::vector<std::array<NodeId, 3>> nodes;
  for (std::size_t l = 0; l < steps; ++l)
    nodes.push_back({tape.constant(weights[l].message), tape.constant(weights[l].receive),
                     tape.constant(weights[l].send)});
  return tape.value(message_passing(tape, tape.constant(z), neighbor_mask(graph.adjacency), nodes, normalize));
}

NodeId contrastive_loss(Tape& tape, NodeId z, NodeId z_tilde, double tau1) {
  const Matrix& zv = tape.value(z);
  const Matrix& tv = tape.value(z_tilde);
  if (zv.rows() < 2) throw std::invalid_argument("contrastive_loss: batch must hold at least 2 samples");
  if (zv.rows() != tv.rows() || zv.cols() != tv.cols())
    throw ShapeError("contrastive_loss: " + shape_string(zv) + " vs " + shape_string(tv));
  if (!(tau1 > 0.0 && tau1 <= 1.0)) throw std::invalid_argument("contrastive_loss: tau1 must lie in (0, 1]");
  const std::size_t n = zv.rows();
  const double inv_tau = 1.0 / tau1;

  // Stacked rows [z; z_tilde]: for anchor i the denominator runs over the
  // other rows of z and all rows of z_tilde.
  const NodeId sim_self = tape.pearson(z, z);
  const NodeId sim_cross = tape.pearson(z, z_tilde);
  Matrix off_diag(n, n, 1.0);
  for (std::size_t i = 0; i < n; ++i) off_diag(i, i) = 0.0;
  const NodeId e_self = tape.scale(tape.exp(tape.scale(sim_self, inv_tau)), std::move(off_diag));
  const NodeId e_cross = tape.exp(tape.scale(sim_cross, inv_tau));
  const NodeId ones = tape.constant(Matrix(n, 1, 1.0));
  const NodeId denom = tape.add(tape.matmul(e_self, ones), tape.matmul(e_cross, ones));
  const NodeId log_denom = tape.sum(tape.log(denom));
  const NodeId positives = tape.scale(tape.sum(tape.scale(sim_cross, Matrix::identity(n))), -inv_tau);
  return tape.scale(tape.add(log_denom, positives), 1.0 / static_cast<double>(n));
}

double contrastive_loss(const Matrix& z, const Matrix& z_tilde, double tau1) {
  Tape tape;
  return tape.value(contrastive_loss(tape, tape.constant(z), tape.constant(z_tilde), tau1))(0, 0);
}

LraNodes lra_forward(Tape& tape, const model::ParamNodes& params, NodeId x, const LraOptions& options,
                     GraphDump* dump) {
  if (params.lra.size() < options.steps)
    throw ShapeError("lra_forward: " + std::to_string(options.steps) + " steps but " +
                     std::to_string(params.lra.size()) + " weight sets");
  const NodeId z = model::feature_extract(tape, params, x);
  const Matrix& zv = tape.value(z);
  const std::size_t n = zv.rows();
  if (n == 0) throw ShapeError("lra_forward: empty batch");
  if (!zv.all_finite()) throw NumericError("lra_forward: embeddings are not finite");
  const std::span<const std::array<NodeId, 3>> steps(params.lra.data(), options.steps);

  Matrix mask = Matrix::identity(n);
  if (n >= 2 && options.steps > 0) {
    SlimOptions slim{options.lambda_r, options.slim_max_iter, options.slim_tol, options.eps};
    const CorrelationMatrix corr = pearson_matrix(zv, options.eps);
    SlimResult mined = slim_solve(corr, slim);
    RelationalGraph graph = build_graph(std::move(mined.b));
    mask = neighbor_mask(graph.adjacency, options.edge_threshold);
    if (dump != nullptr) {
      dump->correlation = corr.values;
      dump->b = graph.b;
      dump->adjacency_eigenvalues = sym_eig(graph.adjacency).values;
      dump->slim_iterations = mined.iterations;
      dump->slim_converged = mined.converged;
      std::size_t edges = 0;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) edges += mask(i, j) != 0.0 ? 1 : 0;
      dump->edges = edges;
    }
  }
  const NodeId z_tilde = message_passing(tape, z, mask, steps, options.attention_softmax);
  NodeId cd;
  if (n >= 2) {
    cd = contrastive_loss(tape, z, z_tilde, options.tau1);
  } else {
    cd = tape.constant(Matrix(1, 1, 0.0));
  }
  if (dump != nullptr) dump->cd_loss = tape.value(cd)(0, 0);
  return {z, z_tilde, cd};
}

}  // namespace fedrane::lra
