#ifndef FEDRANE_LRA_HPP_
#define FEDRANE_LRA_HPP_

#include <array>
#include <span>
#include <vector>

#include "fedrane/matrix.hpp"
#include "fedrane/model.hpp"
#include "fedrane/tape.hpp"

// Local relational augmentation: per-batch relation mining on embedding
// correlations, attentive message passing over the mined graph, and the
// contrastive term tying each embedding to its augmented version.
namespace fedrane::lra {

inline constexpr double kEdgeThreshold = 1e-3;

/// Pearson correlations between the rows of a batch of embeddings.
/// Symmetric, unit diagonal, entries in [-1, 1].
struct CorrelationMatrix {
  Matrix values;
};

/// Row-centred Pearson coefficients with centred norms floored at eps. Rows
/// that are constant get zero correlation with everything else.
CorrelationMatrix pearson_matrix(const Matrix& z, double eps = 1e-8);

struct SlimOptions {
  double lambda_r = 0.1;
  std::size_t max_iter = 50;
  double tol = 1e-6;
  double eps = 1e-8;  // regularizer of (B B^T + eps I)^(-1/2)
};

struct SlimResult {
  Matrix b;
  std::size_t iterations = 0;
  bool converged = false;
  /// Objective after each B update, starting with the value at B = 0.
  std::vector<double> objective;
};

/// Relation mining by alternating a zero-diagonal weighted ridge solve for B
/// with the reweighting Phi = (B B^T + eps I)^(-1/2).
///
/// The B step is the exact minimizer of
///   1/2 ||P - P B||_F^2 + lambda_r tr(B^T Phi B)   s.t. diag(B) = 0
/// for the current Phi, computed column by column from
/// H = (P^T P + lambda_r (Phi + Phi^T))^(-1). When Phi is a multiple of the
/// identity this reduces to B_ij = -H_ij / H_jj.
SlimResult slim_solve(const CorrelationMatrix& p, const SlimOptions& options = {});

/// One exact B step for a fixed reweighting matrix.
Matrix slim_update(const Matrix& p, const Matrix& phi, double lambda_r);

/// The quantity the alternation descends:
///   1/2 ||P - P B||^2 + lambda_r [tr(B^T Phi B) + eps tr(Phi) + tr(Phi^-1)]
/// at Phi = (B B^T + eps I)^(-1/2), which equals
///   1/2 ||P - P B||^2 + 2 lambda_r tr((B B^T + eps I)^(1/2)).
double slim_objective(const Matrix& p, const Matrix& b, double lambda_r, double eps = 1e-8);

/// Sample graph from mined weights: A = (|B| + |B|^T) / 2, D = diag(row sums
/// of A), L = D - A.
struct RelationalGraph {
  Matrix b;
  Matrix adjacency;
  Matrix degree;
  Matrix laplacian;
};

RelationalGraph build_graph(Matrix b);

/// 1 where adjacency(i, j) > threshold or i == j, else 0.
Matrix neighbor_mask(const Matrix& adjacency, double threshold = kEdgeThreshold);

/// Scaled dot-product scores (h W_m)_i . (h W_n)_j / sqrt(d) restricted to the
/// neighbourhood given by `mask`; optionally row-softmaxed over it.
NodeId attention_weights(Tape& tape, NodeId h, NodeId receive, NodeId send, const Matrix& mask,
                         std::size_t d, bool normalize);
Matrix attention_weights(const Matrix& h, const Matrix& receive, const Matrix& send,
                         const Matrix& adjacency, std::size_t d, bool normalize,
                         double threshold = kEdgeThreshold);

/// h^{l+1} = alpha^l (h^l W^l); returns h^steps. The mask is a constant: no
/// gradient flows into the graph.
NodeId message_passing(Tape& tape, NodeId z, const Matrix& mask,
                       std::span<const std::array<NodeId, 3>> steps, bool normalize);
Matrix message_passing(const Matrix& z, const RelationalGraph& graph,
                       std::span<const model::LraStepWeights> weights, std::size_t steps,
                       bool normalize = false);

/// Contrastive discrimination over [z; z_tilde] with Pearson similarity:
/// anchors are the rows of z, positives the matching rows of z_tilde, and
/// every other row of the stacked matrix is a negative.
NodeId contrastive_loss(Tape& tape, NodeId z, NodeId z_tilde, double tau1);
double contrastive_loss(const Matrix& z, const Matrix& z_tilde, double tau1);

struct LraOptions {
  double lambda_r = 0.1;
  double tau1 = 0.8;
  std::size_t steps = 2;
  bool attention_softmax = false;
  std::size_t slim_max_iter = 50;
  double slim_tol = 1e-6;
  double eps = 1e-8;
  double edge_threshold = kEdgeThreshold;
};

/// Diagnostics for one mined batch graph.
struct GraphDump {
  Matrix correlation;
  Matrix b;
  Vector adjacency_eigenvalues;
  std::size_t slim_iterations = 0;
  bool slim_converged = false;
  std::size_t edges = 0;
  double cd_loss = 0.0;
};

struct LraNodes {
  NodeId z;
  NodeId z_tilde;
  NodeId cd_loss;
};

/// Embeds the batch, mines its graph, augments the embeddings and records the
/// contrastive loss. Batches of one sample skip mining (self loop only) and
/// report a zero contrastive loss.
LraNodes lra_forward(Tape& tape, const model::ParamNodes& params, NodeId x,
                     const LraOptions& options, GraphDump* dump = nullptr);

}  // namespace fedrane::lra

#endif  // FEDRANE_LRA_HPP_
