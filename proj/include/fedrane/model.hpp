#ifndef FEDRANE_MODEL_HPP_
#define FEDRANE_MODEL_HPP_

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fedrane/matrix.hpp"
#include "fedrane/tape.hpp"

namespace fedrane::model {

/// Layer widths of the client network.
struct Architecture {
  std::size_t input_dim = 0;
  std::vector<std::size_t> extractor_hidden{64, 64};
  std::size_t embedding_dim = 64;
  std::vector<std::size_t> predictor_hidden{64};
  std::size_t classes = 0;
  std::size_t mp_steps = 2;
};

/// Affine layer y = x * weight + bias with weight stored inputs x outputs.
struct DenseLayer {
  Matrix weight;
  Vector bias;
};

/// Message-passing weights of one augmentation step, each d_emb x d_emb:
/// `message` transforms neighbour states, `receive` and `send` project the
/// receiving and sending nodes for attention.
struct LraStepWeights {
  Matrix message;
  Matrix receive;
  Matrix send;
};

struct MLPParams {
  std::vector<DenseLayer> extractor;
  std::vector<DenseLayer> predictor;
  std::vector<LraStepWeights> lra;
};

/// Glorot-uniform weights, zero biases.
MLPParams init_params(const Architecture& arch, std::uint64_t seed);
/// Throws ShapeError if consecutive layers do not compose.
void validate(const MLPParams& params);

struct LayoutEntry {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t offset = 0;
  bool operator==(const LayoutEntry&) const = default;
};

using Layout = std::vector<LayoutEntry>;

/// Parameters serialized into a single vector, ordered by layer then row-major.
struct FlatParams {
  Vector values;
  Layout layout;

  std::size_t size() const { return values.size(); }
};

Layout layout_of(const MLPParams& params);
FlatParams flatten(const MLPParams& params);
MLPParams unflatten(const FlatParams& flat);
void require_same_layout(const FlatParams& a, const FlatParams& b, const char* where);

/// values - lr * grads.
FlatParams sgd_step(const FlatParams& params, const FlatParams& grads, double lr);

/// JSON {layout: [{name, rows, cols, offset}], values: [...]}; doubles are
/// written with round-trip precision.
std::string flat_params_to_json(const FlatParams& flat);
FlatParams flat_params_from_json(const std::string& text);

/// Tape handles for every parameter tensor.
struct ParamNodes {
  std::vector<std::array<NodeId, 2>> extractor;
  std::vector<std::array<NodeId, 2>> predictor;
  std::vector<std::array<NodeId, 3>> lra;  // message, receive, send
};

ParamNodes register_params(Tape& tape, const MLPParams& params);
/// Collects adjoints after Tape::backward() into the parameter structure.
MLPParams collect_gradients(const Tape& tape, const ParamNodes& nodes);

/// Affine layers with rectifiers between them; the last layer is affine only.
NodeId feature_extract(Tape& tape, const ParamNodes& nodes, NodeId x);
NodeId predict(Tape& tape, const ParamNodes& nodes, NodeId z);
/// Mean over rows of -log softmax(logits)[label].
NodeId cross_entropy(Tape& tape, NodeId logits, std::span<const int> labels);
/// pred + lambda_cd * cd.
NodeId total_loss(Tape& tape, NodeId pred_loss, NodeId cd_loss, double lambda_cd);

Matrix feature_extract(const MLPParams& params, const Matrix& x);
Matrix predict(const MLPParams& params, const Matrix& z);
double cross_entropy(const Matrix& logits, std::span<const int> labels);
double total_loss(double pred_loss, double cd_loss, double lambda_cd);

}  // namespace fedrane::model

#endif  // FEDRANE_MODEL_HPP_
