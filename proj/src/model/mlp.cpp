#include <cmath>
#include <limits>
#include <stdexcept>

#include "fedrane/model.hpp"
#include "fedrane/rng.hpp"

namespace fedrane::model {
namespace {

DenseLayer glorot_layer(std::size_t in, std::size_t out, Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(in + out));
  DenseLayer layer{Matrix(in, out), Vector(out, 0.0)};
  for (double& w : layer.weight.data()) w = rng.uniform(-a, a);
  return layer;
}

Matrix glorot_square(std::size_t n, Rng& rng) { return glorot_layer(n, n, rng).weight; }

void check_labels(std::size_t rows, std::size_t classes, std::span<const int> labels) {
  if (labels.size() != rows)
    throw ShapeError("cross_entropy: " + std::to_string(rows) + " logit rows but " +
                     std::to_string(labels.size()) + " labels");
  for (int y : labels)
    if (y < 0 || static_cast<std::size_t>(y) >= classes)
      throw std::out_of_range("cross_entropy: label " + std::to_string(y) + " outside [0, " +
                              std::to_string(classes) + ")");
}

NodeId dense_stack(Tape& tape, const std::vector<std::array<NodeId, 2>>& layers, NodeId x) {
  NodeId h = x;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    h = tape.add(tape.matmul(h, layers[i][0]), layers[i][1]);
    if (i + 1 < layers.size()) h = tape.relu(h);
  }
  return h;
}

}  // namespace

MLPParams init_params(const Architecture& arch, std::uint64_t seed) {
  if (arch.input_dim == 0 || arch.embedding_dim == 0 || arch.classes == 0)
    throw std::invalid_argument("init_params: input_dim, embedding_dim and classes must be positive");
  Rng rng(seed);
  MLPParams p;
  std::size_t in = arch.input_dim;
  for (std::size_t w : arch.extractor_hidden) {
    p.extractor.push_back(glorot_layer(in, w, rng));
    in = w;
  }
  p.extractor.push_back(glorot_layer(in, arch.embedding_dim, rng));
  in = arch.embedding_dim;
  for (std::size_t w : arch.predictor_hidden) {
    p.predictor.push_back(glorot_layer(in, w, rng));
    in = w;
  }
  p.predictor.push_back(glorot_layer(in, arch.classes, rng));
  for (std::size_t l = 0; l < arch.mp_steps; ++l) {
    LraStepWeights s;
    s.message = glorot_square(arch.embedding_dim, rng);
    s.receive = glorot_square(arch.embedding_dim, rng);
    s.send = glorot_square(arch.embedding_dim, rng);
    p.lra.push_back(std::move(s));
  }
  return p;
}

void validate(const MLPParams& params) {
  const auto check_stack = [](const std::vector<DenseLayer>& layers, const char* name) {
    if (layers.empty()) throw ShapeError(std::string(name) + " has no layers");
    for (std::size_t i = 0; i < layers.size(); ++i) {
      if (layers[i].bias.size() != layers[i].weight.cols())
        throw ShapeError(std::string(name) + " layer " + std::to_string(i) + ": bias length mismatch");
      if (i > 0 && layers[i].weight.rows() != layers[i - 1].weight.cols())
        throw ShapeError(std::string(name) + " layer " + std::to_string(i) + " does not compose");
    }
  };
  check_stack(params.extractor, "extractor");
  check_stack(params.predictor, "predictor");
  const std::size_t emb = params.extractor.back().weight.cols();
  if (params.predictor.front().weight.rows() != emb)
    throw ShapeError("predictor input does not match embedding dimension");
  for (const auto& s : params.lra) {
    for (const Matrix* m : {&s.message, &s.receive, &s.send})
      if (m->rows() != emb || m->cols() != emb)
        throw ShapeError("message-passing weight is " + shape_string(*m) + ", expected " +
                         std::to_string(emb) + "x" + std::to_string(emb));
  }
}

ParamNodes register_params(Tape& tape, const MLPParams& params) {
  ParamNodes nodes;
  for (const auto& l : params.extractor)
    nodes.extractor.push_back({tape.leaf(l.weight), tape.leaf(Matrix::row_vector(l.bias))});
  for (const auto& l : params.predictor)
    nodes.predictor.push_back({tape.leaf(l.weight), tape.leaf(Matrix::row_vector(l.bias))});
  for (const auto& s : params.lra)
    nodes.lra.push_back({tape.leaf(s.message), tape.leaf(s.receive), tape.leaf(s.send)});
  return nodes;
}

MLPParams collect_gradients(const Tape& tape, const ParamNodes& nodes) {
  const auto layer = [&](const std::array<NodeId, 2>& ids) {
    const Matrix& b = tape.adjoint(ids[1]);
    return DenseLayer{tape.adjoint(ids[0]), Vector(b.data().begin(), b.data().end())};
  };
  MLPParams g;
  for (const auto& ids : nodes.extractor) g.extractor.push_back(layer(ids));
  for (const auto& ids : nodes.predictor) g.predictor.push_back(layer(ids));
  for (const auto& ids : nodes.lra)
    g.lra.push_back({tape.adjoint(ids[0]), tape.adjoint(ids[1]), tape.adjoint(ids[2])});
  return g;
}

NodeId feature_extract(Tape& tape, const ParamNodes& nodes, NodeId x) {
  return dense_stack(tape, nodes.extractor, x);
}

NodeId predict(Tape& tape, const ParamNodes& nodes, NodeId z) {
  return dense_stack(tape, nodes.predictor, z);
}

NodeId cross_entropy(Tape& tape, NodeId logits, std::span<const int> labels) {
  const Matrix& v = tape.value(logits);
  check_labels(v.rows(), v.cols(), labels);
  Matrix pick(v.rows(), v.cols());
  for (std::size_t r = 0; r < v.rows(); ++r) pick(r, static_cast<std::size_t>(labels[r])) = 1.0;
  const NodeId logp = tape.row_log_softmax(logits);
  const NodeId picked = tape.sum(tape.scale(logp, std::move(pick)));
  return tape.scale(picked, -1.0 / static_cast<double>(v.rows()));
}

NodeId total_loss(Tape& tape, NodeId pred_loss, NodeId cd_loss, double lambda_cd) {
  if (lambda_cd < 0.0) throw std::invalid_argument("total_loss: lambda_cd must be >= 0");
  return tape.add(pred_loss, tape.scale(cd_loss, lambda_cd));
}

Matrix feature_extract(const MLPParams& params, const Matrix& x) {
  Tape tape;
  const ParamNodes nodes = register_params(tape, params);
  return tape.value(feature_extract(tape, nodes, tape.constant(x)));
}

Matrix predict(const MLPParams& params, const Matrix& z) {
  Tape tape;
  const ParamNodes nodes = register_params(tape, params);
  return tape.value(predict(tape, nodes, tape.constant(z)));
}

double cross_entropy(const Matrix& logits, std::span<const int> labels) {
  check_labels(logits.rows(), logits.cols(), labels);
  double total = 0.0;
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    const auto row = logits.row(r);
    double mx = -std::numeric_limits<double>::infinity();
    for (double v : row) mx = std::max(mx, v);
    double z = 0.0;
    for (double v : row) z += std::exp(v - mx);
    total += mx + std::log(z) - row[static_cast<std::size_t>(labels[r])];
  }
  return total / static_cast<double>(logits.rows());
}

double total_loss(double pred_loss, double cd_loss, double lambda_cd) {
  if (lambda_cd < 0.0) throw std::invalid_argument("total_loss: lambda_cd must be >= 0");
  return pred_loss + lambda_cd * cd_loss;
}

}  // namespace fedrane::model
