#ifndef FEDRANE_TAPE_HPP_
#define FEDRANE_TAPE_HPP_

#include <cstddef>
#include <optional>
#include <string_view>
#include <vector>

#include "fedrane/matrix.hpp"

namespace fedrane {

struct NodeId {
  std::size_t index = 0;
  bool operator==(const NodeId&) const = default;
};

/// Reverse-mode automatic differentiation over matrix-valued nodes.
///
/// Operations are evaluated eagerly as they are recorded, so `value()` is
/// available immediately. `forward()` re-evaluates every node in recording
/// order, which is what finite-difference checks use after `set_value()` on a
/// leaf. `backward()` seeds the last recorded node, which must be 1x1.
///
/// The primitive set is closed: matmul, add, scale, relu, row softmax (plain
/// or log-domain), log, exp, sum and Pearson similarity.
class Tape {
 public:
  enum class Op {
    kLeaf,
    kConstant,
    kMatMul,
    kAdd,
    kScale,
    kScaleMask,
    kRelu,
    kRowSoftmax,
    kRowLogSoftmax,
    kLog,
    kExp,
    kSum,
    kPearson,
  };

  /// Trainable input; receives an adjoint.
  NodeId leaf(Matrix value);
  /// Input that never needs an adjoint (data, masks, stop-gradient values).
  NodeId constant(Matrix value);

  NodeId matmul(NodeId a, NodeId b, bool transpose_a = false, bool transpose_b = false);
  /// a + b; b may be a 1 x cols row broadcast over the rows of a.
  NodeId add(NodeId a, NodeId b);
  NodeId scale(NodeId a, double factor);
  /// Elementwise product with a constant matrix of the same shape.
  NodeId scale(NodeId a, Matrix mask);
  NodeId relu(NodeId a);
  /// Row-wise softmax. With a mask, entries where mask == 0 are excluded
  /// (output 0); every row must keep at least one entry.
  NodeId row_softmax(NodeId a, std::optional<Matrix> mask = std::nullopt);
  /// Row-wise log-softmax, evaluated with the log-sum-exp shift.
  NodeId row_log_softmax(NodeId a);
  NodeId log(NodeId a);
  NodeId exp(NodeId a);
  NodeId sum(NodeId a);
  /// out(i, j) = Pearson correlation between row i of a and row j of b.
  /// Each centered row norm is floored at eps.
  NodeId pearson(NodeId a, NodeId b, double eps = 1e-8);

  const Matrix& value(NodeId id) const;
  void set_value(NodeId leaf_or_constant, Matrix value);
  const Matrix& adjoint(NodeId id) const;

  /// Recomputes all node values; returns the last node's value.
  const Matrix& forward();
  /// Accumulates d(last node)/d(node) into every node's adjoint.
  void backward();

  std::size_t size() const { return nodes_.size(); }
  NodeId last() const;
  Op op(NodeId id) const { return nodes_.at(id.index).op; }
  static std::string_view op_name(Op op);

 private:
  struct Node {
    Op op = Op::kLeaf;
    std::size_t a = 0;
    std::size_t b = 0;
    bool flag_a = false;
    bool flag_b = false;
    double scalar = 0.0;
    Matrix aux;  // mask for kScaleMask / kRowSoftmax
    bool has_aux = false;
    Matrix value;
    Matrix adjoint;
  };

  NodeId push(Node node);
  void evaluate(std::size_t index);
  void propagate(std::size_t index);
  const Node& node(NodeId id) const;
  [[noreturn]] void shape_error(std::size_t index, const std::string& what) const;

  std::vector<Node> nodes_;
};

}  // namespace fedrane

#endif  // FEDRANE_TAPE_HPP_
