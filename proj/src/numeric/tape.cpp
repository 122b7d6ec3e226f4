#include "fedrane/tape.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace fedrane {
namespace {

// Centered, norm-floored rows used by the Pearson primitive.
struct NormalizedRows {
  Matrix u;
  Vector norms;  // floored
  std::vector<bool> floored;
};

NormalizedRows normalize_rows(const Matrix& x, double eps) {
  NormalizedRows out{Matrix(x.rows(), x.cols()), Vector(x.rows()),
                     std::vector<bool>(x.rows(), false)};
  const double inv_cols = 1.0 / static_cast<double>(x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const auto row = x.row(i);
    double mean = 0.0;
    for (double v : row) mean += v;
    mean *= inv_cols;
    auto urow = out.u.row(i);
    double sq = 0.0;
    for (std::size_t j = 0; j < row.size(); ++j) {
      urow[j] = row[j] - mean;
      sq += urow[j] * urow[j];
    }
    double n = std::sqrt(sq);
    if (!(n > eps)) {
      n = eps;
      out.floored[i] = true;
    }
    out.norms[i] = n;
    for (double& v : urow) v /= n;
  }
  return out;
}

// Pulls an adjoint on the normalized rows back to the raw rows.
Matrix normalize_rows_backward(const NormalizedRows& fwd, const Matrix& du) {
  Matrix dx(du.rows(), du.cols());
  const double inv_cols = 1.0 / static_cast<double>(du.cols());
  for (std::size_t i = 0; i < du.rows(); ++i) {
    const auto u = fwd.u.row(i);
    const auto g = du.row(i);
    auto out = dx.row(i);
    const double proj = fwd.floored[i] ? 0.0 : dot(u, g);
    double mean = 0.0;
    for (std::size_t j = 0; j < g.size(); ++j) {
      out[j] = (g[j] - u[j] * proj) / fwd.norms[i];
      mean += out[j];
    }
    mean *= inv_cols;
    for (double& v : out) v -= mean;
  }
  return dx;
}

void accumulate(Matrix& target, const Matrix& delta) { target += delta; }

}  // namespace

std::string_view Tape::op_name(Op op) {
  switch (op) {
    case Op::kLeaf: return "leaf";
    case Op::kConstant: return "constant";
    case Op::kMatMul: return "matmul";
    case Op::kAdd: return "add";
    case Op::kScale: return "scale";
    case Op::kScaleMask: return "scale_mask";
    case Op::kRelu: return "relu";
    case Op::kRowSoftmax: return "row_softmax";
    case Op::kRowLogSoftmax: return "row_log_softmax";
    case Op::kLog: return "log";
    case Op::kExp: return "exp";
    case Op::kSum: return "sum";
    case Op::kPearson: return "pearson";
  }
  return "unknown";
}

const Tape::Node& Tape::node(NodeId id) const {
  if (id.index >= nodes_.size())
    throw std::out_of_range("tape node " + std::to_string(id.index) + " does not exist");
  return nodes_[id.index];
}

void Tape::shape_error(std::size_t index, const std::string& what) const {
  throw ShapeError("tape node " + std::to_string(index) + " (" +
                   std::string(op_name(nodes_[index].op)) + "): " + what);
}

NodeId Tape::push(Node n) {
  if (n.op != Op::kLeaf && n.op != Op::kConstant) {
    if (n.a >= nodes_.size() || n.b >= nodes_.size())
      throw std::out_of_range("tape input refers to a node that does not precede it");
  }
  nodes_.push_back(std::move(n));
  const std::size_t idx = nodes_.size() - 1;
  try {
    evaluate(idx);
  } catch (...) {
    nodes_.pop_back();
    throw;
  }
  return NodeId{idx};
}

NodeId Tape::leaf(Matrix value) {
  Node n;
  n.op = Op::kLeaf;
  n.value = std::move(value);
  return push(std::move(n));
}

NodeId Tape::constant(Matrix value) {
  Node n;
  n.op = Op::kConstant;
  n.value = std::move(value);
  return push(std::move(n));
}

NodeId Tape::matmul(NodeId a, NodeId b, bool transpose_a, bool transpose_b) {
  Node n;
  n.op = Op::kMatMul;
  n.a = a.index;
  n.b = b.index;
  n.flag_a = transpose_a;
  n.flag_b = transpose_b;
  return push(std::move(n));
}

NodeId Tape::add(NodeId a, NodeId b) {
  Node n;
  n.op = Op::kAdd;
  n.a = a.index;
  n.b = b.index;
  return push(std::move(n));
}

NodeId Tape::scale(NodeId a, double factor) {
  Node n;
  n.op = Op::kScale;
  n.a = a.index;
  n.scalar = factor;
  return push(std::move(n));
}

NodeId Tape::scale(NodeId a, Matrix mask) {
  Node n;
  n.op = Op::kScaleMask;
  n.a = a.index;
  n.aux = std::move(mask);
  n.has_aux = true;
  return push(std::move(n));
}

NodeId Tape::relu(NodeId a) {
  Node n;
  n.op = Op::kRelu;
  n.a = a.index;
  return push(std::move(n));
}

NodeId Tape::row_softmax(NodeId a, std::optional<Matrix> mask) {
  Node n;
  n.op = Op::kRowSoftmax;
  n.a = a.index;
  if (mask) {
    n.aux = std::move(*mask);
    n.has_aux = true;
  }
  return push(std::move(n));
}

NodeId Tape::row_log_softmax(NodeId a) {
  Node n;
  n.op = Op::kRowLogSoftmax;
  n.a = a.index;
  return push(std::move(n));
}

NodeId Tape::log(NodeId a) {
  Node n;
  n.op = Op::kLog;
  n.a = a.index;
  return push(std::move(n));
}

NodeId Tape::exp(NodeId a) {
  Node n;
  n.op = Op::kExp;
  n.a = a.index;
  return push(std::move(n));
}

NodeId Tape::sum(NodeId a) {
  Node n;
  n.op = Op::kSum;
  n.a = a.index;
  return push(std::move(n));
}

NodeId Tape::pearson(NodeId a, NodeId b, double eps) {
  Node n;
  n.op = Op::kPearson;
  n.a = a.index;
  n.b = b.index;
  n.scalar = eps;
  return push(std::move(n));
}

const Matrix& Tape::value(NodeId id) const { return node(id).value; }

const Matrix& Tape::adjoint(NodeId id) const { return node(id).adjoint; }

void Tape::set_value(NodeId id, Matrix value) {
  Node& n = nodes_.at(id.index);
  if (n.op != Op::kLeaf && n.op != Op::kConstant)
    throw std::invalid_argument("set_value: node " + std::to_string(id.index) + " is not an input");
  if (value.rows() != n.value.rows() || value.cols() != n.value.cols())
    shape_error(id.index, "new value " + shape_string(value) + " replaces " + shape_string(n.value));
  n.value = std::move(value);
}

NodeId Tape::last() const {
  if (nodes_.empty()) throw std::logic_error("tape is empty");
  return NodeId{nodes_.size() - 1};
}

const Matrix& Tape::forward() {
  for (std::size_t i = 0; i < nodes_.size(); ++i) evaluate(i);
  return nodes_.at(last().index).value;
}

void Tape::evaluate(std::size_t index) {
  Node& n = nodes_[index];
  switch (n.op) {
    case Op::kLeaf:
    case Op::kConstant:
      return;
    case Op::kMatMul: {
      const Matrix& a = nodes_[n.a].value;
      const Matrix& b = nodes_[n.b].value;
      const std::size_t ka = n.flag_a ? a.rows() : a.cols();
      const std::size_t kb = n.flag_b ? b.cols() : b.rows();
      if (ka != kb) shape_error(index, "inner dimensions " + shape_string(a) + " and " + shape_string(b));
      n.value = fedrane::matmul(a, b, n.flag_a, n.flag_b);
      return;
    }
    case Op::kAdd: {
      const Matrix& a = nodes_[n.a].value;
      const Matrix& b = nodes_[n.b].value;
      if (a.rows() == b.rows() && a.cols() == b.cols()) {
        n.value = a + b;
      } else if (b.rows() == 1 && b.cols() == a.cols()) {
        n.value = a;
        for (std::size_t r = 0; r < a.rows(); ++r) {
          auto row = n.value.row(r);
          for (std::size_t c = 0; c < a.cols(); ++c) row[c] += b(0, c);
        }
      } else {
        shape_error(index, "cannot add " + shape_string(a) + " and " + shape_string(b));
      }
      return;
    }
    case Op::kScale:
      n.value = nodes_[n.a].value * n.scalar;
      return;
    case Op::kScaleMask: {
      const Matrix& a = nodes_[n.a].value;
      if (a.rows() != n.aux.rows() || a.cols() != n.aux.cols())
        shape_error(index, "mask " + shape_string(n.aux) + " for " + shape_string(a));
      n.value = hadamard(a, n.aux);
      return;
    }
    case Op::kRelu: {
      n.value = nodes_[n.a].value;
      for (double& v : n.value.data()) v = v > 0.0 ? v : 0.0;
      return;
    }
    case Op::kRowSoftmax: {
      const Matrix& a = nodes_[n.a].value;
      if (n.has_aux && (a.rows() != n.aux.rows() || a.cols() != n.aux.cols()))
        shape_error(index, "mask " + shape_string(n.aux) + " for " + shape_string(a));
      n.value = Matrix(a.rows(), a.cols());
      for (std::size_t r = 0; r < a.rows(); ++r) {
        double mx = -std::numeric_limits<double>::infinity();
        bool any = false;
        for (std::size_t c = 0; c < a.cols(); ++c)
          if (!n.has_aux || n.aux(r, c) != 0.0) {
            any = true;
            mx = std::max(mx, a(r, c));
          }
        if (!any) shape_error(index, "row " + std::to_string(r) + " has no included entry");
        if (!std::isfinite(mx))
          throw NumericError("tape node " + std::to_string(index) + " (row_softmax): row " + std::to_string(r) +
                             " has non-finite scores");
        double z = 0.0;
        for (std::size_t c = 0; c < a.cols(); ++c) {
          if (n.has_aux && n.aux(r, c) == 0.0) continue;
          const double e = std::exp(a(r, c) - mx);
          n.value(r, c) = e;
          z += e;
        }
        for (std::size_t c = 0; c < a.cols(); ++c) n.value(r, c) /= z;
      }
      return;
    }
    case Op::kRowLogSoftmax: {
      const Matrix& a = nodes_[n.a].value;
      n.value = Matrix(a.rows(), a.cols());
      for (std::size_t r = 0; r < a.rows(); ++r) {
        const auto row = a.row(r);
        const double mx = *std::max_element(row.begin(), row.end());
        double z = 0.0;
        for (double v : row) z += std::exp(v - mx);
        const double lse = mx + std::log(z);
        for (std::size_t c = 0; c < a.cols(); ++c) n.value(r, c) = row[c] - lse;
      }
      return;
    }
    case Op::kLog:
      n.value = nodes_[n.a].value;
      for (double& v : n.value.data()) v = std::log(v);
      return;
    case Op::kExp:
      n.value = nodes_[n.a].value;
      for (double& v : n.value.data()) v = std::exp(v);
      return;
    case Op::kSum:
      n.value = Matrix(1, 1, nodes_[n.a].value.sum());
      return;
    case Op::kPearson: {
      const Matrix& a = nodes_[n.a].value;
      const Matrix& b = nodes_[n.b].value;
      if (a.cols() != b.cols()) shape_error(index, "row lengths " + shape_string(a) + " and " + shape_string(b));
      if (a.cols() < 2) shape_error(index, "Pearson similarity needs at least 2 columns");
      const auto na = normalize_rows(a, n.scalar);
      const auto nb = normalize_rows(b, n.scalar);
      n.value = fedrane::matmul(na.u, nb.u, false, true);
      return;
    }
  }
}

void Tape::backward() {
  const std::size_t root = last().index;
  if (nodes_[root].value.rows() != 1 || nodes_[root].value.cols() != 1)
    throw ShapeError("backward: final node " + std::to_string(root) + " is " +
                     shape_string(nodes_[root].value) + ", expected a scalar");
  for (auto& n : nodes_) n.adjoint = Matrix(n.value.rows(), n.value.cols());
  nodes_[root].adjoint(0, 0) = 1.0;
  for (std::size_t i = root + 1; i-- > 0;) propagate(i);
}

void Tape::propagate(std::size_t index) {
  Node& n = nodes_[index];
  const Matrix& g = n.adjoint;
  switch (n.op) {
    case Op::kLeaf:
    case Op::kConstant:
      return;
    case Op::kMatMul: {
      const Matrix& a = nodes_[n.a].value;
      const Matrix& b = nodes_[n.b].value;
      // C = op(A) op(B)
      Matrix da = n.flag_a ? fedrane::matmul(b, g, n.flag_b, true)
                           : fedrane::matmul(g, b, false, !n.flag_b);
      Matrix db = n.flag_b ? fedrane::matmul(g, a, true, n.flag_a)
                           : fedrane::matmul(a, g, !n.flag_a, false);
      accumulate(nodes_[n.a].adjoint, da);
      accumulate(nodes_[n.b].adjoint, db);
      return;
    }
    case Op::kAdd: {
      accumulate(nodes_[n.a].adjoint, g);
      Matrix& badj = nodes_[n.b].adjoint;
      if (badj.rows() == g.rows()) {
        accumulate(badj, g);
      } else {
        for (std::size_t r = 0; r < g.rows(); ++r)
          for (std::size_t c = 0; c < g.cols(); ++c) badj(0, c) += g(r, c);
      }
      return;
    }
    case Op::kScale:
      accumulate(nodes_[n.a].adjoint, g * n.scalar);
      return;
    case Op::kScaleMask:
      accumulate(nodes_[n.a].adjoint, hadamard(g, n.aux));
      return;
    case Op::kRelu: {
      Matrix d = g;
      const Matrix& a = nodes_[n.a].value;
      for (std::size_t i = 0; i < d.size(); ++i)
        if (!(a.data()[i] > 0.0)) d.data()[i] = 0.0;
      accumulate(nodes_[n.a].adjoint, d);
      return;
    }
    case Op::kRowSoftmax: {
      const Matrix& y = n.value;
      Matrix d(y.rows(), y.cols());
      for (std::size_t r = 0; r < y.rows(); ++r) {
        const double s = dot(y.row(r), g.row(r));
        for (std::size_t c = 0; c < y.cols(); ++c) d(r, c) = y(r, c) * (g(r, c) - s);
      }
      accumulate(nodes_[n.a].adjoint, d);
      return;
    }
    case Op::kRowLogSoftmax: {
      const Matrix& y = n.value;
      Matrix d(y.rows(), y.cols());
      for (std::size_t r = 0; r < y.rows(); ++r) {
        double s = 0.0;
        for (double v : g.row(r)) s += v;
        for (std::size_t c = 0; c < y.cols(); ++c) d(r, c) = g(r, c) - std::exp(y(r, c)) * s;
      }
      accumulate(nodes_[n.a].adjoint, d);
      return;
    }
    case Op::kLog: {
      Matrix d = g;
      const Matrix& a = nodes_[n.a].value;
      for (std::size_t i = 0; i < d.size(); ++i) d.data()[i] /= a.data()[i];
      accumulate(nodes_[n.a].adjoint, d);
      return;
    }
    case Op::kExp:
      accumulate(nodes_[n.a].adjoint, hadamard(g, n.value));
      return;
    case Op::kSum: {
      const Matrix& a = nodes_[n.a].value;
      accumulate(nodes_[n.a].adjoint, Matrix(a.rows(), a.cols(), g(0, 0)));
      return;
    }
    case Op::kPearson: {
      const auto na = normalize_rows(nodes_[n.a].value, n.scalar);
      const auto nb = normalize_rows(nodes_[n.b].value, n.scalar);
      const Matrix dua = fedrane::matmul(g, nb.u);
      const Matrix dub = fedrane::matmul(g, na.u, true, false);
      accumulate(nodes_[n.a].adjoint, normalize_rows_backward(na, dua));
      accumulate(nodes_[n.b].adjoint, normalize_rows_backward(nb, dub));
      return;
    }
  }
}

}  // namespace fedrane
