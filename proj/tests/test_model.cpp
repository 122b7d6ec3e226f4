#include <cmath>

#include "doctest.h"
#include "fedrane/model.hpp"
#include "oracles.hpp"

using namespace fedrane;
using namespace fedrane::model;

namespace {

Architecture small_arch() {
  Architecture a;
  a.input_dim = 3;
  a.extractor_hidden = {5};
  a.embedding_dim = 4;
  a.predictor_hidden = {6};
  a.classes = 3;
  a.mp_steps = 1;
  return a;
}

// x W + b with a rectifier unless last.
Matrix dense(const Matrix& x, const DenseLayer& l, bool relu) {
  Matrix out = oracle::naive_mul(x, l.weight);
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (std::size_t j = 0; j < out.cols(); ++j) {
      out(i, j) += l.bias[j];
      if (relu) out(i, j) = std::max(out(i, j), 0.0);
    }
  return out;
}

double direct_ce(const Matrix& logits, const std::vector<int>& y) {
  double total = 0.0;
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    double z = 0.0;
    for (double v : logits.row(i)) z += std::exp(v);
    total += -std::log(std::exp(logits(i, static_cast<std::size_t>(y[i]))) / z);
  }
  return total / static_cast<double>(logits.rows());
}

}  // namespace

TEST_SUITE("model") {

TEST_CASE("zero and identity maps") {
  MLPParams p;
  p.extractor.push_back({Matrix(3, 3), Vector(3, 0.0)});
  const Matrix x = Matrix::from_rows({{1, -2, 3}, {0.5, 0, -1}});
  CHECK(feature_extract(p, x) == Matrix(2, 3));
  p.extractor[0].weight = Matrix::identity(3);
  CHECK(feature_extract(p, x) == x);

  p.predictor.push_back({Matrix(3, 4), Vector(4, 0.0)});
  CHECK(predict(p, x) == Matrix(2, 4));
  p.predictor[0] = {Matrix::identity(3), Vector(3, 0.0)};
  CHECK(predict(p, x.transpose().transpose()) == x);
}

TEST_CASE("network matches step by step evaluation") {
  const MLPParams p = init_params(small_arch(), 3);
  Rng rng(1);
  const Matrix x = oracle::random_matrix(rng, 4, 3);
  const Matrix z = dense(dense(x, p.extractor[0], true), p.extractor[1], false);
  CHECK(max_abs_diff(feature_extract(p, x), z) < 1e-14);
  const Matrix logits = dense(dense(z, p.predictor[0], true), p.predictor[1], false);
  CHECK(max_abs_diff(predict(p, z), logits) < 1e-14);
}

TEST_CASE("init is glorot uniform with zero bias") {
  const MLPParams p = init_params(small_arch(), 4);
  const double a = std::sqrt(6.0 / (3 + 5));
  for (double w : p.extractor[0].weight.data()) CHECK(std::abs(w) <= a);
  for (double b : p.extractor[0].bias) CHECK(b == 0.0);
  CHECK(flatten(p).values == flatten(init_params(small_arch(), 4)).values);
  CHECK(flatten(p).values != flatten(init_params(small_arch(), 5)).values);
}

TEST_CASE("cross entropy anchors") {
  CHECK(cross_entropy(Matrix(2, 4), std::vector<int>{0, 3}) == doctest::Approx(std::log(4.0)).epsilon(1e-15));
  Matrix sat(1, 3);
  sat(0, 1) = 30.0;
  CHECK(cross_entropy(sat, std::vector<int>{1}) <= 1e-9);
  Rng rng(2);
  const Matrix logits = oracle::random_matrix(rng, 3, 5, -3, 3);
  const std::vector<int> y{4, 0, 2};
  CHECK(cross_entropy(logits, y) == doctest::Approx(direct_ce(logits, y)).epsilon(1e-12));
  Matrix huge(1, 2);
  huge(0, 0) = 1000.0;
  CHECK(std::isfinite(cross_entropy(huge, std::vector<int>{1})));
}

TEST_CASE("total loss") {
  CHECK(total_loss(0.7, 5.0, 0.0) == 0.7);
  CHECK(total_loss(1.0, 2.0, 0.2) == doctest::Approx(1.4));
  CHECK(total_loss(0.0, 3.5, 1.0) == 3.5);
}

TEST_CASE("sgd step") {
  FlatParams p{{1.0, 1.0}, {{"w", 1, 2, 0}}};
  FlatParams g{{2.0, -2.0}, p.layout};
  CHECK(sgd_step(p, g, 0.5).values == Vector{0.0, 2.0});
  CHECK(sgd_step(p, FlatParams{{0.0, 0.0}, p.layout}, 0.5).values == p.values);
  FlatParams h{{0.25, 1.0}, p.layout};
  FlatParams both{{2.25, -1.0}, p.layout};
  const Vector once = sgd_step(p, both, 0.1).values;
  const Vector twice = sgd_step(sgd_step(p, g, 0.1), h, 0.1).values;
  for (std::size_t i = 0; i < 2; ++i) CHECK(once[i] == doctest::Approx(twice[i]).epsilon(1e-15));

  // f(x) = 1/2 x^T diag(1, 4) x descends for lr < 2/4.
  FlatParams x{{3.0, -2.0}, p.layout};
  double prev = 1e300;
  for (int it = 0; it < 20; ++it) {
    const double f = 0.5 * (x.values[0] * x.values[0] + 4 * x.values[1] * x.values[1]);
    CHECK(f < prev);
    prev = f;
    x = sgd_step(x, FlatParams{{x.values[0], 4 * x.values[1]}, p.layout}, 0.3);
  }
  CHECK_THROWS_AS(sgd_step(p, FlatParams{{1.0}, {{"w", 1, 1, 0}}}, 0.1), ShapeError);
}

TEST_CASE("flatten round trip and layout") {
  const MLPParams p = init_params(small_arch(), 7);
  const FlatParams f = flatten(p);
  CHECK(flatten(unflatten(f)).values == f.values);
  CHECK(f.layout == flatten(init_params(small_arch(), 8)).layout);
  CHECK(flat_params_from_json(flat_params_to_json(f)).values == f.values);

  const MLPParams q = init_params(small_arch(), 8);
  double per_layer = 0.0;
  const auto add = [&](const Matrix& a, const Matrix& b) {
    for (std::size_t i = 0; i < a.size(); ++i) per_layer += std::pow(a.data()[i] - b.data()[i], 2);
  };
  for (std::size_t l = 0; l < p.extractor.size(); ++l) {
    add(p.extractor[l].weight, q.extractor[l].weight);
    add(Matrix::row_vector(p.extractor[l].bias), Matrix::row_vector(q.extractor[l].bias));
  }
  for (std::size_t l = 0; l < p.predictor.size(); ++l) {
    add(p.predictor[l].weight, q.predictor[l].weight);
    add(Matrix::row_vector(p.predictor[l].bias), Matrix::row_vector(q.predictor[l].bias));
  }
  for (std::size_t l = 0; l < p.lra.size(); ++l) {
    add(p.lra[l].message, q.lra[l].message);
    add(p.lra[l].receive, q.lra[l].receive);
    add(p.lra[l].send, q.lra[l].send);
  }
  const FlatParams fq = flatten(q);
  Vector diff(f.size());
  for (std::size_t i = 0; i < f.size(); ++i) diff[i] = f.values[i] - fq.values[i];
  CHECK(norm2(diff) == doctest::Approx(std::sqrt(per_layer)).epsilon(1e-14));
}

TEST_CASE("mismatched layers are rejected") {
  MLPParams p = init_params(small_arch(), 1);
  p.extractor[1].weight = Matrix(4, 4);
  CHECK_THROWS_AS(validate(p), ShapeError);
}

TEST_CASE("MLP gradients pass central differences") {
  Architecture arch = small_arch();
  arch.mp_steps = 0;
  const MLPParams p = init_params(arch, 9);
  Rng rng(3);
  const Matrix x = oracle::random_matrix(rng, 5, 3);
  const std::vector<int> y{0, 2, 1, 1, 0};
  const auto loss_of = [&](const Vector& v) {
    FlatParams f = flatten(p);
    f.values = v;
    const MLPParams q = unflatten(f);
    return cross_entropy(predict(q, feature_extract(q, x)), y);
  };
  Tape tape;
  const ParamNodes nodes = register_params(tape, p);
  cross_entropy(tape, predict(tape, nodes, feature_extract(tape, nodes, tape.constant(x))), y);
  tape.backward();
  const Vector analytic = flatten(collect_gradients(tape, nodes)).values;
  const Vector numeric = oracle::central_differences(loss_of, flatten(p).values);
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) worst = std::max(worst, oracle::rel_err(analytic[i], numeric[i], 1e-4));
  CHECK(worst <= 1e-4);
}

}  // TEST_SUITE
