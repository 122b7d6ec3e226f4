#include <cmath>

#include "doctest.h"
#include "fedrane/lra.hpp"
#include "oracles.hpp"

using namespace fedrane;
using namespace fedrane::lra;

namespace {

CorrelationMatrix random_correlation(Rng& rng, std::size_t n, std::size_t d) {
  return pearson_matrix(oracle::random_matrix(rng, n, d));
}

Matrix zero_diag_perturbation(Rng& rng, const Matrix& b, double radius) {
  Matrix out = b;
  for (std::size_t i = 0; i < b.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j)
      if (i != j) out(i, j) += rng.uniform(-radius, radius);
  return out;
}

model::Architecture lra_arch(std::size_t steps) {
  model::Architecture a;
  a.input_dim = 3;
  a.extractor_hidden = {6};
  a.embedding_dim = 8;
  a.predictor_hidden = {5};
  a.classes = 2;
  a.mp_steps = steps;
  return a;
}

}  // namespace

TEST_SUITE("lra") {

TEST_CASE("pearson matrix anchors") {
  const Matrix same = Matrix::from_rows({{1, 2, 4}, {1, 2, 4}});
  CHECK(pearson_matrix(same).values(0, 1) == doctest::Approx(1.0));
  const Matrix neg = Matrix::from_rows({{1, 2, 4}, {-1, -2, -4}});
  CHECK(pearson_matrix(neg).values(0, 1) == doctest::Approx(-1.0));
  Rng rng(1);
  const Matrix z = oracle::random_matrix(rng, 4, 6);
  const Matrix p = pearson_matrix(z).values;
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(p(i, i) == 1.0);
    for (std::size_t j = 0; j < 4; ++j) {
      CHECK(p(i, j) == p(j, i));
      if (i != j) CHECK(p(i, j) == doctest::Approx(oracle::pearson(z.row(i), z.row(j))).epsilon(1e-10));
    }
  }
  const Matrix flat = Matrix::from_rows({{2, 2, 2}, {1, 0, 3}});
  CHECK(pearson_matrix(flat).values(0, 1) == 0.0);
}

TEST_CASE("slim returns a zero diagonal and is deterministic") {
  Rng rng(2);
  for (std::size_t n : {2, 3, 5, 9}) {
    const CorrelationMatrix p = random_correlation(rng, n, 7);
    const SlimResult r = slim_solve(p);
    for (std::size_t i = 0; i < n; ++i) CHECK(r.b(i, i) == 0.0);
    CHECK(slim_solve(p).b == r.b);
  }
  CHECK_THROWS_AS(slim_solve(random_correlation(rng, 3, 4), SlimOptions{0.0}), std::invalid_argument);
}

TEST_CASE("slim objective never increases") {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const SlimResult r = slim_solve(random_correlation(rng, 4, 6));
    for (std::size_t i = 1; i < r.objective.size(); ++i)
      CHECK(r.objective[i] <= r.objective[i - 1] + 1e-9 * std::max(1.0, std::abs(r.objective[i - 1])));
  }
}

TEST_CASE("slim solution beats nearby zero-diagonal matrices") {
  Rng rng(4);
  const Matrix samples = Matrix::from_rows({{1.0, 0.9, 1.2, 0.1}, {0.8, 1.0, 1.1, 0.3}, {0.2, 0.1, 1.4, 0.9}});
  const CorrelationMatrix p = pearson_matrix(samples);
  const SlimResult r = slim_solve(p, SlimOptions{0.1});
  const double best = slim_objective(p.values, r.b, 0.1);
  int wins = 0;
  for (int t = 0; t < 200; ++t) wins += best <= slim_objective(p.values, zero_diag_perturbation(rng, r.b, 0.05), 0.1);
  CHECK(wins == 200);
}

TEST_CASE("slim update with identity weighting") {
  // With Phi = c I the zero-diagonal solution is B_ij = -H_ij / H_jj for
  // H = (P^T P + 2 lambda c I)^(-1), the classic closed form.
  Rng rng(5);
  const Matrix p = random_correlation(rng, 4, 6).values;
  const Matrix phi = Matrix::identity(4) * 3.0;
  const Matrix b = slim_update(p, phi, 0.1);
  Matrix sys = oracle::naive_mul(oracle::naive_transpose(p), p);
  for (std::size_t i = 0; i < 4; ++i) sys(i, i) += 0.6;
  Matrix h(4, 4);
  for (std::size_t c = 0; c < 4; ++c) {
    Vector e(4, 0.0);
    e[c] = 1.0;
    const Vector col = oracle::gauss_solve(sys, e);
    for (std::size_t r = 0; r < 4; ++r) h(r, c) = col[r];
  }
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j)
      CHECK(b(i, j) == doctest::Approx(i == j ? 0.0 : -h(i, j) / h(j, j)).epsilon(1e-9));
}

TEST_CASE("graph construction") {
  const RelationalGraph empty = build_graph(Matrix(3, 3));
  CHECK(empty.adjacency == Matrix(3, 3));
  CHECK(empty.laplacian == Matrix(3, 3));
  Matrix b(3, 3);
  b(0, 1) = 2.0;
  b(1, 0) = -4.0;
  const RelationalGraph g = build_graph(b);
  CHECK(g.adjacency(0, 1) == 3.0);
  CHECK(g.adjacency(1, 0) == 3.0);
  Rng rng(6);
  Matrix r = oracle::random_matrix(rng, 6, 6);
  for (std::size_t i = 0; i < 6; ++i) r(i, i) = 0.0;
  const RelationalGraph rg = build_graph(r);
  for (std::size_t i = 0; i < 6; ++i) {
    double s = 0.0;
    for (double v : rg.laplacian.row(i)) s += v;
    CHECK(std::abs(s) <= 1e-10);
  }
  CHECK_THROWS_AS(build_graph(Matrix::identity(2)), std::invalid_argument);
}

TEST_CASE("attention weights") {
  Matrix h(2, 4);
  h(0, 0) = h(1, 0) = 1.0;
  const Matrix full(2, 2, 1.0);
  const Matrix a = attention_weights(h, Matrix::identity(4), Matrix::identity(4), full, 4, false);
  for (double v : a.data()) CHECK(v == doctest::Approx(0.5));
  CHECK(attention_weights(h, Matrix(4, 4), Matrix::identity(4), full, 4, false) == Matrix(2, 2));

  Rng rng(7);
  const Matrix hr = oracle::random_matrix(rng, 5, 3);
  Matrix adj(5, 5);
  adj(0, 3) = adj(3, 0) = 0.5;
  adj(1, 2) = adj(2, 1) = 1e-4;
  const Matrix s = attention_weights(hr, oracle::random_matrix(rng, 3, 3), oracle::random_matrix(rng, 3, 3), adj, 3, true);
  for (std::size_t i = 0; i < 5; ++i) {
    double total = 0.0;
    for (double v : s.row(i)) total += v;
    CHECK(total == doctest::Approx(1.0).epsilon(1e-10));
  }
  CHECK(s(1, 2) == 0.0);
  CHECK(s(0, 3) > 0.0);
}

TEST_CASE("message passing") {
  Rng rng(8);
  const Matrix z = oracle::random_matrix(rng, 3, 2);
  const RelationalGraph g = build_graph(Matrix(3, 3));
  CHECK(message_passing(z, g, {}, 0) == z);

  // One node, W = I, receive = send = I and |z|^2 = sqrt(d) so alpha_11 = 1.
  const double c = std::pow(2.0, 0.25) / std::sqrt(2.0);
  const Matrix one = Matrix::from_rows({{c, c}});
  const std::vector<model::LraStepWeights> id{{Matrix::identity(2), Matrix::identity(2), Matrix::identity(2)}};
  CHECK(max_abs_diff(message_passing(one, build_graph(Matrix(1, 1)), id, 1), one) < 1e-14);

  // Two nodes joined by an edge, hand evaluated.
  const Matrix h = Matrix::from_rows({{1.0, 2.0}, {-1.0, 0.5}});
  const model::LraStepWeights w{Matrix::from_rows({{0.5, 1.0}, {0.0, -1.0}}), Matrix::from_rows({{1.0, 0.0}, {1.0, 1.0}}),
                                Matrix::from_rows({{0.0, 2.0}, {1.0, 0.0}})};
  Matrix b(2, 2);
  b(0, 1) = 0.3;
  // h Wm = [[3, 2], [-0.5, 0.5]], h Wn = [[2, 2], [0.5, -2]], h W = [[0.5, -1], [-0.5, -1.5]]
  const double r2 = std::sqrt(2.0);
  const double a00 = (3 * 2 + 2 * 2) / r2, a01 = (3 * 0.5 + 2 * -2) / r2;
  const double a10 = (-0.5 * 2 + 0.5 * 2) / r2, a11 = (-0.5 * 0.5 + 0.5 * -2) / r2;
  const Matrix expect = Matrix::from_rows({{a00 * 0.5 + a01 * -0.5, a00 * -1 + a01 * -1.5},
                                           {a10 * 0.5 + a11 * -0.5, a10 * -1 + a11 * -1.5}});
  const std::vector<model::LraStepWeights> ws{w};
  CHECK(max_abs_diff(message_passing(h, build_graph(b), ws, 1), expect) < 1e-14);
  CHECK_THROWS_AS(message_passing(h, build_graph(b), ws, 2), ShapeError);
}

TEST_CASE("contrastive loss anchors") {
  const Matrix row = Matrix::from_rows({{1.0, -2.0, 0.5}, {1.0, -2.0, 0.5}});
  for (double tau : {0.1, 0.5, 0.8, 1.0}) CHECK(std::abs(contrastive_loss(row, row, tau) - std::log(3.0)) <= 1e-10);
  const Matrix z = Matrix::from_rows({{1.0, -1.0, 0.0, 0.0}, {0.0, 0.0, 1.0, -1.0}});
  CHECK(std::abs(contrastive_loss(z, z, 1.0) - std::log(1.0 + 2.0 / std::exp(1.0))) <= 1e-10);

  Rng rng(9);
  const Matrix a = oracle::random_matrix(rng, 4, 5);
  const Matrix t = oracle::random_matrix(rng, 4, 5);
  CHECK(contrastive_loss(a * 3.7, t * 3.7, 0.8) == doctest::Approx(contrastive_loss(a, t, 0.8)).epsilon(1e-12));
  CHECK_THROWS_AS(contrastive_loss(a, t, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(contrastive_loss(a, oracle::random_matrix(rng, 3, 5), 0.8), ShapeError);
}

TEST_CASE("contrastive loss falls as the augmentation approaches the anchor") {
  Rng rng(10);
  for (int trial = 0; trial < 10; ++trial) {
    const Matrix z = oracle::random_matrix(rng, 4, 6);
    const Matrix far = oracle::random_matrix(rng, 4, 6);
    double prev = 1e300;
    for (int s = 0; s <= 4; ++s) {
      const double w = s / 4.0;
      const double l = contrastive_loss(z, far * (1.0 - w) + z * w, 0.8);
      CHECK(l < prev);
      prev = l;
    }
  }
}

TEST_CASE("lra forward pass") {
  Rng rng(11);
  const Matrix x = oracle::random_matrix(rng, 4, 3);
  const model::MLPParams p0 = model::init_params(lra_arch(0), 1);
  Tape t0;
  const LraNodes n0 = lra_forward(t0, model::register_params(t0, p0), t0.constant(x), LraOptions{0.1, 0.8, 0});
  CHECK(t0.value(n0.z_tilde) == t0.value(n0.z));
  CHECK(std::isfinite(t0.value(n0.cd_loss)(0, 0)));

  const model::MLPParams p = model::init_params(lra_arch(2), 2);
  const auto once = [&] {
    Tape t;
    GraphDump dump;
    const LraNodes n = lra_forward(t, model::register_params(t, p), t.constant(x), LraOptions{}, &dump);
    return std::pair{t.value(n.z_tilde), dump.b};
  };
  CHECK(once() == once());
}

TEST_CASE("lra gradients pass central differences") {
  Rng rng(12);
  const Matrix x = oracle::random_matrix(rng, 4, 3);
  const std::vector<int> y{0, 1, 1, 0};
  for (bool softmax : {false, true}) {
    const model::MLPParams p = model::init_params(lra_arch(2), 3);
    LraOptions opts;
    opts.attention_softmax = softmax;
    const auto loss_of = [&](const Vector& v) {
      model::FlatParams f = model::flatten(p);
      f.values = v;
      const model::MLPParams q = model::unflatten(f);
      Tape t;
      const model::ParamNodes nodes = model::register_params(t, q);
      const LraNodes n = lra_forward(t, nodes, t.constant(x), opts);
      const NodeId ce = model::cross_entropy(t, model::predict(t, nodes, n.z_tilde), y);
      return t.value(model::total_loss(t, ce, n.cd_loss, 0.2))(0, 0);
    };
    Tape t;
    const model::ParamNodes nodes = model::register_params(t, p);
    const LraNodes n = lra_forward(t, nodes, t.constant(x), opts);
    model::total_loss(t, model::cross_entropy(t, model::predict(t, nodes, n.z_tilde), y), n.cd_loss, 0.2);
    t.backward();
    const Vector analytic = model::flatten(model::collect_gradients(t, nodes)).values;
    const Vector numeric = oracle::central_differences(loss_of, model::flatten(p).values);
    double worst = 0.0;
    for (std::size_t i = 0; i < analytic.size(); ++i)
      worst = std::max(worst, oracle::rel_err(analytic[i], numeric[i], 1e-4));
    CHECK(worst <= 1e-3);
  }
}

}  // TEST_SUITE
