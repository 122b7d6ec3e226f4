#include <cmath>
#include <numeric>
#include <sstream>

#include "doctest.h"
#include "fedrane/federation.hpp"
#include "oracles.hpp"

using namespace fedrane;
using namespace fedrane::federation;

namespace {

RunConfig tiny(bool lra) {
  RunConfig c;
  c.k = 3;
  c.rounds = 2;
  c.local_epochs = 1;
  c.batch_size = 16;
  c.lr = 0.1;
  c.mp_steps = 1;
  c.lra_enabled = lra;
  c.extractor_hidden = {8};
  c.embedding_dim = 6;
  c.predictor_hidden = {8};
  c.dataset = {"", 3, 4, 30, 0.5};
  return c;
}

data::Partition everything(const data::Dataset& ds) {
  data::Partition p;
  p.indices.resize(ds.size());
  std::iota(p.indices.begin(), p.indices.end(), 0);
  p.train_indices = p.indices;
  return p;
}

model::FlatParams flat(Vector v) {
  const std::size_t n = v.size();
  return {std::move(v), {{"w", 1, n, 0}}};
}

model::FlatParams initial(const RunConfig& c, const data::Dataset& ds, std::uint64_t seed = 1) {
  return model::flatten(model::init_params(c.architecture(ds.dim(), static_cast<std::size_t>(ds.num_classes())), seed));
}

}  // namespace

TEST_SUITE("federation") {

TEST_CASE("config validation") {
  CHECK_NOTHROW(RunConfig{}.validate());
  RunConfig c;
  c.k = 0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = RunConfig{};
  c.lr = -1.0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = RunConfig{};
  c.tau1 = 1.5;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  CHECK(parse_aggregator("fedavg") == Aggregator::kFedAvg);
  CHECK(to_string(Aggregator::kGne) == "gne");
  CHECK_THROWS_AS(parse_aggregator("mean"), std::invalid_argument);
}

TEST_CASE("client with no epochs returns the global model") {
  RunConfig c = tiny(true);
  c.local_epochs = 0;
  const data::Dataset ds = load_dataset(c);
  const model::FlatParams theta = initial(c, ds);
  CHECK(client_execute(0, 1, theta, c, everything(ds), ds).params.values == theta.values);
}

TEST_CASE("client training is deterministic") {
  const RunConfig c = tiny(true);
  const data::Dataset ds = load_dataset(c);
  const model::FlatParams theta = initial(c, ds);
  const ClientUpdate a = client_execute(2, 3, theta, c, everything(ds), ds);
  const ClientUpdate b = client_execute(2, 3, theta, c, everything(ds), ds);
  CHECK(a.params.values == b.params.values);
  CHECK(a.params.values != client_execute(2, 4, theta, c, everything(ds), ds).params.values);
}

TEST_CASE("training lowers the loss on separable data") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    RunConfig c = tiny(true);
    c.dataset = {"", 2, 4, 40, 0.1};
    c.lr = 0.05;
    c.seed = seed;
    c.local_epochs = 5;
    const data::Dataset ds = load_dataset(c);
    const data::Partition all = everything(ds);
    const model::FlatParams theta = initial(c, ds, seed);
    const double before = evaluate_loss(model::unflatten(theta), ds, all.indices, c);
    const ClientUpdate u = client_execute(0, 0, theta, c, all, ds);
    CHECK(evaluate_loss(model::unflatten(u.params), ds, all.indices, c) < before);
    CHECK(u.epoch_loss.back() < u.epoch_loss.front());
    CHECK(u.epoch_loss.size() == 5);
  }
}

TEST_CASE("batches of one are skipped") {
  RunConfig c = tiny(false);
  c.batch_size = 4;
  const data::Dataset ds = load_dataset(c);
  data::Partition p;
  p.train_indices = {0, 1, 2, 3, 4};
  const ClientUpdate u = client_execute(0, 0, initial(c, ds), c, p, ds);
  CHECK(u.batches == 1);
}

TEST_CASE("server aggregation paths") {
  RunConfig c = tiny(false);
  c.aggregator = Aggregator::kFedAvg;
  const std::vector<std::size_t> counts{3, 1};
  const model::FlatParams theta = flat({1, 1});
  const std::vector<model::FlatParams> same{theta, theta};
  CHECK(server_execute(theta, same, counts, c).theta.values == theta.values);
  const std::vector<model::FlatParams> moved{flat({3, 1}), flat({1, 0})};
  const ServerResult avg = server_execute(theta, moved, counts, c);
  CHECK(avg.theta.values[0] == doctest::Approx(1 + 0.75 * 2).epsilon(1e-15));
  CHECK(avg.theta.values[1] == doctest::Approx(1 - 0.25).epsilon(1e-15));
  CHECK(avg.residual == -1.0);

  c.aggregator = Aggregator::kGne;
  const std::vector<model::FlatParams> one{flat({4, 5})};
  const std::vector<std::size_t> one_count{1};
  const ServerResult single = server_execute(theta, one, one_count, c);
  CHECK(std::abs(single.theta.values[0] - 1.6) <= 1e-6);
  CHECK(std::abs(single.theta.values[1] - 1.8) <= 1e-6);
  const std::vector<model::FlatParams> unit{flat({2, 1}), flat({1, 2})};
  const ServerResult both = server_execute(theta, unit, counts, c);
  CHECK(std::abs(both.theta.values[0] - 2.0) <= 1e-6);
  CHECK(std::abs(both.theta.values[1] - 2.0) <= 1e-6);
  CHECK(both.residual <= 1e-4);
  CHECK_THROWS_AS(server_execute(theta, same, one_count, c), std::invalid_argument);
}

TEST_CASE("cosine diagnostic") {
  gne::DeviationMatrix d{Matrix::from_rows({{1, 0, 0}, {0, 2, 0}}), {}};
  const Vector cos = cosine_diagnostic(d, Vector{1, 0});
  CHECK(cos[0] == doctest::Approx(1.0));
  CHECK(cos[1] == doctest::Approx(0.0));
  CHECK(cos[2] == 0.0);
  CHECK_THROWS(cosine_diagnostic(d, Vector{0, 0}));
}

TEST_CASE("zero rounds reports the initial model") {
  RunConfig c = tiny(false);
  c.rounds = 0;
  const RunResult r = run(c);
  REQUIRE(r.rounds.size() == 1);
  CHECK(r.rounds[0].round == 0);
  CHECK(r.rounds[0].bargain_residual == -1.0);
}

TEST_CASE("plain fedavg round equals the weighted mean update") {
  RunConfig c = tiny(false);
  c.aggregator = Aggregator::kFedAvg;
  c.rounds = 1;
  const RunResult r = run(c);
  const Vector& p = r.rounds[1].p;
  CHECK(std::abs(std::accumulate(p.begin(), p.end(), 0.0) - 1.0) <= 1e-12);
  c.rounds = 2;
  CHECK(run(c).rounds[1].gfl_accuracy == r.rounds[1].gfl_accuracy);
}

TEST_CASE("runs are deterministic and metrics are consistent") {
  for (bool lra : {false, true}) {
    const RunConfig c = tiny(lra);
    const RunResult a = run(c);
    const RunResult b = run(c);
    std::ostringstream sa, sb;
    write_metrics_csv(sa, a.rounds);
    write_metrics_csv(sb, b.rounds);
    CHECK(sa.str() == sb.str());
    CHECK(a.final_params.values == b.final_params.values);
    REQUIRE(a.rounds.size() == 3);
    for (const RoundMetrics& m : a.rounds) {
      const double mean = std::accumulate(m.per_client_accuracy.begin(), m.per_client_accuracy.end(), 0.0) /
                          static_cast<double>(m.per_client_accuracy.size());
      CHECK(m.pfl_accuracy == doctest::Approx(mean).epsilon(1e-15));
      if (m.round > 0) CHECK((m.bargain_residual <= 1e-4 || !m.converged));
      CHECK(m.cosine.size() == c.k);
    }
  }
}

TEST_CASE("metrics outputs") {
  const RunConfig c = tiny(false);
  const RunResult r = run(c);
  std::ostringstream csv;
  write_metrics_csv(csv, r.rounds);
  const std::string text = csv.str();
  CHECK(text.rfind("round,gfl,pfl,residual,converged,min_cosine,mean_cosine\n", 0) == 0);
  CHECK(std::count(text.begin(), text.end(), '\n') == 4);
  const std::string json = metrics_to_json(c, r.rounds);
  CHECK(json.find("\"variant\": \"gne\"") != std::string::npos);
}

}  // TEST_SUITE
