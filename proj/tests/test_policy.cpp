#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>

#include "hitmac/policy.hpp"

using namespace hitmac;

namespace {

Observation random_observation(int n, int m, Rng& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Observation o(n, m);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < m; ++j) {
      o.at(i, j) = {static_cast<double>(i + 1) / n, static_cast<double>(j + 1) / m, std::abs(u(rng)) * 2.0,
                    u(rng)};
    }
  }
  return o;
}

Matrix random_matrix(Eigen::Index r, Eigen::Index c, Rng& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

}  // namespace

TEST_CASE("coordinator encoding shapes") {
  Rng rng(1);
  CoordinatorNet net(rng);
  Tape tape(false);
  Var h1 = net.encode(tape, random_observation(1, 1, rng));
  CHECK(tape.value(h1).rows() == 1);
  CHECK(tape.value(h1).cols() == 128);
  Var h20 = net.encode(tape, random_observation(4, 5, rng));
  CHECK(tape.value(h20).rows() == 20);
  CHECK(tape.value(h20).cols() == 128);
}

TEST_CASE("flattening puts the target index fastest") {
  Rng rng(2);
  const Observation o = random_observation(2, 3, rng);
  const Matrix flat = flatten_observation(o);
  CHECK(flat(4, 3) == o.at(1, 1)[3]);
  CHECK(flat(2, 0) == o.at(0, 2)[0]);
}

TEST_CASE("permuting pair order permutes the encoding") {
  Rng rng(3);
  CoordinatorNet net(rng, 32);
  const Matrix flat = flatten_observation(random_observation(3, 4, rng));
  std::vector<int> perm(12);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  Matrix permuted(12, 4);
  for (int r = 0; r < 12; ++r) permuted.row(r) = flat.row(perm[r]);
  Tape tape(false);
  const Matrix h = tape.value(net.encode_rows(tape, tape.constant(flat)));
  const Matrix hp = tape.value(net.encode_rows(tape, tape.constant(permuted)));
  for (int r = 0; r < 12; ++r) CHECK((hp.row(r) - h.row(perm[r])).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("coordinator_act examples") {
  Rng rng(4);
  GoalSample s = coordinator_act(Matrix::Ones(6, 1), 2, 3, rng);
  CHECK(s.goals.count() == 6);
  CHECK(s.log_prob == 0.0);

  Rng a(9);
  Rng b(9);
  const Matrix p = Matrix::Constant(20, 1, 0.5);
  const GoalSample sa = coordinator_act(p, 4, 5, a);
  const GoalSample sb = coordinator_act(p, 4, 5, b);
  CHECK(sa.goals == sb.goals);
  CHECK(sa.log_prob == doctest::Approx(20.0 * std::log(0.5)).epsilon(1e-12));

  Matrix q(2, 1);
  q << 0.7, 0.2;
  const GoalSample greedy = coordinator_act(q, 1, 2, rng, true);
  CHECK(greedy.goals(0, 0));
  CHECK_FALSE(greedy.goals(0, 1));
  CHECK_THROWS_AS(coordinator_act(q, 2, 2, rng), ShapeError);
}

TEST_CASE("goal log-probabilities form a distribution") {
  Rng rng(5);
  for (int nm : {1, 4, 6, 8}) {
    const Matrix logits = random_matrix(nm, 1, rng) * 3.0;
    double total = 0.0;
    for (int code = 0; code < (1 << nm); ++code) {
      GoalMap g(1, nm);
      double direct = 1.0;
      for (int j = 0; j < nm; ++j) {
        const bool bit = (code >> j) & 1;
        g.set(0, j, bit);
        const double p = 1.0 / (1.0 + std::exp(-logits(j, 0)));
        direct *= bit ? p : 1.0 - p;
      }
      Tape tape(false);
      const double lp = tape.item(goal_log_prob(tape, tape.constant(logits), g));
      CHECK(std::abs(std::exp(lp) - direct) < 1e-12);
      total += std::exp(lp);
    }
    CHECK(std::abs(total - 1.0) < 1e-9);
  }
}

TEST_CASE("sampled log-prob agrees with the differentiable one") {
  Rng rng(6);
  const Matrix logits = random_matrix(6, 1, rng);
  Tape tape(false);
  const Matrix probs = tape.value(tape.sigmoid(tape.constant(logits)));
  const GoalSample s = coordinator_act(probs, 2, 3, rng);
  CHECK(tape.item(goal_log_prob(tape, tape.constant(logits), s.goals)) ==
        doctest::Approx(s.log_prob).epsilon(1e-12));
}

TEST_CASE("Bernoulli entropy of zero logits") {
  Tape tape(false);
  CHECK(tape.item(goal_entropy(tape, tape.constant(Matrix::Zero(5, 1)))) ==
        doctest::Approx(5.0 * std::log(2.0)));
}

TEST_CASE("AMC value is the sum of contributions") {
  Rng rng(7);
  CoordinatorNet net(rng, 16);
  for (int l : {1, 2, 5, 9}) {
    Tape tape(false);
    Var h = tape.constant(random_matrix(l, 16, rng));
    const auto amc = net.amc_value(tape, h);
    CHECK(tape.value(amc.contributions).rows() == l);
    CHECK(std::abs(tape.item(amc.value) - tape.value(amc.contributions).sum()) < 1e-12);
    const auto again = net.amc_value(tape, h);
    CHECK(tape.value(again.contributions) == tape.value(amc.contributions));
  }
}

TEST_CASE("AMC with one member is phi of zero context and h") {
  Rng rng(8);
  CoordinatorNet net(rng, 16);
  const Matrix h = random_matrix(1, 16, rng);
  Tape tape(false);
  const auto amc = net.amc_value(tape, tape.constant(h));
  const auto& phi = net.contribution_head();
  Matrix input(1, 32);
  input << Matrix::Zero(1, 16), h;
  const double expected =
      (input * net.params()[phi.weight].data + net.params()[phi.bias].data)(0, 0);
  CHECK(tape.item(amc.value) == doctest::Approx(expected).epsilon(1e-13));
}

TEST_CASE("AMC follows the coalition recursion step by step") {
  Rng rng(9);
  CoordinatorNet net(rng, 16);
  const Matrix h = random_matrix(3, 16, rng);
  const ParamStore& p = net.params();
  const auto& att = net.critic_attention();
  const auto& phi = net.contribution_head();

  // Independent unrolled trace with plain matrices.
  auto attention = [&](const Matrix& x) {
    const Matrix q = (x * p[att.w_q].data).array().tanh().matrix();
    const Matrix k = (x * p[att.w_k].data).array().tanh().matrix();
    const Matrix v = (x * p[att.w_v].data).array().tanh().matrix();
    Matrix s = q * k.transpose() / std::sqrt(16.0);
    for (Eigen::Index r = 0; r < s.rows(); ++r) {
      s.row(r) = (s.row(r).array() - s.row(r).maxCoeff()).exp().matrix();
      s.row(r) /= s.row(r).sum();
    }
    return Matrix(s * v);
  };
  auto contribution = [&](const Matrix& eta, const Matrix& he) {
    Matrix in(1, 32);
    in << eta, he;
    return (in * p[phi.weight].data + p[phi.bias].data)(0, 0);
  };
  Matrix eta = Matrix::Zero(1, 16);
  std::vector<double> expected;
  std::vector<Matrix> etas;
  for (int e = 0; e < 3; ++e) {
    etas.push_back(eta);
    expected.push_back(contribution(eta, h.row(e)));
    eta = attention(h.topRows(e + 1)).colwise().sum();
  }

  Tape tape(false);
  const auto amc = net.amc_value(tape, tape.constant(h));
  for (int e = 0; e < 3; ++e) {
    CHECK((tape.value(amc.coalition_features[e]) - etas[e]).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(std::abs(tape.value(amc.contributions)(e, 0) - expected[e]) < 1e-12);
  }
  CHECK(std::abs(tape.item(amc.value) - (expected[0] + expected[1] + expected[2])) < 1e-12);
}

TEST_CASE("AMC rejects an empty state") {
  Rng rng(10);
  CoordinatorNet net(rng, 8);
  Tape tape(false);
  CHECK_THROWS_AS(net.amc_value(tape, tape.constant(Matrix::Zero(0, 8))), std::invalid_argument);
}

TEST_CASE("goal filter") {
  const std::vector<Observation::Entry> rows{{1, 1, 1, 1}, {2, 2, 2, 2}, {3, 3, 3, 3}};
  const std::vector<std::uint8_t> mask{1, 0, 1};
  const auto f = goal_filter(rows, mask);
  REQUIRE(f.size() == 2);
  CHECK(f[0] == rows[0]);
  CHECK(f[1] == rows[2]);

  const std::vector<std::uint8_t> all{1, 1, 1};
  CHECK(goal_filter(rows, all) == rows);
  const std::vector<std::uint8_t> none{0, 0, 0};
  CHECK(goal_filter(rows, none).empty());

  // filtering twice with the same mask changes nothing
  const auto twice = goal_filter(goal_filter(rows, all), all);
  CHECK(twice == goal_filter(rows, all));

  const std::vector<std::uint8_t> short_mask{1, 0};
  CHECK_THROWS_AS(goal_filter(rows, short_mask), ShapeError);
}

TEST_CASE("executor decisions") {
  Rng rng(11);
  ExecutorNet net(rng);
  const ExecutorDecision empty = executor_act(net, {}, rng);
  CHECK(empty.action == 0);
  CHECK(empty.log_prob == 0.0);
  CHECK(empty.value == 0.0);
  CHECK(empty.empty_goal);

  const Observation o = random_observation(1, 4, rng);
  const auto rows = std::vector<Observation::Entry>(o.row(0).begin(), o.row(0).end());
  Rng a(3);
  Rng b(3);
  CHECK(executor_act(net, rows, a).action == executor_act(net, rows, b).action);

  for (int trial = 0; trial < 50; ++trial) {
    const Observation r = random_observation(1, 1 + trial % 5, rng);
    const auto d = executor_act(net, r.row(0), rng);
    CHECK(std::abs(d.probs[0] + d.probs[1] + d.probs[2] - 1.0) < 1e-12);
  }
}

TEST_CASE("executor policy ignores the order of its target rows") {
  Rng rng(12);
  ExecutorNet net(rng);
  for (int trial = 0; trial < 20; ++trial) {
    const Observation o = random_observation(1, 2 + trial % 4, rng);
    std::vector<Observation::Entry> rows(o.row(0).begin(), o.row(0).end());
    std::vector<Observation::Entry> shuffled = rows;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    Rng a(1);
    Rng b(1);
    const auto d1 = executor_act(net, rows, a, true);
    const auto d2 = executor_act(net, shuffled, b, true);
    for (int k = 0; k < 3; ++k) CHECK(std::abs(d1.probs[k] - d2.probs[k]) < 1e-9);
    CHECK(std::abs(d1.value - d2.value) < 1e-9);
  }
}

TEST_CASE("checkpoint round trip") {
  Rng rng(13);
  CoordinatorNet a(rng, 8);
  const auto path = std::filesystem::temp_directory_path() / "hitmac_policy_ckpt.json";
  save_checkpoint(path.string(), a.params(), "coordinator", 8, "m1");
  const auto doc = read_checkpoint(path.string());
  CHECK(doc.at("manifest") == "m1");
  CHECK(doc.at("params").contains("coordinator.encoder.fc1.weight"));
  Rng other(99);
  CoordinatorNet b(other, 8);
  load_checkpoint(doc, b.params(), "coordinator");
  for (std::size_t i = 0; i < a.params().size(); ++i) CHECK(a.params()[i].data == b.params()[i].data);
  ExecutorNet e(other, 8);
  CHECK_THROWS_AS(load_checkpoint(doc, e.params(), "executor"), std::invalid_argument);
  std::filesystem::remove(path);
}
