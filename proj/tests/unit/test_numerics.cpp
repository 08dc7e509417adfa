#include <doctest.h>

#include <cmath>
#include <numbers>

#include "dal/error.hpp"
#include "dal/gradcheck.hpp"
#include "dal/rng.hpp"
#include "dal/tape.hpp"
#include "dal/tensor.hpp"
#include "oracles/oracles.hpp"

using dal::Rng;
using dal::num::NodeId;
using dal::num::Tape;
using dal::num::Tensor;

namespace {

Tensor randn(dal::num::Shape shape, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.storage()) v = scale * rng.normal();
  return t;
}

}  // namespace

TEST_SUITE("tensor") {
  TEST_CASE("construction validates shape and values") {
    CHECK_THROWS_AS(Tensor({2, 0}), dal::ShapeError);
    CHECK_THROWS_AS(Tensor({2, 2}, std::vector<double>{1, 2, 3}), dal::ShapeError);
    CHECK_THROWS_AS(Tensor({1}, std::vector<double>{NAN}), dal::NumericError);
    CHECK_THROWS_AS(Tensor({1}, std::vector<double>{INFINITY}), dal::NumericError);
    const Tensor m = Tensor::matrix({{1, 2, 3}, {4, 5, 6}});
    CHECK(m.rows() == 2);
    CHECK(m.cols() == 3);
    CHECK(m.at(1, 2) == 6);
  }

  TEST_CASE("matmul of identity") {
    const Tensor x = Tensor::matrix({{1, 2}});
    const Tensor eye = Tensor::matrix({{1, 0}, {0, 1}});
    CHECK(dal::num::matmul(x, eye) == x);
    CHECK_THROWS_AS(dal::num::matmul(x, Tensor::matrix({{1, 2}})), dal::ShapeError);
  }
}

TEST_SUITE("logsumexp") {
  TEST_CASE("closed-form values") {
    const double v[] = {0.0, 0.0};
    CHECK(dal::num::logsumexp(v) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
    const double big[] = {1000.0, 1000.0};
    const double r = dal::num::logsumexp(big);
    CHECK(std::isfinite(r));
    CHECK(std::abs(r - (1000.0 + std::log(2.0))) < 1e-12);
    CHECK_THROWS(dal::num::logsumexp(std::span<const double>{}));
  }

  TEST_CASE("matches the extended-precision oracle") {
    Rng rng(11);
    for (int trial = 0; trial < 200; ++trial) {
      std::vector<double> v(1 + rng.below(40));
      const double scale = trial % 4 == 0 ? 300.0 : 5.0;
      for (auto& x : v) x = scale * rng.normal();
      const double got = dal::num::logsumexp(v);
      const double want = static_cast<double>(oracle::logsumexp_ld(v));
      CHECK(std::abs(got - want) <= 1e-12 * std::max(1.0, std::abs(want)));
    }
  }

  TEST_CASE("shift equivariance") {
    Rng rng(12);
    for (int trial = 0; trial < 50; ++trial) {
      std::vector<double> v(8);
      for (auto& x : v) x = rng.normal();
      const double c = rng.uniform(-50.0, 50.0);
      std::vector<double> w = v;
      for (auto& x : w) x += c;
      CHECK(std::abs(dal::num::logsumexp(w) - dal::num::logsumexp(v) - c) < 1e-12);
    }
  }

  TEST_CASE("row-wise reduction") {
    const Tensor m = Tensor::matrix({{0, 0}, {1, 2}});
    const Tensor r = dal::num::logsumexp(m, 1);
    CHECK(r.size() == 2);
    CHECK(r[0] == doctest::Approx(std::log(2.0)));
    CHECK(r[1] == doctest::Approx(2.0 + std::log1p(std::exp(-1.0))));
    const Tensor c = dal::num::logsumexp(m, 0);
    CHECK(c[0] == doctest::Approx(std::log(1.0 + std::numbers::e)));
  }
}

TEST_SUITE("tape") {
  TEST_CASE("square and its derivative") {
    Tape t;
    const NodeId x = t.leaf(Tensor::scalar(3.0));
    const NodeId y = t.mul(x, x);
    CHECK(t.value(y).item() == 9.0);
    t.backward(y);
    CHECK(t.grad(x).item() == 6.0);
  }

  TEST_CASE("identity linear layer") {
    Tape t;
    const NodeId x = t.leaf(Tensor::matrix({{1, 2}}));
    const NodeId w = t.leaf(Tensor::matrix({{1, 0}, {0, 1}}));
    const NodeId b = t.leaf(Tensor::vector({0, 0}));
    const NodeId y = t.add_row(t.matmul(x, w), b);
    CHECK(t.value(y) == Tensor::matrix({{1, 2}}));
  }

  TEST_CASE("cross-entropy gradient at zero logits") {
    Tape t;
    const NodeId z = t.leaf(Tensor::matrix({{0, 0}}));
    const int labels[] = {0};
    t.backward(t.softmax_cross_entropy(z, labels));
    CHECK(t.grad(z)[0] == doctest::Approx(-0.5).epsilon(1e-15));
    CHECK(t.grad(z)[1] == doctest::Approx(0.5).epsilon(1e-15));
  }

  TEST_CASE("error contracts") {
    Tape t;
    const NodeId x = t.leaf(Tensor::matrix({{1, 2}}));
    CHECK_THROWS_AS(t.grad(x), dal::InvalidArgument);
    CHECK_THROWS_AS(t.backward(x), dal::ShapeError);
    CHECK_THROWS_AS(t.matmul(x, x), dal::ShapeError);
    CHECK_THROWS_AS(t.value(NodeId{99}), dal::InvalidArgument);
    const NodeId huge = t.leaf(Tensor::scalar(1e300));
    CHECK_THROWS_AS(t.mul(huge, huge), dal::NumericError);
    const int bad[] = {5};
    CHECK_THROWS_AS(t.softmax_cross_entropy(x, bad), dal::InvalidArgument);
  }

  TEST_CASE("l1 subgradient at zero is zero") {
    Tape t;
    const NodeId p = t.leaf(Tensor::matrix({{0, -2, 3}}));
    t.backward(t.sum(t.l1_rows(p)));
    CHECK(t.grad(p)[0] == 0.0);
    CHECK(t.grad(p)[1] == -1.0);
    CHECK(t.grad(p)[2] == 1.0);
  }

  TEST_CASE("unreachable leaves get zero gradients, constants none") {
    Tape t;
    const NodeId a = t.leaf(Tensor::scalar(2.0));
    const NodeId b = t.leaf(Tensor::scalar(5.0));
    const NodeId c = t.constant(Tensor::scalar(1.0));
    t.backward(t.mul(a, c));
    CHECK(t.grad(a).item() == 1.0);
    CHECK(t.grad(b).item() == 0.0);
    CHECK_FALSE(t.has_grad(c));
  }

  TEST_CASE("a node used twice accumulates both paths") {
    Tape t;
    const NodeId x = t.leaf(Tensor::scalar(1.5));
    const NodeId y = t.add(t.scale(x, 2.0), t.mul(x, x));
    t.backward(y);
    CHECK(t.grad(x).item() == doctest::Approx(2.0 + 3.0));
  }

  TEST_CASE("backward is deterministic") {
    Rng rng(5);
    const Tensor a = randn({6, 4}, rng), b = randn({4, 3}, rng);
    auto run = [&] {
      Tape t;
      const NodeId x = t.leaf(a), w = t.leaf(b);
      t.backward(t.sum(t.logsumexp_rows(t.relu(t.matmul(x, w)))));
      return std::pair{t.grad(x), t.grad(w)};
    };
    CHECK(run() == run());
  }
}

TEST_SUITE("finite differences") {
  TEST_CASE("every op and the composed DAL paths") {
    const auto cases = dal::gradcheck::standard_cases(3);
    const auto rep = dal::gradcheck::run(cases);
    for (const auto& c : rep.cases) {
      INFO(c.name);
      CHECK(c.passed);
      CHECK(c.max_rel_error <= 1e-5);
    }
  }

  TEST_CASE("2-64-64-8-3 network parameter gradients") {
    Rng rng(21);
    const std::size_t widths[] = {2, 64, 64, 8, 3};
    std::vector<Tensor> inputs;
    for (std::size_t l = 0; l + 1 < std::size(widths); ++l) {
      inputs.push_back(randn({widths[l], widths[l + 1]}, rng, 1.0 / std::sqrt(double(widths[l]))));
      inputs.push_back(randn({widths[l + 1]}, rng, 0.1));
    }
    const Tensor x = randn({5, 2}, rng);
    const std::vector<int> y{0, 1, 2, 0, 1};
    auto c = dal::gradcheck::tape_case(
        "mlp", inputs, [x, y](Tape& t, std::span<const NodeId> p) {
          NodeId h = t.constant(x);
          for (std::size_t l = 0; l < 4; ++l) {
            h = t.add_row(t.matmul(h, p[2 * l]), p[2 * l + 1]);
            if (l < 2) h = t.relu(h);
          }
          return t.softmax_cross_entropy(h, y);
        });
    dal::gradcheck::Options opt;
    opt.step = 1e-5;
    opt.tolerance = 1e-5;
    const auto r = dal::gradcheck::check(c, opt);
    CHECK(r.entries == 2 * 64 + 64 + 64 * 64 + 64 + 64 * 8 + 8 + 8 * 3 + 3);
    CHECK(r.passed);
  }

  TEST_CASE("a corrupted backward rule is caught") {
    Rng rng(4);
    auto c = dal::gradcheck::tape_case(
        "bad_square", {randn({3}, rng)}, [](Tape& t, std::span<const NodeId> x) {
          Tensor v = t.value(x[0]);
          for (auto& e : v.storage()) e = e * e;
          auto wrong = [](const Tensor& up, const Tensor&, std::span<const Tensor* const> in,
                          std::span<Tensor* const> g) {
            for (std::size_t i = 0; i < up.size(); ++i) (*g[0])[i] += up[i] * 2.2 * (*in[0])[i];
          };
          return t.sum(t.custom("bad_square", {x[0]}, std::move(v), wrong));
        });
    const auto r = dal::gradcheck::check(c);
    CHECK_FALSE(r.passed);
    CHECK(r.max_rel_error > 0.05);
  }

  TEST_CASE("report lists every case") {
    const auto cases = dal::gradcheck::standard_cases();
    const auto rep = dal::gradcheck::run(cases);
    const std::string text = rep.format();
    for (const char* op : {"matmul", "relu", "l1_rows", "logsumexp_rows", "kl_to_uniform",
                           "dal_model_loss", "dal_perturbation"}) {
      CHECK(text.find(op) != std::string::npos);
    }
    CHECK(rep.passed());
  }
}
