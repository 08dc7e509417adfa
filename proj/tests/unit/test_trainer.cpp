#include <doctest.h>

#include <cmath>
#include <numbers>
#include <sstream>

#include "dal/error.hpp"
#include "dal/model.hpp"
#include "dal/rng.hpp"
#include "dal/trainer.hpp"

using namespace dal;
using num::Tensor;

namespace {

Tensor randn(std::size_t n, std::size_t d, Rng& rng, double scale = 1.0) {
  Tensor t({n, d});
  for (auto& v : t.storage()) v = scale * rng.normal();
  return t;
}

train::TrainingData tiny_data(std::uint64_t seed) {
  Rng rng(seed);
  train::TrainingData d;
  d.id_x = randn(40, 2, rng);
  for (std::size_t i = 0; i < 40; ++i) {
    const int y = static_cast<int>(i % 3);
    d.id_y.push_back(y);
    d.id_x.at(i, 0) += 2.0 * std::cos(2.0 * std::numbers::pi * y / 3.0);
    d.id_x.at(i, 1) += 2.0 * std::sin(2.0 * std::numbers::pi * y / 3.0);
  }
  d.aux_x = randn(30, 2, rng, 5.0);
  return d;
}

train::DalConfig tiny_cfg() {
  train::DalConfig c;
  c.id_batch = 16;
  c.ood_batch = 12;
  c.epochs = 3;
  c.lr = 0.1;
  c.num_search = 3;
  c.ps = 0.5;
  c.rho = 0.2;
  c.seed = 4;
  return c;
}

const model::Architecture kArch{2, {6, 4}, 3};

}  // namespace

TEST_SUITE("dual update") {
  TEST_CASE("worked values and clipping") {
    CHECK(train::update_gamma({5.0}, 10.0, 0.1, 4.0, 10.0).gamma == doctest::Approx(4.4));
    CHECK(train::update_gamma({0.1}, 10.0, 1.0, 0.0, 10.0).gamma == 0.0);
    CHECK(train::update_gamma({9.9}, 0.0, 1.0, 5.0, 10.0).gamma == 10.0);
    CHECK(train::update_gamma({1.0}, 2.0, 0.5, 2.0, 10.0).gamma == 1.0);
    CHECK_THROWS_AS(train::update_gamma({NAN}, 1.0, 0.1, 0.0, 1.0), NumericError);
    CHECK_THROWS_AS(train::update_gamma({0.0}, 1.0, 0.0, 0.0, 1.0), InvalidArgument);
  }

  TEST_CASE("gamma never leaves its interval") {
    Rng rng(1);
    train::DualState s{0.5};
    for (int i = 0; i < 1000; ++i) {
      s = train::update_gamma(s, rng.uniform(0, 5), rng.uniform(0.01, 3), rng.uniform(0, 10), 2.0);
      CHECK(s.gamma >= 0.0);
      CHECK(s.gamma <= 2.0);
    }
  }
}

TEST_SUITE("perturbation search") {
  TEST_CASE("initialization statistics") {
    Rng rng(2);
    const auto p = train::init_perturbations(4000, 8, 0.3, rng);
    CHECK(p.size() == 4000);
    double s = 0.0, sq = 0.0;
    for (double v : p.values.data()) {
      s += v;
      sq += v * v;
    }
    const double n = static_cast<double>(p.values.size());
    CHECK(std::abs(s / n) < 0.01);
    CHECK(std::abs(std::sqrt(sq / n) - 0.3) < 0.01);
    double l1 = 0.0;
    for (double v : p.l1_norms()) l1 += v;
    CHECK(p.mean_l1() == doctest::Approx(l1 / 4000.0));
  }

  TEST_CASE("zero search steps return the initialization") {
    const auto params = model::init_params(kArch, 0);
    Rng a(3), b(3);
    const Tensor x = randn(10, 2, a);
    Rng r1(9), r2(9);
    auto cfg = tiny_cfg();
    cfg.num_search = 0;
    double pre = 0.0;
    const auto p = train::search_worst_perturbation(params, x, 0.2, cfg, r1, &pre);
    const auto init = train::init_perturbations(10, 4, cfg.sigma, r2);
    CHECK(p.values == init.values);
    CHECK(pre == doctest::Approx(train::inner_objective(params, x, p.values, 0.2)));
  }

  TEST_CASE("search never lowers any example's objective") {
    const auto params = model::init_params(kArch, 1);
    Rng rng(4);
    const Tensor x = randn(32, 2, rng, 3.0);
    for (double ps : {0.01, 1.0, 50.0}) {
      auto cfg = tiny_cfg();
      cfg.ps = ps;
      cfg.num_search = 8;
      Rng r1(5), r2(5);
      const auto best = train::search_worst_perturbation(params, x, 0.3, cfg, r1);
      const auto init = train::init_perturbations(32, 4, cfg.sigma, r2);
      const auto start = train::inner_objectives(params, x, init.values, 0.3);
      const auto got = train::inner_objectives(params, x, best.values, 0.3);
      for (std::size_t i = 0; i < 32; ++i) {
        CHECK(best.objective[i] >= start[i]);
        CHECK(std::abs(got[i] - best.objective[i]) < 1e-12);
      }
    }
  }

  TEST_CASE("a huge dual variable only shrinks the perturbation") {
    const auto params = model::init_params(kArch, 2);
    Rng rng(6);
    const Tensor x = randn(16, 2, rng);
    auto cfg = tiny_cfg();
    cfg.sigma = 0.1;
    cfg.ps = 1e-9;
    Rng r1(7), r2(7);
    const auto best = train::search_worst_perturbation(params, x, 1e3, cfg, r1);
    const auto init = train::init_perturbations(16, 4, cfg.sigma, r2);
    CHECK(best.mean_l1() <= init.mean_l1());
    double moved = 0.0;
    for (std::size_t k = 0; k < init.values.size(); ++k)
      moved = std::max(moved, std::abs(best.values[k] - init.values[k]));
    // Each step moves an entry by at most ps * (gamma + |d oe / d p|).
    CHECK(moved <= cfg.num_search * cfg.ps * (1e3 + 10.0));
  }

  TEST_CASE("objective definition") {
    const auto params = model::init_params(kArch, 3);
    Rng rng(8);
    const Tensor x = randn(5, 2, rng);
    const Tensor p = randn(5, 4, rng);
    const auto obj = train::inner_objectives(params, x, p, 0.7);
    auto emb = model::extract(params, x);
    for (std::size_t k = 0; k < p.size(); ++k) emb.values[k] += p[k];
    const auto oe = model::oe_loss_rows(model::classify(params, emb));
    for (std::size_t i = 0; i < 5; ++i) {
      double l1 = 0.0;
      for (double v : p.row(i)) l1 += std::abs(v);
      CHECK(obj[i] == doctest::Approx(oe[i] - 0.7 * l1).epsilon(1e-12));
    }
    CHECK_THROWS_AS(train::inner_objectives(params, x, randn(5, 3, rng), 0.7), ShapeError);
  }
}

TEST_SUITE("steps") {
  TEST_CASE("cosine schedule") {
    CHECK(train::cosine_lr(0.4, 0, 100) == 0.4);
    CHECK(train::cosine_lr(0.4, 50, 100) == doctest::Approx(0.2));
    CHECK(train::cosine_lr(0.4, 100, 100) == doctest::Approx(0.0));
    CHECK(train::cosine_lr(0.4, 0, 0) == 0.4);
  }

  TEST_CASE("one DAL step against finite differences of the loss") {
    auto params = model::init_params(kArch, 5);
    const auto before = params;
    Rng rng(10);
    const Tensor x_id = randn(8, 2, rng), x_ood = randn(6, 2, rng, 4.0);
    const std::vector<int> y{0, 1, 2, 0, 1, 2, 0, 1};
    auto cfg = tiny_cfg();
    cfg.num_search = 0;
    cfg.sigma = 0.5;
    cfg.alpha = 0.7;
    Rng r1(11), r2(11);
    train::DualState dual{0.25};
    const auto d = train::dal_step(params, dual, x_id, y, x_ood, cfg, 0.3, r1);
    const Tensor p = train::init_perturbations(6, 4, cfg.sigma, r2).values;

    CHECK(d.gamma == doctest::Approx(std::clamp(0.25 - cfg.beta * (cfg.rho - d.mean_p_l1), 0.0,
                                                cfg.gamma_max)));
    CHECK(dual.gamma == d.gamma);

    auto loss = [&](const model::ModelParams& w) {
      auto emb = model::extract(w, x_ood);
      for (std::size_t k = 0; k < p.size(); ++k) emb.values[k] += p[k];
      return model::id_loss(model::predict(w, x_id), y) +
             0.7 * model::oe_loss(model::classify(w, emb));
    };
    CHECK(d.id_loss == doctest::Approx(model::id_loss(model::predict(before, x_id), y)));

    auto probe = before;
    auto ts = probe.tensors();
    auto after = params.tensors();
    auto orig = before.tensors();
    const double h = 1e-6;
    for (std::size_t t = 0; t < ts.size(); ++t) {
      for (std::size_t k = 0; k < ts[t]->size(); ++k) {
        const double v = (*ts[t])[k];
        (*ts[t])[k] = v + h;
        const double up = loss(probe);
        (*ts[t])[k] = v - h;
        const double dn = loss(probe);
        (*ts[t])[k] = v;
        const double want = (*orig[t])[k] - 0.3 * (up - dn) / (2.0 * h);
        CHECK(std::abs((*after[t])[k] - want) < 1e-7);
      }
    }
  }

  TEST_CASE("alpha zero ignores the OOD batch") {
    auto a = model::init_params(kArch, 6), b = a;
    Rng rng(12);
    const Tensor x_id = randn(8, 2, rng);
    const std::vector<int> y{0, 1, 2, 0, 1, 2, 0, 1};
    train::oe_step(a, x_id, y, randn(4, 2, rng), 0.0, 0.2);
    train::oe_step(b, x_id, y, randn(4, 2, rng, 10.0), 0.0, 0.2);
    CHECK(a == b);
  }
}

TEST_SUITE("training loop") {
  TEST_CASE("zero epochs leave the initialization") {
    auto cfg = tiny_cfg();
    cfg.epochs = 0;
    const auto r = train::train(train::Method::kDal, cfg, kArch, tiny_data(1));
    CHECK(r.params == model::init_params(kArch, cfg.seed));
    CHECK(r.diagnostics.steps.empty());
  }

  TEST_CASE("training is deterministic") {
    const auto data = tiny_data(2);
    const auto a = train::train(train::Method::kDal, tiny_cfg(), kArch, data);
    const auto b = train::train(train::Method::kDal, tiny_cfg(), kArch, data);
    CHECK(a.params == b.params);
    CHECK(a.diagnostics.steps.size() == 9);
    std::ostringstream sa, sb;
    a.diagnostics.write_csv(sa);
    b.diagnostics.write_csv(sb);
    CHECK(sa.str() == sb.str());
    CHECK(sa.str().rfind(train::kDiagnosticsHeader, 0) == 0);
  }

  TEST_CASE("diagnostic invariants") {
    const auto r = train::train(train::Method::kDal, tiny_cfg(), kArch, tiny_data(3));
    const auto cfg = tiny_cfg();
    for (std::size_t i = 0; i < r.diagnostics.steps.size(); ++i) {
      const auto& s = r.diagnostics.steps[i];
      CHECK(s.step == i);
      CHECK(s.gamma >= 0.0);
      CHECK(s.gamma <= cfg.gamma_max);
      CHECK(s.inner_obj_post >= s.inner_obj_pre);
      CHECK(s.lr == doctest::Approx(train::cosine_lr(cfg.lr, i, 9)));
    }
  }

  TEST_CASE("without a perturbation step DAL reduces to OE") {
    const auto data = tiny_data(4);
    auto cfg = tiny_cfg();
    cfg.ps = 0.0;
    cfg.sigma = 1e-12;
    const auto dal = train::train(train::Method::kDal, cfg, kArch, data);
    const auto oe = train::train(train::Method::kOe, cfg, kArch, data);
    CHECK(model::parameter_distance(dal.params, oe.params) < 1e-8);
    for (std::size_t i = 0; i < dal.diagnostics.steps.size(); ++i) {
      CHECK(std::abs(dal.diagnostics.steps[i].ood_loss - oe.diagnostics.steps[i].ood_loss) < 1e-6);
      CHECK(std::abs(dal.diagnostics.steps[i].id_loss - oe.diagnostics.steps[i].id_loss) < 1e-6);
    }
  }

  TEST_CASE("ERM ignores the auxiliary data") {
    auto data = tiny_data(5);
    const auto a = train::train(train::Method::kErm, tiny_cfg(), kArch, data);
    data.aux_x = Tensor();
    const auto b = train::train(train::Method::kErm, tiny_cfg(), kArch, data);
    CHECK(a.params == b.params);
    CHECK_THROWS_AS(train::train(train::Method::kOe, tiny_cfg(), kArch, data), InvalidArgument);
  }

  TEST_CASE("a divergent run raises TrainingFailure with partial diagnostics") {
    auto cfg = tiny_cfg();
    cfg.lr = 1e200;
    try {
      train::train(train::Method::kOe, cfg, kArch, tiny_data(6));
      FAIL("expected a failure");
    } catch (const train::TrainingFailure& e) {
      CHECK(e.partial().steps.size() < 9);
    }
  }

  TEST_CASE("config validation") {
    auto cfg = tiny_cfg();
    cfg.rho = -1.0;
    CHECK_THROWS_AS(cfg.validate(), InvalidArgument);
    cfg = tiny_cfg();
    cfg.gamma_init = 2.0 * cfg.gamma_max;
    CHECK_THROWS_AS(cfg.validate(), InvalidArgument);
    cfg = tiny_cfg();
    cfg.ood_batch = 0;
    CHECK_THROWS_AS(cfg.validate(), InvalidArgument);
  }
}
