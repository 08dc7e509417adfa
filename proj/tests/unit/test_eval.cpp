#include <doctest.h>

#include <cmath>
#include <sstream>

#include "dal/error.hpp"
#include "dal/eval.hpp"
#include "dal/rng.hpp"
#include "oracles/oracles.hpp"

using namespace dal;
using eval::ScoreSet;
using num::Tensor;

namespace {

ScoreSet random_set(Rng& rng, bool ties) {
  ScoreSet s;
  const std::size_t n = 1 + rng.below(1000), m = 1 + rng.below(1000);
  auto draw = [&](double shift) {
    return ties ? static_cast<double>(rng.below(12)) + shift : rng.normal() + shift;
  };
  for (std::size_t i = 0; i < n; ++i) s.id_scores.push_back(draw(ties ? 2.0 : 0.8));
  for (std::size_t i = 0; i < m; ++i) s.ood_scores.push_back(draw(0.0));
  return s;
}

}  // namespace

TEST_SUITE("scores") {
  TEST_CASE("worked values") {
    const Tensor z = Tensor::matrix({{2, 0}, {0, 0}});
    const auto msp = eval::score_msp(z);
    CHECK(msp[0] == doctest::Approx(1.0 / (1.0 + std::exp(-2.0))).epsilon(1e-14));
    CHECK(msp[1] == doctest::Approx(0.5));
    const auto en = eval::score_free_energy(z);
    CHECK(en[1] == doctest::Approx(std::log(2.0)));
    CHECK(en[0] == doctest::Approx(2.0 + std::log1p(std::exp(-2.0))));
    CHECK(eval::score_max_logit(z) == std::vector<double>{2.0, 0.0});
    CHECK(eval::score(eval::ScoreKind::kMaxLogit, z) == eval::score_max_logit(z));
    CHECK_THROWS_AS(eval::score_msp(Tensor::matrix({{1}})), ShapeError);
  }

  TEST_CASE("MSP is stable for huge logits") {
    const auto msp = eval::score_msp(Tensor::matrix({{1000, 0, -1000}}));
    CHECK(msp[0] == 1.0);
  }

  TEST_CASE("names round trip") {
    for (auto k : {eval::ScoreKind::kMsp, eval::ScoreKind::kFreeEnergy, eval::ScoreKind::kMaxLogit})
      CHECK(eval::parse_score(eval::score_name(k)) == k);
    CHECK_FALSE(eval::parse_score("nope").has_value());
  }
}

TEST_SUITE("metrics") {
  TEST_CASE("worked threshold example") {
    ScoreSet s;
    for (int i = 1; i <= 20; ++i) s.id_scores.push_back(i);
    s.ood_scores = {0.5, 5.5, 10.5, 19.5};
    CHECK(eval::threshold_at_tpr(s) == 2.0);
    CHECK(eval::fpr_at_tpr(s) == 0.75);
    CHECK(eval::fnr_at_tpr(s) == 0.05);
  }

  TEST_CASE("perfect and reversed separation") {
    ScoreSet s{{2, 3, 4}, {0, 1}};
    CHECK(eval::auroc(s) == 1.0);
    CHECK(eval::fpr_at_tpr(s) == 0.0);
    std::swap(s.id_scores, s.ood_scores);
    CHECK(eval::auroc(s) == 0.0);
    CHECK(eval::auroc(ScoreSet{{1, 1}, {1}}) == 0.5);
  }

  TEST_CASE("AUROC and FPR95 agree with brute force") {
    Rng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
      const auto s = random_set(rng, trial % 2 == 0);
      CHECK(std::abs(eval::auroc(s) - oracle::auroc_pairwise(s.id_scores, s.ood_scores)) < 1e-12);
      for (double tpr : {0.5, 0.9, 0.95, 1.0}) {
        const auto want = oracle::exhaustive_threshold(s.id_scores, s.ood_scores, tpr);
        CHECK(eval::threshold_at_tpr(s, tpr) == want.lambda);
        CHECK(eval::fpr_at_tpr(s, tpr) == want.fpr);
        CHECK(eval::fnr_at_tpr(s, tpr) == want.fnr);
        CHECK(eval::fnr_at_tpr(s, tpr) <= 1.0 - tpr + 1e-12);
      }
    }
  }

  TEST_CASE("invariance and symmetry") {
    Rng rng(4);
    for (int trial = 0; trial < 10; ++trial) {
      const auto s = random_set(rng, false);
      ScoreSet t = s;
      for (auto* v : {&t.id_scores, &t.ood_scores})
        for (auto& x : *v) x = std::exp(0.5 * x) + 3.0;
      CHECK(eval::auroc(t) == eval::auroc(s));
      CHECK(eval::fpr_at_tpr(t) == eval::fpr_at_tpr(s));
      ScoreSet u{s.ood_scores, s.id_scores};
      CHECK(std::abs(eval::auroc(u) - (1.0 - eval::auroc(s))) < 1e-12);
    }
  }

  TEST_CASE("threshold and FPR are monotone in the target rate") {
    Rng rng(5);
    const auto s = random_set(rng, false);
    double last_lambda = INFINITY, last_fpr = -1.0;
    for (double tpr = 0.05; tpr <= 1.0; tpr += 0.05) {
      const double l = eval::threshold_at_tpr(s, tpr);
      const double f = eval::fpr_at_tpr(s, tpr);
      CHECK(l <= last_lambda);
      CHECK(f >= last_fpr);
      last_lambda = l;
      last_fpr = f;
    }
  }

  TEST_CASE("contracts") {
    CHECK_THROWS_AS(eval::auroc(ScoreSet{{}, {1}}), InvalidArgument);
    CHECK_THROWS_AS(eval::auroc(ScoreSet{{NAN}, {1}}), InvalidArgument);
    CHECK_THROWS_AS(eval::fpr_at_tpr(ScoreSet{{1}, {1}}, 0.0), InvalidArgument);
  }
}

TEST_SUITE("score csv") {
  TEST_CASE("round trip") {
    Rng rng(6);
    const auto s = random_set(rng, false);
    std::stringstream io;
    eval::write_scores_csv(io, s);
    CHECK(io.str().rfind(eval::kScoreCsvHeader, 0) == 0);
    const auto back = eval::read_scores_csv(io);
    CHECK(back.id_scores == s.id_scores);
    CHECK(back.ood_scores == s.ood_scores);
  }

  TEST_CASE("malformed input") {
    std::istringstream a("x,y\n1,id\n");
    CHECK_THROWS_AS(eval::read_scores_csv(a), FormatError);
    std::istringstream b("score,role\n1,maybe\n");
    CHECK_THROWS_AS(eval::read_scores_csv(b), FormatError);
    std::istringstream c("score,role\nabc,id\n");
    CHECK_THROWS_AS(eval::read_scores_csv(c), FormatError);
  }
}
