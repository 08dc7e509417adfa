#include "dal/eval.hpp"

#include <algorithm>
#include <cmath>

#include "dal/error.hpp"

namespace dal::eval {

std::string_view score_name(ScoreKind k) {
  switch (k) {
    case ScoreKind::kMsp: return "msp";
    case ScoreKind::kFreeEnergy: return "energy";
    case ScoreKind::kMaxLogit: return "max_logit";
  }
  return "unknown";
}

std::optional<ScoreKind> parse_score(std::string_view name) {
  if (name == "msp") return ScoreKind::kMsp;
  if (name == "energy" || name == "free_energy") return ScoreKind::kFreeEnergy;
  if (name == "max_logit") return ScoreKind::kMaxLogit;
  return std::nullopt;
}

namespace {

void require_logits(const num::Tensor& logits) {
  if (logits.rank() != 2 || logits.cols() < 2) {
    throw ShapeError("scores need [batch, C] logits with C >= 2, got " +
                     num::shape_string(logits.shape()));
  }
}

}  // namespace

std::vector<double> score_msp(const num::Tensor& logits) {
  require_logits(logits);
  std::vector<double> out(logits.rows());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const auto row = logits.row(i);
    const double m = *std::max_element(row.begin(), row.end());
    out[i] = std::exp(m - num::logsumexp(row));
  }
  return out;
}

std::vector<double> score_free_energy(const num::Tensor& logits) {
  require_logits(logits);
  std::vector<double> out(logits.rows());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = num::logsumexp(logits.row(i));
  return out;
}

std::vector<double> score_max_logit(const num::Tensor& logits) {
  require_logits(logits);
  std::vector<double> out(logits.rows());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const auto row = logits.row(i);
    out[i] = *std::max_element(row.begin(), row.end());
  }
  return out;
}

std::vector<double> score(ScoreKind kind, const num::Tensor& logits) {
  switch (kind) {
    case ScoreKind::kMsp: return score_msp(logits);
    case ScoreKind::kFreeEnergy: return score_free_energy(logits);
    case ScoreKind::kMaxLogit: return score_max_logit(logits);
  }
  throw InvalidArgument("unknown score kind");
}

}  // namespace dal::eval
