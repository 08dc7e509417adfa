#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "dal/tensor.hpp"

namespace dal::eval {

/// Scoring functions. Every score is oriented so that higher means more ID.
enum class ScoreKind { kMsp, kFreeEnergy, kMaxLogit };

std::string_view score_name(ScoreKind k);
std::optional<ScoreKind> parse_score(std::string_view name);

/// Per-example max softmax probability.
std::vector<double> score_msp(const num::Tensor& logits);
/// Per-example logsumexp of the logits (negative free energy).
std::vector<double> score_free_energy(const num::Tensor& logits);
std::vector<double> score_max_logit(const num::Tensor& logits);
std::vector<double> score(ScoreKind kind, const num::Tensor& logits);

struct ScoreSet {
  std::vector<double> id_scores;
  std::vector<double> ood_scores;
  ScoreKind kind = ScoreKind::kMsp;

  /// Non-empty lists of finite scores, else InvalidArgument.
  void validate() const;
};

/// Detection threshold for a target ID true-positive rate: the k-th smallest
/// ID score with k = floor((1 - tpr) n_id) + 1.
double threshold_at_tpr(const ScoreSet& s, double tpr_target = 0.95);
/// Fraction of OOD scores >= the threshold.
double fpr_at_tpr(const ScoreSet& s, double tpr_target = 0.95);
/// Fraction of ID scores < the threshold.
double fnr_at_tpr(const ScoreSet& s, double tpr_target = 0.95);
/// P(id score > ood score) with ties counted one half, via midranks.
double auroc(const ScoreSet& s);

inline constexpr const char* kScoreCsvHeader = "score,role";
void write_scores_csv(std::ostream& out, const ScoreSet& s);
ScoreSet read_scores_csv(std::istream& in, ScoreKind kind = ScoreKind::kMsp);

}  // namespace dal::eval
