#include "dal/eval.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>

#include "dal/error.hpp"

namespace dal::eval {

void ScoreSet::validate() const {
  if (id_scores.empty() || ood_scores.empty()) throw InvalidArgument("score lists must be non-empty");
  for (double v : id_scores)
    if (!std::isfinite(v)) throw InvalidArgument("ID score is not finite");
  for (double v : ood_scores)
    if (!std::isfinite(v)) throw InvalidArgument("OOD score is not finite");
}

double threshold_at_tpr(const ScoreSet& s, double tpr_target) {
  s.validate();
  if (!(tpr_target > 0.0 && tpr_target <= 1.0)) throw InvalidArgument("tpr target must lie in (0, 1]");
  std::vector<double> id = s.id_scores;
  std::sort(id.begin(), id.end());
  const double n = static_cast<double>(id.size());
  // Guard against (1 - 0.95) * n landing a hair below an integer.
  auto k = static_cast<std::size_t>(std::floor((1.0 - tpr_target) * n + 1e-9)) + 1;
  k = std::min(k, id.size());
  return id[k - 1];
}

double fpr_at_tpr(const ScoreSet& s, double tpr_target) {
  const double lambda = threshold_at_tpr(s, tpr_target);
  const auto hits = std::count_if(s.ood_scores.begin(), s.ood_scores.end(),
                                  [lambda](double v) { return v >= lambda; });
  return static_cast<double>(hits) / static_cast<double>(s.ood_scores.size());
}

double fnr_at_tpr(const ScoreSet& s, double tpr_target) {
  const double lambda = threshold_at_tpr(s, tpr_target);
  const auto misses = std::count_if(s.id_scores.begin(), s.id_scores.end(),
                                    [lambda](double v) { return v < lambda; });
  return static_cast<double>(misses) / static_cast<double>(s.id_scores.size());
}

double auroc(const ScoreSet& s) {
  s.validate();
  const std::size_t n_id = s.id_scores.size(), n_ood = s.ood_scores.size();
  struct Entry {
    double v;
    bool is_id;
  };
  std::vector<Entry> all;
  all.reserve(n_id + n_ood);
  for (double v : s.id_scores) all.push_back({v, true});
  for (double v : s.ood_scores) all.push_back({v, false});
  std::sort(all.begin(), all.end(), [](const Entry& a, const Entry& b) { return a.v < b.v; });

  // Twice the midrank sum of ID entries keeps everything integral.
  double rank_sum_x2 = 0.0;
  for (std::size_t i = 0; i < all.size();) {
    std::size_t j = i;
    std::size_t ids = 0;
    while (j < all.size() && all[j].v == all[i].v) ids += all[j++].is_id ? 1 : 0;
    // ranks i+1 .. j share the midrank (i + 1 + j) / 2.
    rank_sum_x2 += static_cast<double>(ids) * static_cast<double>(i + 1 + j);
    i = j;
  }
  const double nid = static_cast<double>(n_id);
  const double u = 0.5 * rank_sum_x2 - nid * (nid + 1.0) / 2.0;
  return u / (nid * static_cast<double>(n_ood));
}

void write_scores_csv(std::ostream& out, const ScoreSet& s) {
  const auto old = out.precision(17);
  out << kScoreCsvHeader << '\n';
  for (double v : s.id_scores) out << v << ",id\n";
  for (double v : s.ood_scores) out << v << ",ood\n";
  out.precision(old);
}

ScoreSet read_scores_csv(std::istream& in, ScoreKind kind) {
  ScoreSet s;
  s.kind = kind;
  std::string line;
  if (!std::getline(in, line) || line != kScoreCsvHeader) {
    throw FormatError("score CSV must start with header '" + std::string(kScoreCsvHeader) + "'");
  }
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw FormatError("score CSV line " + std::to_string(lineno));
    const std::string role = line.substr(comma + 1);
    double v;
    std::istringstream is(line.substr(0, comma));
    if (!(is >> v)) throw FormatError("bad score on line " + std::to_string(lineno));
    if (role == "id")
      s.id_scores.push_back(v);
    else if (role == "ood")
      s.ood_scores.push_back(v);
    else
      throw FormatError("unknown role '" + role + "' on line " + std::to_string(lineno));
  }
  s.validate();
  return s;
}

}  // namespace dal::eval
