#include "dal/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <ostream>

namespace dal::train {

using num::NodeId;
using num::Tape;

const char* method_name(Method m) {
  switch (m) {
    case Method::kDal: return "dal";
    case Method::kOe: return "oe";
    case Method::kErm: return "erm";
  }
  return "unknown";
}

void DalConfig::validate() const {
  auto finite = [](double v) { return std::isfinite(v); };
  if (!finite(rho) || rho < 0.0) throw InvalidArgument("rho must be >= 0");
  if (!finite(gamma_max) || gamma_max <= 0.0) throw InvalidArgument("gamma_max must be > 0");
  if (!finite(gamma_init) || gamma_init < 0.0 || gamma_init > gamma_max) {
    throw InvalidArgument("gamma_init must lie in [0, gamma_max]");
  }
  if (!finite(beta) || beta <= 0.0) throw InvalidArgument("beta must be > 0");
  if (!finite(alpha) || alpha < 0.0) throw InvalidArgument("alpha must be >= 0");
  if (!finite(sigma) || sigma <= 0.0) throw InvalidArgument("sigma must be > 0");
  if (!finite(ps) || ps < 0.0) throw InvalidArgument("ps must be >= 0");
  if (!finite(lr) || lr < 0.0) throw InvalidArgument("lr must be >= 0");
  if (id_batch == 0 || ood_batch == 0) throw InvalidArgument("batch sizes must be positive");
}

std::vector<double> PerturbationBatch::l1_norms() const {
  const std::size_t n = values.rows();
  std::vector<double> out(n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (double v : values.row(i)) out[i] += std::abs(v);
  return out;
}

double PerturbationBatch::mean_l1() const {
  const auto norms = l1_norms();
  return std::accumulate(norms.begin(), norms.end(), 0.0) / static_cast<double>(norms.size());
}

void TrainDiagnostics::write_csv(std::ostream& out) const {
  const auto old_precision = out.precision(17);
  out << kDiagnosticsHeader << '\n';
  for (const auto& s : steps) {
    out << s.step << ',' << s.gamma << ',' << s.mean_p_l1 << ',' << s.inner_obj_pre << ','
        << s.inner_obj_post << ',' << s.id_loss << ',' << s.ood_loss << ',' << s.lr << '\n';
  }
  out.precision(old_precision);
}

PerturbationBatch init_perturbations(std::size_t batch_size, std::size_t emb_dim, double sigma,
                                     Rng& rng) {
  if (!(sigma > 0.0) || !std::isfinite(sigma)) throw InvalidArgument("sigma must be > 0");
  if (batch_size == 0 || emb_dim == 0) throw InvalidArgument("perturbation batch must be non-empty");
  std::vector<double> v(batch_size * emb_dim);
  for (auto& x : v) x = rng.normal(0.0, sigma);
  return PerturbationBatch{Tensor({batch_size, emb_dim}, std::move(v)), {}};
}

namespace {

void require_perturbation_shape(const Tensor& emb, const Tensor& p) {
  if (!emb.same_shape(p)) {
    throw ShapeError("perturbation shape " + num::shape_string(p.shape()) +
                     " does not match embeddings " + num::shape_string(emb.shape()));
  }
}

Tensor add(const Tensor& a, const Tensor& b) {
  Tensor out = a;
  for (std::size_t k = 0; k < out.size(); ++k) out[k] += b[k];
  return out;
}

std::vector<double> objectives_at(const ModelParams& params, const Tensor& emb, const Tensor& p,
                                  double gamma) {
  const Tensor logits = model::classify(params, model::EmbeddingBatch{add(emb, p)});
  std::vector<double> obj = model::oe_loss_rows(logits);
  for (std::size_t i = 0; i < obj.size(); ++i) {
    double l1 = 0.0;
    for (double v : p.row(i)) l1 += std::abs(v);
    obj[i] -= gamma * l1;
  }
  return obj;
}

double mean(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

Tensor perturbation_gradient(const ModelParams& params, const Tensor& emb, const Tensor& p,
                             double gamma) {
  require_perturbation_shape(emb, p);
  Tape tape;
  const auto nodes = model::record_params(tape, params, /*requires_grad=*/false);
  const NodeId e = tape.constant(emb);
  const NodeId pn = tape.leaf(p, true, "p");
  const NodeId logits = model::classify(tape, params, nodes, tape.add(e, pn));
  const double batch = static_cast<double>(emb.rows());
  const NodeId kl_sum = tape.scale(tape.kl_to_uniform(logits), batch);
  const NodeId penalty = tape.scale(tape.sum(tape.l1_rows(pn)), gamma);
  tape.backward(tape.sub(kl_sum, penalty));
  return tape.grad(pn);
}

std::vector<double> inner_objectives(const ModelParams& params, const Tensor& x_ood,
                                     const Tensor& p, double gamma) {
  const auto emb = model::extract(params, x_ood);
  require_perturbation_shape(emb.values, p);
  return objectives_at(params, emb.values, p, gamma);
}

double inner_objective(const ModelParams& params, const Tensor& x_ood, const Tensor& p,
                       double gamma) {
  return mean(inner_objectives(params, x_ood, p, gamma));
}

PerturbationBatch search_worst_perturbation(const ModelParams& params, const Tensor& x_ood,
                                            double gamma, const DalConfig& cfg, Rng& rng,
                                            double* initial_objective) {
  const Tensor emb = model::extract(params, x_ood).values;
  PerturbationBatch best = init_perturbations(emb.rows(), emb.cols(), cfg.sigma, rng);
  best.objective = objectives_at(params, emb, best.values, gamma);
  if (initial_objective) *initial_objective = mean(best.objective);

  Tensor p = best.values;
  const std::size_t d = emb.cols();
  for (std::size_t s = 0; s < cfg.num_search; ++s) {
    const Tensor g = perturbation_gradient(params, emb, p, gamma);
    for (std::size_t k = 0; k < p.size(); ++k) p[k] += cfg.ps * g[k];
    p.check_finite("perturbation search");
    const auto obj = objectives_at(params, emb, p, gamma);
    for (std::size_t i = 0; i < obj.size(); ++i) {
      if (obj[i] > best.objective[i]) {
        best.objective[i] = obj[i];
        std::copy_n(p.row(i).begin(), d, best.values.row(i).begin());
      }
    }
  }
  return best;
}

DualState update_gamma(DualState state, double rho, double beta, double mean_l1, double gamma_max) {
  if (!std::isfinite(state.gamma) || !std::isfinite(rho) || !std::isfinite(mean_l1) ||
      !std::isfinite(gamma_max)) {
    throw NumericError("non-finite input to the dual update");
  }
  if (!(beta > 0.0)) throw InvalidArgument("beta must be > 0");
  const double g = state.gamma - beta * (rho - mean_l1);
  return DualState{std::clamp(g, 0.0, gamma_max)};
}

LossGradient loss_gradient(const ModelParams& params, const Tensor& x_id, std::span<const int> y_id,
                           const Tensor* x_ood, const Tensor* p, double a_id, double a_ood) {
  Tape tape;
  const auto nodes = model::record_params(tape, params, true);
  const NodeId xi = tape.constant(x_id);
  const NodeId id_logits = model::classify(tape, params, nodes, model::extract(tape, params, nodes, xi));
  const NodeId id_term = tape.softmax_cross_entropy(id_logits, y_id);
  NodeId total = tape.scale(id_term, a_id);

  LossGradient out;
  out.id_loss = tape.value(id_term).item();
  if (x_ood) {
    NodeId emb = model::extract(tape, params, nodes, tape.constant(*x_ood));
    if (p) {
      require_perturbation_shape(tape.value(emb), *p);
      emb = tape.add(emb, tape.constant(*p));
    }
    const NodeId ood_term = tape.kl_to_uniform(model::classify(tape, params, nodes, emb));
    out.ood_loss = tape.value(ood_term).item();
    total = tape.add(total, tape.scale(ood_term, a_ood));
  }
  tape.backward(total);
  out.grad = model::gradients(tape, params, nodes);
  return out;
}

namespace {

std::pair<double, double> term_weights(const DalConfig& cfg) {
  return cfg.alpha_on == AlphaOn::kOodTerm ? std::pair{1.0, cfg.alpha} : std::pair{cfg.alpha, 1.0};
}

}  // namespace

StepDiagnostics dal_step(ModelParams& params, DualState& dual, const Tensor& x_id,
                         std::span<const int> y_id, const Tensor& x_ood, const DalConfig& cfg,
                         double lr, Rng& rng) {
  if (x_id.size() == 0 || x_ood.size() == 0) throw InvalidArgument("empty mini-batch");
  StepDiagnostics d;
  d.lr = lr;
  const PerturbationBatch p =
      search_worst_perturbation(params, x_ood, dual.gamma, cfg, rng, &d.inner_obj_pre);
  d.inner_obj_post = mean(p.objective);
  d.mean_p_l1 = p.mean_l1();

  dual = update_gamma(dual, cfg.rho, cfg.beta, d.mean_p_l1, cfg.gamma_max);
  d.gamma = dual.gamma;

  const auto [a_id, a_ood] = term_weights(cfg);
  const LossGradient lg = loss_gradient(params, x_id, y_id, &x_ood, &p.values, a_id, a_ood);
  d.id_loss = lg.id_loss;
  d.ood_loss = lg.ood_loss;
  model::sgd_update(params, lg.grad, lr);
  return d;
}

StepDiagnostics oe_step(ModelParams& params, const Tensor& x_id, std::span<const int> y_id,
                        const Tensor& x_ood, double alpha, double lr) {
  if (x_id.size() == 0 || x_ood.size() == 0) throw InvalidArgument("empty mini-batch");
  StepDiagnostics d;
  d.lr = lr;
  const LossGradient lg = loss_gradient(params, x_id, y_id, &x_ood, nullptr, 1.0, alpha);
  d.id_loss = lg.id_loss;
  d.ood_loss = lg.ood_loss;
  model::sgd_update(params, lg.grad, lr);
  return d;
}

double cosine_lr(double lr0, std::size_t t, std::size_t total) {
  if (total == 0) return lr0;
  const double frac = static_cast<double>(t) / static_cast<double>(total);
  return lr0 * 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> idx) {
  const std::size_t c = x.cols();
  std::vector<double> out;
  out.reserve(idx.size() * c);
  for (auto i : idx) {
    if (i >= x.rows()) throw InvalidArgument("row index out of range");
    const auto r = x.row(i);
    out.insert(out.end(), r.begin(), r.end());
  }
  return Tensor({idx.size(), c}, std::move(out));
}

namespace {

constexpr std::uint64_t kShuffleStream = 0x5f1;
constexpr std::uint64_t kPerturbStream = 0x9e7;

// Draws OOD mini-batches from a per-epoch permutation, reshuffling when the
// stream runs out within an epoch.
class CyclingSampler {
 public:
  CyclingSampler(std::size_t n, Rng& rng) : order_(n), rng_(rng) {
    std::iota(order_.begin(), order_.end(), std::size_t{0});
  }
  void reshuffle() {
    rng_.shuffle(std::span<std::size_t>(order_));
    cursor_ = 0;
  }
  std::vector<std::size_t> next(std::size_t k) {
    std::vector<std::size_t> out;
    out.reserve(k);
    while (out.size() < k) {
      if (cursor_ == order_.size()) reshuffle();
      out.push_back(order_[cursor_++]);
    }
    return out;
  }

 private:
  std::vector<std::size_t> order_;
  Rng& rng_;
  std::size_t cursor_ = 0;
};

}  // namespace

TrainResult train(Method method, const DalConfig& cfg, const model::Architecture& arch,
                  const TrainingData& data) {
  cfg.validate();
  if (data.id_x.size() == 0 || data.id_y.size() != data.id_x.rows()) {
    throw InvalidArgument("ID training data is empty or unlabeled");
  }
  if (method != Method::kErm && data.aux_x.size() == 0) {
    throw InvalidArgument("auxiliary OOD data is empty");
  }

  TrainResult result{model::init_params(arch, cfg.seed), {}};
  Rng shuffle_rng(cfg.seed, kShuffleStream);
  Rng perturb_rng(cfg.seed, kPerturbStream);
  DualState dual{cfg.gamma_init};

  const std::size_t n_id = data.id_x.rows();
  const std::size_t id_batch = std::min(cfg.id_batch, n_id);
  const std::size_t steps_per_epoch = (n_id + id_batch - 1) / id_batch;
  const std::size_t total = steps_per_epoch * cfg.epochs;
  std::vector<std::size_t> id_order(n_id);
  std::iota(id_order.begin(), id_order.end(), std::size_t{0});
  CyclingSampler ood(method == Method::kErm ? 0 : data.aux_x.rows(), shuffle_rng);
  const auto [a_id, a_ood] = term_weights(cfg);

  std::size_t t = 0;
  try {
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
      shuffle_rng.shuffle(std::span<std::size_t>(id_order));
      if (method != Method::kErm) ood.reshuffle();
      for (std::size_t b = 0; b < steps_per_epoch; ++b, ++t) {
        const std::size_t lo = b * id_batch, hi = std::min(n_id, lo + id_batch);
        const std::span<const std::size_t> ids(id_order.data() + lo, hi - lo);
        const Tensor x_id = gather_rows(data.id_x, ids);
        std::vector<int> y_id;
        y_id.reserve(ids.size());
        for (auto i : ids) y_id.push_back(data.id_y[i]);
        const double lr = cosine_lr(cfg.lr, t, total);

        StepDiagnostics d;
        if (method == Method::kErm) {
          const LossGradient lg = loss_gradient(result.params, x_id, y_id, nullptr, nullptr, 1.0, 0.0);
          model::sgd_update(result.params, lg.grad, lr);
          d.id_loss = lg.id_loss;
          d.lr = lr;
        } else {
          const auto oods = ood.next(cfg.ood_batch);
          const Tensor x_ood = gather_rows(data.aux_x, oods);
          if (method == Method::kDal) {
            d = dal_step(result.params, dual, x_id, y_id, x_ood, cfg, lr, perturb_rng);
          } else {
            d.lr = lr;
            const LossGradient lg =
                loss_gradient(result.params, x_id, y_id, &x_ood, nullptr, a_id, a_ood);
            d.id_loss = lg.id_loss;
            d.ood_loss = lg.ood_loss;
            model::sgd_update(result.params, lg.grad, lr);
          }
        }
        d.step = t;
        if (!std::isfinite(d.id_loss) || !std::isfinite(d.ood_loss)) {
          throw NumericError("non-finite loss at step " + std::to_string(t));
        }
        result.diagnostics.steps.push_back(d);
      }
    }
  } catch (const NumericError& e) {
    throw TrainingFailure(std::string(method_name(method)) + " training failed at step " +
                              std::to_string(t) + ": " + e.what(),
                          std::move(result.diagnostics));
  }
  return result;
}

}  // namespace dal::train
