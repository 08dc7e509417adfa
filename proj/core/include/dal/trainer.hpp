#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "dal/error.hpp"
#include "dal/model.hpp"
#include "dal/rng.hpp"

namespace dal::train {

using model::ModelParams;
using num::Tensor;

/// Which risk the trade-off weight alpha multiplies.
enum class AlphaOn { kOodTerm, kIdTerm };

enum class Method { kDal, kOe, kErm };

const char* method_name(Method m);

struct DalConfig {
  double rho = 0.5;         // Wasserstein ball radius
  double gamma_max = 1.0;   // upper clip for the dual variable
  double gamma_init = 0.0;  // dual variable at step 0
  double beta = 0.05;       // dual learning rate
  double alpha = 1.0;       // ID / OOD risk trade-off
  double sigma = 0.001;     // std of the perturbation initialization
  double ps = 2.0;          // perturbation ascent step size
  std::size_t num_search = 10;
  double lr = 0.5;  // initial model learning rate (cosine decayed)
  std::size_t id_batch = 128;
  std::size_t ood_batch = 256;
  std::size_t epochs = 50;
  std::uint64_t seed = 0;
  AlphaOn alpha_on = AlphaOn::kOodTerm;

  void validate() const;
};

/// Embedding-space perturbations for one OOD mini-batch.
struct PerturbationBatch {
  Tensor values;                    // [batch, embedding_dim]
  std::vector<double> objective;    // inner objective of each row, at the gamma used

  std::size_t size() const { return values.rows(); }
  std::vector<double> l1_norms() const;
  double mean_l1() const;
};

struct DualState {
  double gamma = 0.0;
};

struct StepDiagnostics {
  std::size_t step = 0;
  double gamma = 0.0;  // after the dual update
  double mean_p_l1 = 0.0;
  double inner_obj_pre = 0.0;
  double inner_obj_post = 0.0;
  double id_loss = 0.0;
  double ood_loss = 0.0;
  double lr = 0.0;
};

inline constexpr const char* kDiagnosticsHeader =
    "step,gamma,mean_p_l1,inner_obj_pre,inner_obj_post,id_loss,ood_loss,lr";

struct TrainDiagnostics {
  std::vector<StepDiagnostics> steps;

  void write_csv(std::ostream& out) const;
};

/// Raised when a step produces a non-finite value; carries the diagnostics
/// recorded before the failure.
class TrainingFailure : public NumericError {
 public:
  TrainingFailure(const std::string& what, TrainDiagnostics partial)
      : NumericError(what), partial_(std::move(partial)) {}
  const TrainDiagnostics& partial() const { return partial_; }

 private:
  TrainDiagnostics partial_;
};

PerturbationBatch init_perturbations(std::size_t batch_size, std::size_t emb_dim, double sigma,
                                     Rng& rng);

/// Per-example oe_loss(h(e(x) + p)) - gamma * |p|_1.
std::vector<double> inner_objectives(const ModelParams& params, const Tensor& x_ood,
                                     const Tensor& p, double gamma);
/// Gradient of sum_i [oe_loss_i(h(emb + p)) - gamma |p_i|_1] with respect to
/// p, where `emb` are the extractor outputs. Row i is the per-example ascent
/// direction.
Tensor perturbation_gradient(const ModelParams& params, const Tensor& emb, const Tensor& p,
                             double gamma);

/// Batch mean of `inner_objectives`.
double inner_objective(const ModelParams& params, const Tensor& x_ood, const Tensor& p,
                       double gamma);

/// Runs `cfg.num_search` ascent steps p <- p + ps * grad_p from a Gaussian
/// start and keeps, per example, the best iterate seen (the start included).
/// `initial_objective`, when non-null, receives the mean objective at the start.
PerturbationBatch search_worst_perturbation(const ModelParams& params, const Tensor& x_ood,
                                            double gamma, const DalConfig& cfg, Rng& rng,
                                            double* initial_objective = nullptr);

/// gamma' = clip(gamma - beta (rho - mean_l1), 0, gamma_max)
DualState update_gamma(DualState state, double rho, double beta, double mean_l1, double gamma_max);

/// Gradient of L = a_id * id_loss + a_ood * oe_loss(h(e(x_ood) + p)) with p
/// held constant. `p` may be empty (OE, no perturbation) and `x_ood` may be
/// empty (ERM). Also reports the two loss values.
struct LossGradient {
  ModelParams grad;
  double id_loss = 0.0;
  double ood_loss = 0.0;
};
LossGradient loss_gradient(const ModelParams& params, const Tensor& x_id, std::span<const int> y_id,
                           const Tensor* x_ood, const Tensor* p, double a_id, double a_ood);

/// One stochastic DAL iteration: search, dual update, model update.
StepDiagnostics dal_step(ModelParams& params, DualState& dual, const Tensor& x_id,
                         std::span<const int> y_id, const Tensor& x_ood, const DalConfig& cfg,
                         double lr, Rng& rng);

/// One outlier-exposure step minimizing id_loss + alpha * oe_loss.
StepDiagnostics oe_step(ModelParams& params, const Tensor& x_id, std::span<const int> y_id,
                        const Tensor& x_ood, double alpha, double lr);

/// lr0 * 0.5 * (1 + cos(pi t / T))
double cosine_lr(double lr0, std::size_t t, std::size_t total);

struct TrainingData {
  Tensor id_x;
  std::vector<int> id_y;
  Tensor aux_x;
};

struct TrainResult {
  ModelParams params;
  TrainDiagnostics diagnostics;
};

/// Full training loop over shuffled mini-batches with a cosine learning-rate
/// schedule. Deterministic in (method, cfg, data, arch). Throws
/// TrainingFailure on a non-finite step.
TrainResult train(Method method, const DalConfig& cfg, const model::Architecture& arch,
                  const TrainingData& data);

/// Rows of `x` selected by `idx`.
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> idx);

}  // namespace dal::train
