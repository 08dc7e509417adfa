#include "dal/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "dal/error.hpp"
#include "dal/model.hpp"
#include "dal/rng.hpp"
#include "dal/trainer.hpp"

namespace dal::gradcheck {

GradCase tape_case(std::string name, std::vector<Tensor> inputs, TapeBuilder build) {
  GradCase c;
  c.name = std::move(name);
  c.inputs = std::move(inputs);
  c.value = [build](std::span<const Tensor> xs) {
    Tape tape;
    std::vector<NodeId> leaves;
    for (const auto& x : xs) leaves.push_back(tape.leaf(x, false));
    return tape.value(build(tape, leaves)).item();
  };
  c.gradient = [build](std::span<const Tensor> xs) {
    Tape tape;
    std::vector<NodeId> leaves;
    for (const auto& x : xs) leaves.push_back(tape.leaf(x, true));
    tape.backward(build(tape, leaves));
    std::vector<Tensor> out;
    for (auto id : leaves) out.push_back(tape.grad(id));
    return out;
  };
  return c;
}

double relative_error(double analytic, double numeric, double floor) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / scale;
}

CaseResult check(const GradCase& c, const Options& opt) {
  CaseResult r;
  r.name = c.name;
  std::vector<Tensor> xs = c.inputs;
  const std::vector<Tensor> grads = c.gradient(xs);
  if (grads.size() != xs.size()) throw ShapeError(c.name + ": gradient count mismatch");

  for (std::size_t k = 0; k < xs.size(); ++k) {
    if (!grads[k].same_shape(xs[k])) throw ShapeError(c.name + ": gradient shape mismatch");
    for (std::size_t i = 0; i < xs[k].size(); ++i) {
      const double orig = xs[k][i];
      xs[k][i] = orig + opt.step;
      const double up = c.value(xs);
      xs[k][i] = orig - opt.step;
      const double down = c.value(xs);
      xs[k][i] = orig;
      const double numeric = (up - down) / (2.0 * opt.step);
      r.max_abs_error = std::max(r.max_abs_error, std::abs(grads[k][i] - numeric));
      r.max_rel_error =
          std::max(r.max_rel_error, relative_error(grads[k][i], numeric, opt.scale_floor));
      ++r.entries;
    }
  }
  r.passed = r.max_rel_error <= opt.tolerance;
  return r;
}

bool Report::passed() const {
  return std::all_of(cases.begin(), cases.end(), [](const CaseResult& c) { return c.passed; });
}

double Report::worst_rel_error() const {
  double w = 0.0;
  for (const auto& c : cases) w = std::max(w, c.max_rel_error);
  return w;
}

std::string Report::format() const {
  std::ostringstream os;
  char buf[160];
  for (const auto& c : cases) {
    std::snprintf(buf, sizeof buf, "%-24s entries=%-5zu max_rel=%.3e max_abs=%.3e %s\n",
                  c.name.c_str(), c.entries, c.max_rel_error, c.max_abs_error,
                  c.passed ? "ok" : "FAIL");
    os << buf;
  }
  std::snprintf(buf, sizeof buf, "%zu cases, worst relative error %.3e (tolerance %.1e): %s\n",
                cases.size(), worst_rel_error(), tolerance, passed() ? "pass" : "FAIL");
  os << buf;
  return os.str();
}

Report run(std::span<const GradCase> cases, const Options& opt) {
  Report rep;
  rep.tolerance = opt.tolerance;
  for (const auto& c : cases) rep.cases.push_back(check(c, opt));
  return rep;
}

namespace {

Tensor random_tensor(num::Shape shape, Rng& rng, double away_from_zero = 0.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.storage()) {
    v = rng.normal();
    // Keep kinked ops away from their kink so central differences are valid.
    if (std::abs(v) < away_from_zero) v = v < 0 ? v - away_from_zero : v + away_from_zero;
  }
  return t;
}

// Reduces a tensor to a scalar with fixed random weights so every output
// entry contributes a distinct amount.
NodeId project(Tape& tape, NodeId x, std::uint64_t salt) {
  Rng rng(salt, 0x9a11);
  const Tensor w = random_tensor(tape.value(x).shape(), rng);
  return tape.sum(tape.mul(x, tape.constant(w)));
}

model::ModelParams unflatten(const model::ModelParams& like, std::span<const Tensor> xs) {
  model::ModelParams p = like;
  auto dst = p.tensors();
  if (dst.size() != xs.size()) throw ShapeError("parameter count mismatch");
  for (std::size_t k = 0; k < dst.size(); ++k) *dst[k] = xs[k];
  return p;
}

std::vector<Tensor> flatten(const model::ModelParams& p) {
  std::vector<Tensor> out;
  for (const Tensor* t : p.tensors()) out.push_back(*t);
  return out;
}

model::ParamNodes nodes_from(std::span<const NodeId> leaves, std::size_t layers) {
  model::ParamNodes n;
  for (std::size_t l = 0; l < layers; ++l) {
    n.extractor_weight.push_back(leaves[2 * l]);
    n.extractor_bias.push_back(leaves[2 * l + 1]);
  }
  n.head_weight = leaves[2 * layers];
  n.head_bias = leaves[2 * layers + 1];
  return n;
}

Tensor perturb_rows(const Tensor& emb, const Tensor& p) {
  Tensor out = emb;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += p[i];
  return out;
}

}  // namespace

std::vector<GradCase> standard_cases(std::uint64_t seed) {
  Rng rng(seed, 0x6c4e);
  std::vector<GradCase> cases;

  cases.push_back(tape_case("matmul", {random_tensor({3, 4}, rng), random_tensor({4, 2}, rng)},
                            [](Tape& t, std::span<const NodeId> x) {
                              return project(t, t.matmul(x[0], x[1]), 1);
                            }));
  cases.push_back(tape_case("add_row", {random_tensor({3, 4}, rng), random_tensor({4}, rng)},
                            [](Tape& t, std::span<const NodeId> x) {
                              return project(t, t.add_row(x[0], x[1]), 2);
                            }));
  cases.push_back(tape_case("add", {random_tensor({3, 4}, rng), random_tensor({3, 4}, rng)},
                            [](Tape& t, std::span<const NodeId> x) {
                              return project(t, t.add(x[0], x[1]), 3);
                            }));
  cases.push_back(tape_case("sub", {random_tensor({3, 4}, rng), random_tensor({3, 4}, rng)},
                            [](Tape& t, std::span<const NodeId> x) {
                              return project(t, t.sub(x[0], x[1]), 4);
                            }));
  cases.push_back(tape_case("mul", {random_tensor({3, 4}, rng), random_tensor({3, 4}, rng)},
                            [](Tape& t, std::span<const NodeId> x) {
                              return project(t, t.mul(x[0], x[1]), 5);
                            }));
  cases.push_back(tape_case("scale", {random_tensor({3, 4}, rng)},
                            [](Tape& t, std::span<const NodeId> x) {
                              return project(t, t.scale(x[0], -1.7), 6);
                            }));
  cases.push_back(tape_case("relu", {random_tensor({4, 5}, rng, 0.05)},
                            [](Tape& t, std::span<const NodeId> x) {
                              return project(t, t.relu(x[0]), 7);
                            }));
  cases.push_back(tape_case("sum", {random_tensor({3, 4}, rng)},
                            [](Tape& t, std::span<const NodeId> x) { return t.sum(x[0]); }));
  cases.push_back(tape_case("mean", {random_tensor({3, 4}, rng)},
                            [](Tape& t, std::span<const NodeId> x) { return t.mean(x[0]); }));
  cases.push_back(tape_case("l1_rows", {random_tensor({4, 3}, rng, 0.05)},
                            [](Tape& t, std::span<const NodeId> x) {
                              return project(t, t.l1_rows(x[0]), 8);
                            }));
  cases.push_back(tape_case("logsumexp_rows", {random_tensor({4, 5}, rng)},
                            [](Tape& t, std::span<const NodeId> x) {
                              return project(t, t.logsumexp_rows(x[0]), 9);
                            }));
  {
    std::vector<int> labels{0, 2, 1, 2};
    cases.push_back(tape_case("softmax_cross_entropy", {random_tensor({4, 3}, rng)},
                              [labels](Tape& t, std::span<const NodeId> x) {
                                return t.softmax_cross_entropy(x[0], labels);
                              }));
  }
  cases.push_back(tape_case("kl_to_uniform", {random_tensor({4, 3}, rng)},
                            [](Tape& t, std::span<const NodeId> x) { return t.kl_to_uniform(x[0]); }));
  cases.push_back(tape_case(
      "custom", {random_tensor({2, 3}, rng)}, [](Tape& t, std::span<const NodeId> x) {
        Tensor sq = t.value(x[0]);
        for (auto& v : sq.storage()) v = std::tanh(v);
        auto back = [](const Tensor& up, const Tensor& out, std::span<const Tensor* const>,
                       std::span<Tensor* const> g) {
          if (!g[0]) return;
          for (std::size_t i = 0; i < up.size(); ++i) (*g[0])[i] += up[i] * (1.0 - out[i] * out[i]);
        };
        return project(t, t.custom("tanh", {x[0]}, std::move(sq), back), 10);
      }));

  // Composed paths on a tiny random net.
  const model::Architecture arch{2, {5, 3}, 3};
  const model::ModelParams net = model::init_params(arch, seed);
  const std::size_t layers = arch.extractor_widths.size();
  const Tensor x_id = random_tensor({4, 2}, rng);
  const std::vector<int> y_id{0, 1, 2, 1};
  const Tensor x_ood = random_tensor({5, 2}, rng);
  const Tensor p = random_tensor({5, arch.embedding_dim()}, rng, 0.05);
  const double alpha = 0.8;
  const double gamma = 0.3;

  {
    std::vector<Tensor> inputs = flatten(net);
    inputs.push_back(x_id);
    cases.push_back(tape_case("mlp_forward", std::move(inputs),
                              [net, layers](Tape& t, std::span<const NodeId> x) {
                                const auto nodes = nodes_from(x, layers);
                                const NodeId emb = model::extract(t, net, nodes, x.back());
                                return project(t, model::classify(t, net, nodes, emb), 11);
                              }));
  }

  GradCase w;
  w.name = "dal_model_loss";
  w.inputs = flatten(net);
  w.value = [=](std::span<const Tensor> xs) {
    const auto prm = unflatten(net, xs);
    const double id = model::id_loss(model::predict(prm, x_id), y_id);
    const auto emb = model::extract(prm, x_ood);
    const Tensor logits = model::classify(prm, model::EmbeddingBatch{perturb_rows(emb.values, p)});
    return id + alpha * model::oe_loss(logits);
  };
  w.gradient = [=](std::span<const Tensor> xs) {
    const auto prm = unflatten(net, xs);
    return flatten(train::loss_gradient(prm, x_id, y_id, &x_ood, &p, 1.0, alpha).grad);
  };
  cases.push_back(std::move(w));

  GradCase pc;
  pc.name = "dal_perturbation";
  pc.inputs = {p};
  pc.value = [=](std::span<const Tensor> xs) {
    const auto obj = train::inner_objectives(net, x_ood, xs[0], gamma);
    return std::accumulate(obj.begin(), obj.end(), 0.0);
  };
  pc.gradient = [=](std::span<const Tensor> xs) {
    const Tensor emb = model::extract(net, x_ood).values;
    return std::vector<Tensor>{train::perturbation_gradient(net, emb, xs[0], gamma)};
  };
  cases.push_back(std::move(pc));

  return cases;
}

}  // namespace dal::gradcheck
