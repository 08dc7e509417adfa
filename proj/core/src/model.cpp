#include "dal/model.hpp"

#include <algorithm>
#include <cmath>

#include "dal/error.hpp"
#include "dal/rng.hpp"

namespace dal::model {

namespace {

constexpr std::uint64_t kInitStream = 0x1a17;

Tensor affine(const Tensor& x, const Layer& layer) {
  Tensor y = num::matmul(x, layer.weight);
  const std::size_t n = y.rows(), m = y.cols();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) y.at(i, j) += layer.bias[j];
  return y;
}

void relu_inplace(Tensor& t) {
  for (auto& v : t.storage()) v = v > 0.0 ? v : 0.0;
}

void require_input(const Tensor& x, std::size_t dim, const char* what) {
  if (x.rank() != 2 || x.cols() != dim) {
    throw ShapeError(std::string(what) + ": expected [batch, " + std::to_string(dim) + "], got " +
                     num::shape_string(x.shape()));
  }
}

}  // namespace

void Architecture::validate() const {
  if (input_dim == 0) throw InvalidArgument("input dimension must be positive");
  for (auto w : extractor_widths) {
    if (w == 0) throw InvalidArgument("extractor layer widths must be positive");
  }
  if (num_classes < 2) throw InvalidArgument("at least two classes are required");
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto* t : tensors()) n += t->size();
  return n;
}

std::vector<Tensor*> ModelParams::tensors() {
  std::vector<Tensor*> out;
  for (auto& l : extractor) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
  out.push_back(&head.weight);
  out.push_back(&head.bias);
  return out;
}

std::vector<const Tensor*> ModelParams::tensors() const {
  std::vector<const Tensor*> out;
  for (const auto& l : extractor) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
  out.push_back(&head.weight);
  out.push_back(&head.bias);
  return out;
}

void ModelParams::check_finite() const {
  for (const auto* t : tensors()) t->check_finite("model parameters");
}

ModelParams init_params(const Architecture& arch, std::uint64_t seed) {
  arch.validate();
  Rng rng(seed, kInitStream);
  auto make_layer = [&rng](std::size_t fan_in, std::size_t fan_out) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::vector<double> w(fan_in * fan_out);
    for (auto& v : w) v = rng.uniform(-bound, bound);
    return Layer{Tensor({fan_in, fan_out}, std::move(w)), Tensor({fan_out}, 0.0)};
  };
  ModelParams p;
  p.arch = arch;
  std::size_t in = arch.input_dim;
  for (auto width : arch.extractor_widths) {
    p.extractor.push_back(make_layer(in, width));
    in = width;
  }
  p.head = make_layer(in, arch.num_classes);
  return p;
}

EmbeddingBatch extract(const ModelParams& params, const Tensor& x_batch) {
  require_input(x_batch, params.arch.input_dim, "extract");
  Tensor h = x_batch;
  for (std::size_t l = 0; l < params.extractor.size(); ++l) {
    h = affine(h, params.extractor[l]);
    if (l + 1 < params.extractor.size()) relu_inplace(h);
  }
  h.check_finite("embedding");
  return EmbeddingBatch{std::move(h)};
}

Tensor classify(const ModelParams& params, const EmbeddingBatch& emb) {
  require_input(emb.values, params.arch.embedding_dim(), "classify");
  Tensor z = affine(emb.values, params.head);
  z.check_finite("logits");
  return z;
}

double id_loss(const Tensor& logits, std::span<const int> labels) {
  Tape tape;
  auto z = tape.constant(logits);
  return tape.value(tape.softmax_cross_entropy(z, labels)).item();
}

double oe_loss(const Tensor& logits) {
  Tape tape;
  auto z = tape.constant(logits);
  return tape.value(tape.kl_to_uniform(z)).item();
}

std::vector<double> oe_loss_rows(const Tensor& logits) {
  if (logits.rank() != 2 || logits.cols() < 2) {
    throw ShapeError("oe_loss_rows needs [batch, C] logits with C >= 2");
  }
  const std::size_t n = logits.rows(), c = logits.cols();
  const double log_c = std::log(static_cast<double>(c));
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    double mean = 0.0;
    for (double v : logits.row(i)) mean += v;
    mean /= static_cast<double>(c);
    out[i] = std::max(num::logsumexp(logits.row(i)) - mean - log_c, 0.0);
  }
  return out;
}

std::vector<NodeId> ParamNodes::all() const {
  std::vector<NodeId> out;
  for (std::size_t l = 0; l < extractor_weight.size(); ++l) {
    out.push_back(extractor_weight[l]);
    out.push_back(extractor_bias[l]);
  }
  out.push_back(head_weight);
  out.push_back(head_bias);
  return out;
}

ParamNodes record_params(Tape& tape, const ModelParams& params, bool requires_grad) {
  ParamNodes nodes;
  for (const auto& l : params.extractor) {
    nodes.extractor_weight.push_back(tape.leaf(l.weight, requires_grad, "W"));
    nodes.extractor_bias.push_back(tape.leaf(l.bias, requires_grad, "b"));
  }
  nodes.head_weight = tape.leaf(params.head.weight, requires_grad, "head.W");
  nodes.head_bias = tape.leaf(params.head.bias, requires_grad, "head.b");
  return nodes;
}

NodeId extract(Tape& tape, const ModelParams& params, const ParamNodes& nodes, NodeId x_batch) {
  require_input(tape.value(x_batch), params.arch.input_dim, "extract");
  NodeId h = x_batch;
  const std::size_t depth = nodes.extractor_weight.size();
  for (std::size_t l = 0; l < depth; ++l) {
    h = tape.add_row(tape.matmul(h, nodes.extractor_weight[l]), nodes.extractor_bias[l]);
    if (l + 1 < depth) h = tape.relu(h);
  }
  return h;
}

NodeId classify(Tape& tape, const ModelParams& params, const ParamNodes& nodes, NodeId emb) {
  require_input(tape.value(emb), params.arch.embedding_dim(), "classify");
  return tape.add_row(tape.matmul(emb, nodes.head_weight), nodes.head_bias);
}

ModelParams gradients(const Tape& tape, const ModelParams& like, const ParamNodes& nodes) {
  ModelParams g = like;
  auto dst = g.tensors();
  auto src = nodes.all();
  for (std::size_t k = 0; k < dst.size(); ++k) *dst[k] = tape.grad(src[k]);
  return g;
}

void sgd_update(ModelParams& params, const ModelParams& grad, double lr) {
  auto dst = params.tensors();
  auto src = grad.tensors();
  if (dst.size() != src.size()) throw ShapeError("gradient does not match parameters");
  for (std::size_t k = 0; k < dst.size(); ++k) {
    if (!dst[k]->same_shape(*src[k])) throw ShapeError("gradient does not match parameters");
    auto& d = dst[k]->storage();
    const auto& s = src[k]->storage();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] -= lr * s[i];
  }
  params.check_finite();
}

double parameter_distance(const ModelParams& a, const ModelParams& b) {
  auto ta = a.tensors();
  auto tb = b.tensors();
  if (ta.size() != tb.size()) throw ShapeError("parameter sets differ in structure");
  double s = 0.0;
  for (std::size_t k = 0; k < ta.size(); ++k) {
    if (!ta[k]->same_shape(*tb[k])) throw ShapeError("parameter sets differ in structure");
    for (std::size_t i = 0; i < ta[k]->size(); ++i) {
      const double d = (*ta[k])[i] - (*tb[k])[i];
      s += d * d;
    }
  }
  return std::sqrt(s);
}

}  // namespace dal::model
