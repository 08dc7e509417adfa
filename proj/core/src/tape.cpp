#include "dal/tape.hpp"

#include <algorithm>
#include <cmath>

#include "dal/error.hpp"

namespace dal::num {

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::kLeaf: return "leaf";
    case OpKind::kMatMul: return "matmul";
    case OpKind::kAddRow: return "add_row";
    case OpKind::kAdd: return "add";
    case OpKind::kSub: return "sub";
    case OpKind::kMul: return "mul";
    case OpKind::kScale: return "scale";
    case OpKind::kRelu: return "relu";
    case OpKind::kSum: return "sum";
    case OpKind::kMean: return "mean";
    case OpKind::kL1Rows: return "l1_rows";
    case OpKind::kLogSumExpRows: return "logsumexp_rows";
    case OpKind::kSoftmaxCrossEntropy: return "softmax_cross_entropy";
    case OpKind::kKlToUniform: return "kl_to_uniform";
    case OpKind::kCustom: return "custom";
  }
  return "unknown";
}

namespace {

// out[n,m] += g[n,m] * b[k,m]^T  -> [n,k]
void accumulate_grad_lhs(const Tensor& g, const Tensor& b, Tensor& out) {
  const std::size_t n = g.rows(), m = g.cols(), k = b.rows();
  const auto& G = g.storage();
  const auto& B = b.storage();
  auto& O = out.storage();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      double acc = 0.0;
      const double* grow = G.data() + i * m;
      const double* brow = B.data() + p * m;
      for (std::size_t j = 0; j < m; ++j) acc += grow[j] * brow[j];
      O[i * k + p] += acc;
    }
  }
}

// out[k,m] += a[n,k]^T * g[n,m]
void accumulate_grad_rhs(const Tensor& a, const Tensor& g, Tensor& out) {
  const std::size_t n = a.rows(), k = a.cols(), m = g.cols();
  const auto& A = a.storage();
  const auto& G = g.storage();
  auto& O = out.storage();
  for (std::size_t i = 0; i < n; ++i) {
    const double* grow = G.data() + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = A[i * k + p];
      if (aip == 0.0) continue;
      double* orow = O.data() + p * m;
      for (std::size_t j = 0; j < m; ++j) orow[j] += aip * grow[j];
    }
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

void require_rank2(const Tensor& a, const char* op) {
  if (a.rank() != 2) throw ShapeError(std::string(op) + ": expected a rank-2 tensor");
}

}  // namespace

NodeId Tape::push(OpKind kind, std::vector<std::size_t> inputs, Tensor value, BackwardFn backward) {
  value.check_finite(op_name(kind));
  bool needs_grad = false;
  for (auto i : inputs) needs_grad = needs_grad || nodes_[i].requires_grad;
  TapeNode node;
  node.kind = kind;
  node.label = op_name(kind);
  node.inputs = std::move(inputs);
  node.value = std::move(value);
  node.backward = std::move(backward);
  node.requires_grad = needs_grad;
  nodes_.push_back(std::move(node));
  return NodeId{nodes_.size() - 1};
}

const TapeNode& Tape::checked(NodeId id) const {
  if (id.index >= nodes_.size()) {
    throw InvalidArgument("node " + std::to_string(id.index) + " is not on this tape");
  }
  return nodes_[id.index];
}

const TapeNode& Tape::node(NodeId id) const { return checked(id); }
const Tensor& Tape::value(NodeId id) const { return checked(id).value; }

NodeId Tape::leaf(Tensor value, bool requires_grad, std::string label) {
  if (value.size() == 0) throw ShapeError("leaf tensor is empty");
  value.check_finite("leaf");
  TapeNode node;
  node.kind = OpKind::kLeaf;
  node.label = label.empty() ? "leaf" : std::move(label);
  node.value = std::move(value);
  node.requires_grad = requires_grad;
  nodes_.push_back(std::move(node));
  return NodeId{nodes_.size() - 1};
}

NodeId Tape::matmul(NodeId a, NodeId b) {
  Tensor v = num::matmul(checked(a).value, checked(b).value);
  return push(OpKind::kMatMul, {a.index, b.index}, std::move(v),
              [](const Tensor& g, const Tensor&, std::span<const Tensor* const> in,
                 std::span<Tensor* const> dg) {
                if (dg[0]) accumulate_grad_lhs(g, *in[1], *dg[0]);
                if (dg[1]) accumulate_grad_rhs(*in[0], g, *dg[1]);
              });
}

NodeId Tape::add_row(NodeId a, NodeId bias) {
  const Tensor& x = checked(a).value;
  const Tensor& b = checked(bias).value;
  require_rank2(x, "add_row");
  if (b.rank() != 1 || b.size() != x.cols()) {
    throw ShapeError("add_row: bias " + shape_string(b.shape()) + " does not match " +
                     shape_string(x.shape()));
  }
  Tensor v = x;
  const std::size_t n = x.rows(), m = x.cols();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) v.at(i, j) += b[j];
  return push(OpKind::kAddRow, {a.index, bias.index}, std::move(v),
              [n, m](const Tensor& g, const Tensor&, std::span<const Tensor* const>,
                     std::span<Tensor* const> dg) {
                if (dg[0])
                  for (std::size_t k = 0; k < g.size(); ++k) (*dg[0])[k] += g[k];
                if (dg[1])
                  for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < m; ++j) (*dg[1])[j] += g.at(i, j);
              });
}

NodeId Tape::add(NodeId a, NodeId b) {
  const Tensor& x = checked(a).value;
  const Tensor& y = checked(b).value;
  require_same_shape(x, y, "add");
  Tensor v = x;
  for (std::size_t k = 0; k < v.size(); ++k) v[k] += y[k];
  return push(OpKind::kAdd, {a.index, b.index}, std::move(v),
              [](const Tensor& g, const Tensor&, std::span<const Tensor* const>,
                 std::span<Tensor* const> dg) {
                for (auto* d : dg)
                  if (d)
                    for (std::size_t k = 0; k < g.size(); ++k) (*d)[k] += g[k];
              });
}

NodeId Tape::sub(NodeId a, NodeId b) {
  const Tensor& x = checked(a).value;
  const Tensor& y = checked(b).value;
  require_same_shape(x, y, "sub");
  Tensor v = x;
  for (std::size_t k = 0; k < v.size(); ++k) v[k] -= y[k];
  return push(OpKind::kSub, {a.index, b.index}, std::move(v),
              [](const Tensor& g, const Tensor&, std::span<const Tensor* const>,
                 std::span<Tensor* const> dg) {
                if (dg[0])
                  for (std::size_t k = 0; k < g.size(); ++k) (*dg[0])[k] += g[k];
                if (dg[1])
                  for (std::size_t k = 0; k < g.size(); ++k) (*dg[1])[k] -= g[k];
              });
}

NodeId Tape::mul(NodeId a, NodeId b) {
  const Tensor& x = checked(a).value;
  const Tensor& y = checked(b).value;
  require_same_shape(x, y, "mul");
  Tensor v = x;
  for (std::size_t k = 0; k < v.size(); ++k) v[k] *= y[k];
  return push(OpKind::kMul, {a.index, b.index}, std::move(v),
              [](const Tensor& g, const Tensor&, std::span<const Tensor* const> in,
                 std::span<Tensor* const> dg) {
                if (dg[0])
                  for (std::size_t k = 0; k < g.size(); ++k) (*dg[0])[k] += g[k] * (*in[1])[k];
                if (dg[1])
                  for (std::size_t k = 0; k < g.size(); ++k) (*dg[1])[k] += g[k] * (*in[0])[k];
              });
}

NodeId Tape::scale(NodeId a, double factor) {
  if (!std::isfinite(factor)) throw NumericError("scale factor is not finite");
  Tensor v = checked(a).value;
  for (auto& x : v.storage()) x *= factor;
  return push(OpKind::kScale, {a.index}, std::move(v),
              [factor](const Tensor& g, const Tensor&, std::span<const Tensor* const>,
                       std::span<Tensor* const> dg) {
                if (dg[0])
                  for (std::size_t k = 0; k < g.size(); ++k) (*dg[0])[k] += factor * g[k];
              });
}

NodeId Tape::relu(NodeId a) {
  Tensor v = checked(a).value;
  for (auto& x : v.storage()) x = x > 0.0 ? x : 0.0;
  return push(OpKind::kRelu, {a.index}, std::move(v),
              [](const Tensor& g, const Tensor&, std::span<const Tensor* const> in,
                 std::span<Tensor* const> dg) {
                if (dg[0])
                  for (std::size_t k = 0; k < g.size(); ++k)
                    if ((*in[0])[k] > 0.0) (*dg[0])[k] += g[k];
              });
}

NodeId Tape::sum(NodeId a) {
  double s = 0.0;
  for (double x : checked(a).value.data()) s += x;
  return push(OpKind::kSum, {a.index}, Tensor::scalar(s),
              [](const Tensor& g, const Tensor&, std::span<const Tensor* const>,
                 std::span<Tensor* const> dg) {
                if (dg[0])
                  for (auto& x : dg[0]->storage()) x += g[0];
              });
}

NodeId Tape::mean(NodeId a) {
  const Tensor& x = checked(a).value;
  double s = 0.0;
  for (double v : x.data()) s += v;
  const double inv = 1.0 / static_cast<double>(x.size());
  return push(OpKind::kMean, {a.index}, Tensor::scalar(s * inv),
              [inv](const Tensor& g, const Tensor&, std::span<const Tensor* const>,
                    std::span<Tensor* const> dg) {
                if (dg[0])
                  for (auto& v : dg[0]->storage()) v += g[0] * inv;
              });
}

NodeId Tape::l1_rows(NodeId a) {
  const Tensor& x = checked(a).value;
  require_rank2(x, "l1_rows");
  const std::size_t n = x.rows();
  std::vector<double> out(n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (double v : x.row(i)) out[i] += std::abs(v);
  return push(OpKind::kL1Rows, {a.index}, Tensor({n}, std::move(out)),
              [](const Tensor& g, const Tensor&, std::span<const Tensor* const> in,
                 std::span<Tensor* const> dg) {
                if (!dg[0]) return;
                const Tensor& xin = *in[0];
                const std::size_t m = xin.cols();
                for (std::size_t k = 0; k < xin.size(); ++k) {
                  const double v = xin[k];
                  const double sgn = v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0);
                  (*dg[0])[k] += g[k / m] * sgn;
                }
              });
}

NodeId Tape::logsumexp_rows(NodeId a) {
  const Tensor& x = checked(a).value;
  require_rank2(x, "logsumexp_rows");
  Tensor v = num::logsumexp(x, 1);
  return push(OpKind::kLogSumExpRows, {a.index}, std::move(v),
              [](const Tensor& g, const Tensor& out, std::span<const Tensor* const> in,
                 std::span<Tensor* const> dg) {
                if (!dg[0]) return;
                const Tensor& xin = *in[0];
                const std::size_t n = xin.rows(), m = xin.cols();
                for (std::size_t i = 0; i < n; ++i)
                  for (std::size_t j = 0; j < m; ++j)
                    dg[0]->at(i, j) += g[i] * std::exp(xin.at(i, j) - out[i]);
              });
}

NodeId Tape::softmax_cross_entropy(NodeId logits, std::span<const int> labels) {
  const Tensor& z = checked(logits).value;
  require_rank2(z, "softmax_cross_entropy");
  const std::size_t n = z.rows(), c = z.cols();
  if (labels.size() != n) {
    throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(n) + " rows");
  }
  std::vector<int> y(labels.begin(), labels.end());
  std::vector<double> lse(n);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (y[i] < 0 || static_cast<std::size_t>(y[i]) >= c) {
      throw InvalidArgument("label " + std::to_string(y[i]) + " outside [0, " + std::to_string(c) +
                            ")");
    }
    lse[i] = num::logsumexp(z.row(i));
    total += lse[i] - z.at(i, static_cast<std::size_t>(y[i]));
  }
  const double inv = 1.0 / static_cast<double>(n);
  return push(OpKind::kSoftmaxCrossEntropy, {logits.index}, Tensor::scalar(total * inv),
              [y = std::move(y), lse = std::move(lse), inv](
                  const Tensor& g, const Tensor&, std::span<const Tensor* const> in,
                  std::span<Tensor* const> dg) {
                if (!dg[0]) return;
                const Tensor& zin = *in[0];
                const std::size_t rows = zin.rows(), cols = zin.cols();
                const double s = g[0] * inv;
                for (std::size_t i = 0; i < rows; ++i) {
                  for (std::size_t j = 0; j < cols; ++j) {
                    double p = std::exp(zin.at(i, j) - lse[i]);
                    if (static_cast<int>(j) == y[i]) p -= 1.0;
                    dg[0]->at(i, j) += s * p;
                  }
                }
              });
}

NodeId Tape::kl_to_uniform(NodeId logits) {
  const Tensor& z = checked(logits).value;
  require_rank2(z, "kl_to_uniform");
  const std::size_t n = z.rows(), c = z.cols();
  if (c < 2) throw ShapeError("kl_to_uniform needs at least two classes");
  const double log_c = std::log(static_cast<double>(c));
  std::vector<double> lse(n);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    lse[i] = num::logsumexp(z.row(i));
    double mean = 0.0;
    for (double v : z.row(i)) mean += v;
    mean /= static_cast<double>(c);
    // lse - mean is >= log C by Jensen; clamp rounding so the loss stays >= 0.
    total += std::max(lse[i] - mean - log_c, 0.0);
  }
  const double inv = 1.0 / static_cast<double>(n);
  return push(OpKind::kKlToUniform, {logits.index}, Tensor::scalar(total * inv),
              [lse = std::move(lse), inv](const Tensor& g, const Tensor&,
                                          std::span<const Tensor* const> in,
                                          std::span<Tensor* const> dg) {
                if (!dg[0]) return;
                const Tensor& zin = *in[0];
                const std::size_t rows = zin.rows(), cols = zin.cols();
                const double s = g[0] * inv;
                const double u = 1.0 / static_cast<double>(cols);
                for (std::size_t i = 0; i < rows; ++i)
                  for (std::size_t j = 0; j < cols; ++j)
                    dg[0]->at(i, j) += s * (std::exp(zin.at(i, j) - lse[i]) - u);
              });
}

NodeId Tape::custom(std::string label, std::vector<NodeId> inputs, Tensor value,
                    BackwardFn backward) {
  std::vector<std::size_t> idx;
  idx.reserve(inputs.size());
  for (auto id : inputs) {
    checked(id);
    idx.push_back(id.index);
  }
  NodeId id = push(OpKind::kCustom, std::move(idx), std::move(value), std::move(backward));
  nodes_[id.index].label = std::move(label);
  return id;
}

void Tape::backward(NodeId root) {
  const TapeNode& r = checked(root);
  if (r.value.size() != 1) {
    throw ShapeError("backward root must be scalar, got " + shape_string(r.value.shape()));
  }
  grads_.assign(nodes_.size(), std::nullopt);
  grads_[root.index] = Tensor(r.value.shape(), 1.0);

  std::vector<const Tensor*> in_values;
  std::vector<Tensor*> in_grads;
  for (std::size_t k = root.index + 1; k-- > 0;) {
    const TapeNode& node = nodes_[k];
    if (!grads_[k] || !node.requires_grad || !node.backward) continue;
    in_values.clear();
    in_grads.clear();
    for (auto i : node.inputs) {
      in_values.push_back(&nodes_[i].value);
      if (nodes_[i].requires_grad) {
        if (!grads_[i]) grads_[i] = Tensor(nodes_[i].value.shape(), 0.0);
        in_grads.push_back(&*grads_[i]);
      } else {
        in_grads.push_back(nullptr);
      }
    }
    node.backward(*grads_[k], node.value, in_values, in_grads);
  }
  for (std::size_t k = 0; k < nodes_.size(); ++k) {
    if (!grads_[k] && nodes_[k].kind == OpKind::kLeaf && nodes_[k].requires_grad) {
      grads_[k] = Tensor(nodes_[k].value.shape(), 0.0);
    }
    if (grads_[k]) grads_[k]->check_finite(std::string("gradient of ") + nodes_[k].label);
  }
  has_backward_ = true;
}

bool Tape::has_grad(NodeId id) const {
  return has_backward_ && id.index < grads_.size() && grads_[id.index].has_value();
}

const Tensor& Tape::grad(NodeId id) const {
  const TapeNode& n = checked(id);
  if (!has_backward_) throw InvalidArgument("grad() requested before backward()");
  if (id.index >= grads_.size() || !grads_[id.index]) {
    if (!n.requires_grad) throw InvalidArgument("node '" + n.label + "' does not require grad");
    throw InvalidArgument("node '" + n.label + "' has no gradient from the last backward root");
  }
  return *grads_[id.index];
}

void Tape::clear() {
  nodes_.clear();
  grads_.clear();
  has_backward_ = false;
}

}  // namespace dal::num
