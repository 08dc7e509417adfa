#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dal/tensor.hpp"

namespace dal::num {

/// Handle to a node recorded on a Tape.
struct NodeId {
  std::size_t index = static_cast<std::size_t>(-1);
  bool operator==(const NodeId&) const = default;
};

enum class OpKind {
  kLeaf,
  kMatMul,
  kAddRow,
  kAdd,
  kSub,
  kMul,
  kScale,
  kRelu,
  kSum,
  kMean,
  kL1Rows,
  kLogSumExpRows,
  kSoftmaxCrossEntropy,
  kKlToUniform,
  kCustom,
};

const char* op_name(OpKind kind);

/// Local gradient rule. Receives the gradient flowing into the node, the
/// node's forward value, the input values and one accumulator per input
/// (nullptr when that input needs no gradient). Rules must add into the
/// accumulators, never overwrite them.
using BackwardFn = std::function<void(const Tensor& upstream, const Tensor& output,
                                      std::span<const Tensor* const> inputs,
                                      std::span<Tensor* const> input_grads)>;

struct TapeNode {
  OpKind kind = OpKind::kLeaf;
  std::string label;
  std::vector<std::size_t> inputs;
  Tensor value;
  BackwardFn backward;
  bool requires_grad = false;
};

/// Eager reverse-mode tape. Every op evaluates immediately and records the
/// node; `backward` walks the nodes in reverse creation order, which is a
/// topological order, so each node is visited once.
class Tape {
 public:
  NodeId leaf(Tensor value, bool requires_grad = true, std::string label = {});
  NodeId constant(Tensor value) { return leaf(std::move(value), false); }

  /// [n,k] x [k,m] -> [n,m]
  NodeId matmul(NodeId a, NodeId b);
  /// [n,m] + bias[m], bias added to every row.
  NodeId add_row(NodeId a, NodeId bias);
  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  /// Elementwise product of same-shape tensors.
  NodeId mul(NodeId a, NodeId b);
  NodeId scale(NodeId a, double factor);
  NodeId relu(NodeId a);
  NodeId sum(NodeId a);
  NodeId mean(NodeId a);
  /// Per-row l1 norm of a rank-2 tensor: [n,m] -> [n]. The subgradient of
  /// |x| at 0 is taken as 0.
  NodeId l1_rows(NodeId a);
  /// Per-row logsumexp: [n,m] -> [n].
  NodeId logsumexp_rows(NodeId a);
  /// Mean over rows of -log softmax(logits)[label].
  NodeId softmax_cross_entropy(NodeId logits, std::span<const int> labels);
  /// Mean over rows of KL(uniform || softmax(logits)).
  NodeId kl_to_uniform(NodeId logits);
  /// User-defined op with an explicit local gradient rule.
  NodeId custom(std::string label, std::vector<NodeId> inputs, Tensor value, BackwardFn backward);

  /// Propagates d(root)/d(node) to every node that requires a gradient.
  /// The root must be a single-element node on this tape.
  void backward(NodeId root);

  const Tensor& value(NodeId id) const;
  /// Gradient of the last backward root with respect to `id`.
  const Tensor& grad(NodeId id) const;
  bool has_grad(NodeId id) const;

  const TapeNode& node(NodeId id) const;
  std::size_t size() const { return nodes_.size(); }
  void clear();

 private:
  const TapeNode& checked(NodeId id) const;
  NodeId push(OpKind kind, std::vector<std::size_t> inputs, Tensor value, BackwardFn backward);

  std::vector<TapeNode> nodes_;
  std::vector<std::optional<Tensor>> grads_;
  bool has_backward_ = false;
};

}  // namespace dal::num
