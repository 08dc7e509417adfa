#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "dal/tape.hpp"
#include "dal/tensor.hpp"

namespace dal::model {

using num::NodeId;
using num::Tape;
using num::Tensor;

/// Shape of f = head o extractor. `extractor_widths` lists the output width of
/// each extractor layer; the last entry is the embedding dimension. An empty
/// list is the identity extractor (embedding == input).
struct Architecture {
  std::size_t input_dim = 2;
  std::vector<std::size_t> extractor_widths{64, 64, 8};
  std::size_t num_classes = 4;

  std::size_t embedding_dim() const {
    return extractor_widths.empty() ? input_dim : extractor_widths.back();
  }
  /// Throws InvalidArgument on zero widths or fewer than two classes.
  void validate() const;
  bool operator==(const Architecture&) const = default;
};

/// Affine layer y = x W + b with W stored [in, out].
struct Layer {
  Tensor weight;
  Tensor bias;
  bool operator==(const Layer&) const = default;
};

/// Parameters w of the predictor. ReLU follows every extractor layer except
/// the last, so embeddings are unconstrained in sign.
struct ModelParams {
  Architecture arch;
  std::vector<Layer> extractor;
  Layer head;

  std::size_t parameter_count() const;
  /// All parameter tensors in a fixed order: extractor (weight, bias)..., head.
  std::vector<Tensor*> tensors();
  std::vector<const Tensor*> tensors() const;
  void check_finite() const;
  bool operator==(const ModelParams&) const = default;
};

struct EmbeddingBatch {
  Tensor values;  // [batch, embedding_dim]
  std::size_t batch_size() const { return values.rows(); }
};

ModelParams init_params(const Architecture& arch, std::uint64_t seed);

EmbeddingBatch extract(const ModelParams& params, const Tensor& x_batch);
Tensor classify(const ModelParams& params, const EmbeddingBatch& emb);
inline Tensor predict(const ModelParams& params, const Tensor& x_batch) {
  return classify(params, extract(params, x_batch));
}

/// Mean cross-entropy of integer labels.
double id_loss(const Tensor& logits, std::span<const int> labels);
/// Mean KL(uniform || softmax(logits)); zero exactly on class-constant rows.
double oe_loss(const Tensor& logits);
/// Per-row KL(uniform || softmax(logits)).
std::vector<double> oe_loss_rows(const Tensor& logits);

/// Parameters recorded as leaves on a tape, in `ModelParams::tensors()` order.
struct ParamNodes {
  std::vector<NodeId> extractor_weight;
  std::vector<NodeId> extractor_bias;
  NodeId head_weight;
  NodeId head_bias;

  std::vector<NodeId> all() const;
};

ParamNodes record_params(Tape& tape, const ModelParams& params, bool requires_grad = true);
NodeId extract(Tape& tape, const ModelParams& params, const ParamNodes& nodes, NodeId x_batch);
NodeId classify(Tape& tape, const ModelParams& params, const ParamNodes& nodes, NodeId emb);

/// Gradient tensors read back from a tape, shaped like the parameters.
ModelParams gradients(const Tape& tape, const ModelParams& like, const ParamNodes& nodes);

/// params <- params - lr * grad
void sgd_update(ModelParams& params, const ModelParams& grad, double lr);

/// Euclidean distance between two parameter sets of identical architecture.
double parameter_distance(const ModelParams& a, const ModelParams& b);

}  // namespace dal::model
