#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "nap/rng.hpp"
#include "nap/tensor.hpp"

namespace nap {

enum class LayerKind { Dense, Conv2D, Relu, Flatten, Add };

const char* layer_kind_name(LayerKind k);

/// Activation geometry between layers: either a flat feature vector or an
/// image volume (channels x height x width).
struct ActShape {
  bool flat = true;
  int features = 0;       // valid when flat
  int c = 0, h = 0, w = 0; // valid when !flat
  int count() const { return flat ? features : c * h * w; }
  bool operator==(const ActShape&) const = default;
  std::string str() const;
};

/// One layer: kind, geometry, and (for Dense/Conv2D) weights plus the
/// persistent pruning mask. The bias is folded in as a homogeneous input
/// coordinate, so Dense weights are (out, in+1) and Conv2D weights are
/// (out_ch, in_ch*kh*kw + 1); the mask always matches the weight shape.
struct LayerState {
  LayerKind kind;
  // Dense
  int in = 0, out = 0;
  // Conv2D
  int in_ch = 0, out_ch = 0, kh = 0, kw = 0, stride = 1, pad = 0;
  // Add: index of the earlier layer whose output is the skip operand
  // (-1 means the model input).
  int skip_src = -2;

  Tensor weights;
  Tensor mask;

  static LayerState dense(int in, int out);
  static LayerState conv2d(int in_ch, int out_ch, int kh, int kw, int stride, int pad);
  static LayerState relu() { return LayerState{LayerKind::Relu}; }
  static LayerState flatten() { return LayerState{LayerKind::Flatten}; }
  static LayerState add(int skip_src);

  bool has_params() const { return kind == LayerKind::Dense || kind == LayerKind::Conv2D; }
  /// Weight matrix geometry: rows = output channels, cols = inputs + 1.
  std::size_t weight_rows() const { return weights.rows(); }
  std::size_t weight_cols() const { return weights.cols(); }
  std::size_t param_count() const { return weights.size(); }
  std::size_t remaining_count() const;

  /// Zeroes every weight whose mask is 0.
  void reproject();
};

/// Sequential layer stack with optional skip edges feeding Add layers.
struct Model {
  ActShape input;
  std::vector<LayerState> layers;
  std::vector<ActShape> out_shapes;  // filled by validate()

  /// Checks geometry compatibility layer by layer and computes out_shapes.
  /// Throws std::invalid_argument naming the offending layer.
  void validate();

  void init_weights(Rng& rng);  // Kaiming-uniform fan-in, bias column zero

  std::size_t param_count() const;
  std::size_t remaining_count() const;
  int logits_dim() const { return out_shapes.back().count(); }
  /// Index of the last parameterized layer (the classifier head).
  int output_layer_index() const;
};

/// Per-layer tensors captured during a forward/backward pair.
///
/// For each parameterized layer: `a` holds homogeneous-augmented input rows
/// (one per sample, or per sample x spatial location for Conv2D) and `ds`
/// the matching per-sample pre-activation gradient rows. The ds rows carry
/// the derivative of the per-sample loss (no batch-mean scaling).
struct BatchCapture {
  struct Entry {
    Tensor a;   // rows x (inputs+1)
    Tensor ds;  // rows x out_channels
  };
  std::vector<std::optional<Entry>> per_layer;
};

/// Forward-pass state: retained activations (and conv patch matrices)
/// needed by backward.
struct ForwardContext {
  std::size_t batch = 0;
  std::vector<Tensor> outputs;  // per layer; conv outputs are (B,C,H,W) flattened row-major
  std::vector<Tensor> patches;  // conv layers only: (B*OH*OW) x (in_ch*kh*kw+1)
  const Tensor& logits() const { return outputs.back(); }
};

struct Gradients {
  std::vector<Tensor> per_layer;  // empty tensor for parameterless layers
};

/// Runs the masked forward pass; input batch is (B, features) for flat
/// inputs or (B, C*H*W) row-major for image inputs.
ForwardContext forward(const Model& model, const Tensor& batch);

/// Backward pass for mean-over-batch softmax cross-entropy. Returns
/// per-layer weight gradients (masked by the layer mask) and the capture
/// of activations / per-sample pre-activation gradients.
///
/// `labels` must have one entry per batch row.
struct BackwardResult {
  Gradients grads;
  BatchCapture capture;
  double mean_loss = 0.0;
};
BackwardResult backward(const Model& model, const ForwardContext& ctx,
                        const std::vector<int>& labels, bool want_capture = true);

/// Momentum buffers for SGD; one tensor per layer, lazily sized.
struct SgdState {
  std::vector<Tensor> velocity;
};

/// v <- momentum*v + g; W <- W - lr*v; W <- W .* mask. lr must be > 0,
/// momentum in [0,1).
void sgd_step(Model& model, const Gradients& grads, SgdState& state, double lr,
              double momentum);

// Loss / prediction helpers.
void softmax_rows(const Tensor& logits, Tensor& probs);
double mean_nll(const Tensor& logits, const std::vector<int>& labels);
std::vector<int> argmax_rows(const Tensor& logits);

/// Builds a validated model (weights zero, masks one) from a compact
/// architecture string, e.g.
///   "input:784 dense:300 relu dense:100 relu dense:10"
///   "input:1x28x28 conv:12x3x3:s2:p1 relu flatten dense:10"
///   "... add:2 ..."  (skip edge from layer 2's output; add:-1 = input)
/// Dense/conv input widths are inferred from the running shape.
Model parse_arch(const std::string& spec);

/// Inverse of parse_arch (geometry only).
std::string arch_string(const Model& model);

}  // namespace nap
