#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "nap/net.hpp"
#include "nap/tensor.hpp"

namespace nap {

/// Second-moment statistics of one layer, maintained as exponential moving
/// averages: A over homogeneous-augmented inputs, DS over per-sample
/// pre-activation gradients. First update initializes directly to the batch
/// means; later updates blend with the decay factor. Both matrices are
/// symmetrized after every update.
struct LayerStats {
  Tensor A;   // (in+1) x (in+1)
  Tensor DS;  // out x out
  double decay = 0.95;
  std::uint64_t steps_seen = 0;
};

/// Statistics for a whole model, index-aligned with model.layers
/// (nullopt for parameterless layers).
struct ModelStats {
  std::vector<std::optional<LayerStats>> per_layer;
  double decay = 0.95;

  static ModelStats for_model(const Model& model, double decay = 0.95);
  void reset();
  std::uint64_t min_steps_seen() const;
};

/// Folds one batch of capture rows into the EMA statistics.
/// `a_rows` is rows x (in+1), `ds_rows` is rows x out; row counts must match.
void update_stats(LayerStats& stats, const Tensor& a_rows, const Tensor& ds_rows);

/// Updates every parameterized layer's statistics from a BatchCapture.
void update_stats(ModelStats& stats, const Model& model, const BatchCapture& capture);

/// Inverses of the damped Kronecker factors of one layer's Fisher block.
struct KroneckerBlockInverse {
  Tensor A_inv;
  Tensor DS_inv;
  double damping = 0.0;
};

/// Inverts (A + damping*I) and (DS + damping*I); both factors are
/// symmetrized first. Throws linalg::SingularMatrixError carrying a
/// condition estimate (annotated with `label`) if a factor is numerically
/// singular even after damping.
KroneckerBlockInverse block_inverse(const LayerStats& stats, double damping,
                                    const std::string& label = "");

/// Diagonal entry of the inverted Fisher block for weight (i=row, j=col)
/// under column-stacked vec ordering: A_inv[j,j] * DS_inv[i,i].
inline double inv_diag(const KroneckerBlockInverse& block, std::size_t i, std::size_t j) {
  return block.A_inv.at(j, j) * block.DS_inv.at(i, i);
}

/// Samples one label per row from the softmax of the logits (the model's
/// predictive distribution); used to estimate the true Fisher.
std::vector<int> sample_model_labels(const Tensor& logits, Rng& rng);

enum class FisherMode { sampled, empirical };

/// Labels to differentiate against when accumulating Fisher statistics:
/// model-sampled in `sampled` mode, the dataset labels in `empirical` mode.
std::vector<int> fisher_labels(FisherMode mode, const Tensor& logits,
                               const std::vector<int>& dataset_labels, Rng& rng);

}  // namespace nap
