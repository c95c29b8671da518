#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "nap/kfac.hpp"
#include "nap/net.hpp"
#include "nap/tensor.hpp"

namespace nap::oracle {

// Dense curvature is O(n^2) memory and O(n^3) work; fail loudly instead of
// hanging on models that are too big for brute force.
inline constexpr std::size_t kMaxFisherParams = 2000;
inline constexpr std::size_t kMaxHessianParams = 1000;

struct ParamRef {
  int layer;
  std::uint32_t i, j;  // weight row / column
  bool operator==(const ParamRef&) const = default;
};

enum class CurvatureKind { FisherExact, HessianFd, KfacReconstructed };

/// Dense curvature over the flattened unmasked parameters (whole model or
/// one layer's block), with the flat index <-> (layer, i, j) map.
/// Flat ordering is column-stacked within each layer (j-major), matching
/// the Kronecker layout A (x) DS.
struct DenseCurvature {
  Tensor matrix;
  CurvatureKind kind;
  std::vector<ParamRef> params;
};

/// Unmasked parameters of the whole model (or one layer) in flat order.
std::vector<ParamRef> param_map(const Model& model);
std::vector<ParamRef> param_map_layer(const Model& model, int layer);

std::vector<double> flat_weights(const Model& model, const std::vector<ParamRef>& map);

/// Monte-Carlo estimate of the Fisher information matrix: labels are drawn
/// from the model's own predictive distribution, one draw per input per
/// pass. `passes` is the number of label samples per input.
DenseCurvature exact_fisher(const Model& model, const Tensor& inputs, int passes, Rng& rng);

/// Hessian of the mean loss over (inputs, labels) by central finite
/// differences of the gradient; symmetrized.
DenseCurvature finite_diff_hessian(const Model& model, const Tensor& inputs,
                                   const std::vector<int>& labels, double eps);

/// The sub-block of a whole-model curvature for one layer.
DenseCurvature extract_layer_block(const DenseCurvature& full, int layer);

/// Dense reconstruction of a layer's Kronecker-factored Fisher block over
/// its unmasked parameters: entry ((i1,j1),(i2,j2)) = A[j1,j2] * DS[i1,i2],
/// with `damping` added to each factor's diagonal first.
DenseCurvature kfac_reconstructed_block(const LayerState& layer, const LayerStats& stats,
                                        double damping, int layer_index);

struct ObsSolution {
  double loss_increase;
  std::vector<double> delta_w;
};

/// Closed-form single-parameter removal on a dense curvature: loss increase
/// w_q^2 / (2 [H^-1]_qq) and the compensating update
/// -(w_q / [H^-1]_qq) H^-1 e_q. `damping` is added to H's diagonal before
/// inversion; throws linalg::SingularMatrixError if H stays singular.
ObsSolution obs_quadratic(const Tensor& h, const std::vector<double>& w, std::size_t q,
                          double damping = 0.0);

/// Spearman rank correlation with average ranks for ties. Returns nullopt
/// (undefined) when either input is constant; requires length >= 2.
std::optional<double> rank_agreement(const std::vector<double>& a,
                                     const std::vector<double>& b);

}  // namespace nap::oracle
