#pragma once

#include <cstdint>
#include <iosfwd>
#include <vector>

#include "nap/kfac.hpp"
#include "nap/net.hpp"

namespace nap {

/// Sparse per-layer importance scores over the remaining (unmasked)
/// parameters. `raw[k]` is the loss increase of removing parameter
/// `index[k]` alone (with compensation); `normalized` divides each layer's
/// raw scores by their sum so scores are comparable across layers.
struct LayerImportance {
  std::vector<std::uint32_t> index;  // flat weight indices, ascending
  std::vector<double> raw;
  std::vector<double> normalized;
  double raw_sum = 0.0;
};

struct ImportanceMap {
  std::vector<LayerImportance> per_layer;  // index-aligned with model.layers
};

struct Victim {
  int layer;
  std::uint32_t flat;
  double weight;  // value before pruning
  double score;   // normalized importance
};

/// Outcome of one fine-grained pruning step.
struct PrunePlan {
  double lambda = 0.0;                  // largest victim score (0 if none)
  std::vector<Victim> victims;          // ordered by (score, layer, flat)
  std::vector<Tensor> delta_w;          // per-layer applied update (empty if none)
  std::vector<std::size_t> layer_victim_counts;
  std::size_t remaining_before = 0;
  std::size_t remaining_after = 0;
};

/// Raw importance of one layer's remaining weights:
/// raw(i,j) = w(i,j)^2 / (2 * A_inv[j,j] * DS_inv[i,i]).
/// Throws if an inverse diagonal entry is not strictly positive.
LayerImportance importance(const LayerState& layer, const KroneckerBlockInverse& block,
                           int layer_index);

/// Fills `normalized` from `raw`; an all-zero layer normalizes to uniform.
void normalize_layer(LayerImportance& li);

/// Global victim selection: the k = floor(p*N) smallest normalized scores
/// (ties by layer index, then flat index). Returns lambda = largest victim
/// score, or 0 when k = 0. p must lie in (0,1).
std::pair<double, std::vector<Victim>> select_victims(const ImportanceMap& imap, double p);

/// Compensating update for removing one weight: the victim column of the
/// inverted Fisher block reshaped to the weight matrix and scaled so the
/// victim coordinate lands exactly at -w.
Tensor delta_w(const LayerState& layer, std::size_t i, std::size_t j,
               const KroneckerBlockInverse& block);

/// Importance map for the whole model from current statistics.
ImportanceMap compute_importance(const Model& model, const ModelStats& stats, double damping);

/// One fine-grained pruning step (Algorithm: score, threshold, mask update,
/// compensating weight update). Mutates the model and returns the plan.
PrunePlan prune_step(Model& model, const ModelStats& stats, double p, double damping);

/// Victim lines as tab-separated text: layer, flat index, weight, score.
void write_plan(std::ostream& os, const PrunePlan& plan);

}  // namespace nap
