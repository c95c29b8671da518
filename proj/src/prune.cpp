#include "nap/prune.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <stdexcept>

#include "nap/linalg.hpp"

namespace nap {

LayerImportance importance(const LayerState& layer, const KroneckerBlockInverse& block,
                           int layer_index) {
  if (block.A_inv.rows() != layer.weight_cols() || block.DS_inv.rows() != layer.weight_rows())
    throw std::invalid_argument("importance: block geometry mismatch at layer " +
                                std::to_string(layer_index));
  LayerImportance li;
  const std::size_t rows = layer.weight_rows(), cols = layer.weight_cols();
  li.index.reserve(layer.remaining_count());
  li.raw.reserve(li.index.capacity());
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) {
      const std::size_t flat = i * cols + j;
      if (layer.mask[flat] == 0.0) continue;
      const double d = inv_diag(block, i, j);
      if (!(d > 0.0))
        throw std::runtime_error("importance: non-positive inverse diagonal at layer " +
                                 std::to_string(layer_index) +
                                 "; increase damping (got " + std::to_string(d) + ")");
      const double w = layer.weights[flat];
      li.index.push_back(static_cast<std::uint32_t>(flat));
      li.raw.push_back(w * w / (2.0 * d));
    }
  }
  return li;
}

void normalize_layer(LayerImportance& li) {
  double sum = 0.0;
  for (double v : li.raw) sum += v;
  li.raw_sum = sum;
  li.normalized.resize(li.raw.size());
  if (li.raw.empty()) return;
  if (sum == 0.0) {
    const double u = 1.0 / static_cast<double>(li.raw.size());
    std::fill(li.normalized.begin(), li.normalized.end(), u);
  } else {
    const double inv = 1.0 / sum;
    for (std::size_t k = 0; k < li.raw.size(); ++k) li.normalized[k] = li.raw[k] * inv;
  }
}

std::pair<double, std::vector<Victim>> select_victims(const ImportanceMap& imap, double p) {
  if (!(p > 0.0 && p < 1.0))
    throw std::invalid_argument("select_victims: p must be in (0,1), got " + std::to_string(p));
  std::size_t total = 0;
  for (const auto& li : imap.per_layer) total += li.index.size();
  if (total == 0) throw std::invalid_argument("select_victims: no remaining parameters");

  struct Cand {
    double score;
    int layer;
    std::uint32_t flat;
  };
  std::vector<Cand> cands;
  cands.reserve(total);
  for (std::size_t li = 0; li < imap.per_layer.size(); ++li) {
    const LayerImportance& e = imap.per_layer[li];
    for (std::size_t k = 0; k < e.index.size(); ++k)
      cands.push_back({e.normalized[k], static_cast<int>(li), e.index[k]});
  }
  const std::size_t k = static_cast<std::size_t>(std::floor(p * static_cast<double>(total)));
  auto less = [](const Cand& a, const Cand& b) {
    if (a.score != b.score) return a.score < b.score;
    if (a.layer != b.layer) return a.layer < b.layer;
    return a.flat < b.flat;
  };
  std::vector<Victim> victims;
  double lambda = 0.0;
  if (k > 0) {
    std::nth_element(cands.begin(), cands.begin() + (k - 1), cands.end(), less);
    std::sort(cands.begin(), cands.begin() + k, less);
    victims.reserve(k);
    for (std::size_t t = 0; t < k; ++t)
      victims.push_back({cands[t].layer, cands[t].flat, 0.0, cands[t].score});
    lambda = cands[k - 1].score;
  }
  return {lambda, std::move(victims)};
}

Tensor delta_w(const LayerState& layer, std::size_t i, std::size_t j,
               const KroneckerBlockInverse& block) {
  const std::size_t rows = layer.weight_rows(), cols = layer.weight_cols();
  if (layer.mask.at(i, j) == 0.0)
    throw std::invalid_argument("delta_w: victim already masked");
  const double d = inv_diag(block, i, j);
  const double scale = -layer.weights.at(i, j) / d;
  Tensor dw = Tensor::matrix(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    const double dsr = block.DS_inv.at(r, i);
    if (dsr == 0.0) continue;
    const double* arow = block.A_inv.row(j);
    double* drow = dw.row(r);
    for (std::size_t c = 0; c < cols; ++c) drow[c] = scale * dsr * arow[c];
  }
  return dw;
}

ImportanceMap compute_importance(const Model& model, const ModelStats& stats, double damping) {
  ImportanceMap imap;
  imap.per_layer.resize(model.layers.size());
  for (std::size_t li = 0; li < model.layers.size(); ++li) {
    if (!stats.per_layer[li]) continue;
    const KroneckerBlockInverse block =
        block_inverse(*stats.per_layer[li], damping, "layer " + std::to_string(li));
    imap.per_layer[li] = importance(model.layers[li], block, static_cast<int>(li));
    normalize_layer(imap.per_layer[li]);
  }
  return imap;
}

PrunePlan prune_step(Model& model, const ModelStats& stats, double p, double damping) {
  PrunePlan plan;
  plan.remaining_before = model.remaining_count();
  plan.layer_victim_counts.assign(model.layers.size(), 0);
  plan.delta_w.resize(model.layers.size());

  // Keep the block inverses; victim compensation reuses them.
  std::vector<std::optional<KroneckerBlockInverse>> blocks(model.layers.size());
  ImportanceMap imap;
  imap.per_layer.resize(model.layers.size());
  for (std::size_t li = 0; li < model.layers.size(); ++li) {
    if (!stats.per_layer[li]) continue;
    blocks[li] = block_inverse(*stats.per_layer[li], damping, "layer " + std::to_string(li));
    imap.per_layer[li] = importance(model.layers[li], *blocks[li], static_cast<int>(li));
    normalize_layer(imap.per_layer[li]);
  }

  auto [lambda, victims] = select_victims(imap, p);
  plan.lambda = lambda;

  // Victim scale matrix per layer: C[i,j] = -w_ij / invdiag(i,j); the summed
  // compensation for all of a layer's victims is then DS_inv * C * A_inv.
  std::vector<Tensor> scale(model.layers.size());
  for (Victim& v : victims) {
    LayerState& l = model.layers[v.layer];
    v.weight = l.weights[v.flat];
    if (scale[v.layer].empty())
      scale[v.layer] = Tensor::matrix(l.weight_rows(), l.weight_cols());
    const std::size_t i = v.flat / l.weight_cols(), j = v.flat % l.weight_cols();
    scale[v.layer].at(i, j) = -v.weight / inv_diag(*blocks[v.layer], i, j);
    ++plan.layer_victim_counts[v.layer];
  }

  for (std::size_t li = 0; li < model.layers.size(); ++li) {
    if (scale[li].empty()) continue;
    LayerState& l = model.layers[li];
    const KroneckerBlockInverse& b = *blocks[li];
    Tensor tmp = linalg::matmul(b.DS_inv, scale[li]);
    Tensor dw = linalg::matmul(tmp, b.A_inv);
    // Never resurrect previously pruned coordinates.
    for (std::size_t i = 0; i < dw.size(); ++i) {
      dw[i] *= l.mask[i];
      l.weights[i] += dw[i];
    }
    plan.delta_w[li] = std::move(dw);
  }
  for (const Victim& v : victims) {
    LayerState& l = model.layers[v.layer];
    l.weights[v.flat] = 0.0;
    l.mask[v.flat] = 0.0;
  }
  for (LayerState& l : model.layers)
    if (l.has_params()) l.reproject();

  plan.victims = std::move(victims);
  plan.remaining_after = model.remaining_count();
  return plan;
}

void write_plan(std::ostream& os, const PrunePlan& plan) {
  for (const Victim& v : plan.victims)
    os << v.layer << '\t' << v.flat << '\t' << v.weight << '\t' << v.score << '\n';
}

}  // namespace nap
