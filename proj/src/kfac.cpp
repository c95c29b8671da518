#include "nap/kfac.hpp"

#include <stdexcept>

#include "nap/linalg.hpp"

namespace nap {

ModelStats ModelStats::for_model(const Model& model, double decay) {
  ModelStats s;
  s.decay = decay;
  s.per_layer.resize(model.layers.size());
  for (std::size_t li = 0; li < model.layers.size(); ++li) {
    const LayerState& l = model.layers[li];
    if (!l.has_params()) continue;
    LayerStats ls;
    ls.decay = decay;
    ls.A = Tensor::matrix(l.weight_cols(), l.weight_cols());
    ls.DS = Tensor::matrix(l.weight_rows(), l.weight_rows());
    s.per_layer[li] = std::move(ls);
  }
  return s;
}

void ModelStats::reset() {
  for (auto& ls : per_layer) {
    if (!ls) continue;
    ls->A.fill(0.0);
    ls->DS.fill(0.0);
    ls->steps_seen = 0;
  }
}

std::uint64_t ModelStats::min_steps_seen() const {
  std::uint64_t m = UINT64_MAX;
  bool any = false;
  for (const auto& ls : per_layer) {
    if (!ls) continue;
    any = true;
    m = std::min(m, ls->steps_seen);
  }
  return any ? m : 0;
}

namespace {

// EMA step on one factor: first batch initializes directly, later batches
// blend as decay*old + (1-decay)*batch_mean; symmetrized afterwards.
void ema_update(Tensor& factor, const Tensor& rows, double decay, bool first) {
  const std::size_t side = factor.rows();
  if (rows.cols() != side)
    throw std::invalid_argument("update_stats: row width " + std::to_string(rows.cols()) +
                                " != factor side " + std::to_string(side));
  Tensor batch = Tensor::matrix(side, side);
  linalg::matmul_at_b(rows.data(), rows.data(), batch.data(), rows.rows(), side, side);
  const double inv_r = 1.0 / static_cast<double>(rows.rows());
  if (first) {
    for (std::size_t i = 0; i < factor.size(); ++i) factor[i] = batch[i] * inv_r;
  } else {
    const double w_new = (1.0 - decay) * inv_r;
    for (std::size_t i = 0; i < factor.size(); ++i)
      factor[i] = decay * factor[i] + w_new * batch[i];
  }
  linalg::symmetrize(factor);
}

}  // namespace

void update_stats(LayerStats& stats, const Tensor& a_rows, const Tensor& ds_rows) {
  if (a_rows.rows() != ds_rows.rows())
    throw std::invalid_argument("update_stats: a/ds row count mismatch");
  if (a_rows.rows() == 0) throw std::invalid_argument("update_stats: empty capture");
  const bool first = stats.steps_seen == 0;
  ema_update(stats.A, a_rows, stats.decay, first);
  ema_update(stats.DS, ds_rows, stats.decay, first);
  ++stats.steps_seen;
}

void update_stats(ModelStats& stats, const Model& model, const BatchCapture& capture) {
  if (stats.per_layer.size() != model.layers.size() ||
      capture.per_layer.size() != model.layers.size())
    throw std::invalid_argument("update_stats: model/stats/capture layer count mismatch");
  for (std::size_t li = 0; li < model.layers.size(); ++li) {
    if (!stats.per_layer[li]) continue;
    if (!capture.per_layer[li])
      throw std::invalid_argument("update_stats: missing capture for layer " +
                                  std::to_string(li));
    update_stats(*stats.per_layer[li], capture.per_layer[li]->a, capture.per_layer[li]->ds);
  }
}

KroneckerBlockInverse block_inverse(const LayerStats& stats, double damping,
                                    const std::string& label) {
  if (stats.steps_seen < 1)
    throw std::invalid_argument("block_inverse: no statistics accumulated" +
                                (label.empty() ? "" : " (" + label + ")"));
  if (damping < 0.0) throw std::invalid_argument("block_inverse: damping must be >= 0");
  Tensor a = stats.A;
  Tensor ds = stats.DS;
  linalg::symmetrize(a);
  linalg::symmetrize(ds);
  KroneckerBlockInverse out;
  out.damping = damping;
  out.A_inv = linalg::spd_inverse(a, damping, label.empty() ? "A" : label + ".A");
  out.DS_inv = linalg::spd_inverse(ds, damping, label.empty() ? "DS" : label + ".DS");
  return out;
}

std::vector<int> sample_model_labels(const Tensor& logits, Rng& rng) {
  Tensor probs;
  softmax_rows(logits, probs);
  std::vector<int> labels(logits.rows());
  for (std::size_t r = 0; r < logits.rows(); ++r)
    labels[r] = rng.categorical(probs.row(r), static_cast<int>(probs.cols()));
  return labels;
}

std::vector<int> fisher_labels(FisherMode mode, const Tensor& logits,
                               const std::vector<int>& dataset_labels, Rng& rng) {
  if (mode == FisherMode::empirical) return dataset_labels;
  return sample_model_labels(logits, rng);
}

}  // namespace nap
