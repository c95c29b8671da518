#include "nap/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "nap/linalg.hpp"

namespace nap::oracle {

std::vector<ParamRef> param_map_layer(const Model& model, int layer) {
  const LayerState& l = model.layers[layer];
  std::vector<ParamRef> map;
  map.reserve(l.remaining_count());
  for (std::uint32_t j = 0; j < l.weight_cols(); ++j)
    for (std::uint32_t i = 0; i < l.weight_rows(); ++i)
      if (l.mask.at(i, j) != 0.0) map.push_back({layer, i, j});
  return map;
}

std::vector<ParamRef> param_map(const Model& model) {
  std::vector<ParamRef> map;
  for (std::size_t li = 0; li < model.layers.size(); ++li) {
    if (!model.layers[li].has_params()) continue;
    auto lm = param_map_layer(model, static_cast<int>(li));
    map.insert(map.end(), lm.begin(), lm.end());
  }
  return map;
}

std::vector<double> flat_weights(const Model& model, const std::vector<ParamRef>& map) {
  std::vector<double> w(map.size());
  for (std::size_t k = 0; k < map.size(); ++k)
    w[k] = model.layers[map[k].layer].weights.at(map[k].i, map[k].j);
  return w;
}

namespace {

// Per-sample flat gradient from the capture rows of one sample (conv rows
// span the sample's spatial locations).
void per_sample_gradient(const Model& model, const BatchCapture& capture, std::size_t batch,
                         std::size_t sample, const std::vector<ParamRef>& map,
                         std::vector<double>& g) {
  g.assign(map.size(), 0.0);
  // Locate contiguous runs of the map belonging to one layer.
  std::size_t k = 0;
  while (k < map.size()) {
    const int layer = map[k].layer;
    const auto& entry = capture.per_layer[layer];
    if (!entry) throw std::logic_error("per_sample_gradient: missing capture");
    const Tensor& a = entry->a;
    const Tensor& ds = entry->ds;
    const std::size_t rows_per_sample = a.rows() / batch;
    const std::size_t row0 = sample * rows_per_sample;
    while (k < map.size() && map[k].layer == layer) {
      double acc = 0.0;
      for (std::size_t r = row0; r < row0 + rows_per_sample; ++r)
        acc += ds.at(r, map[k].i) * a.at(r, map[k].j);
      g[k] = acc;
      ++k;
    }
  }
}

}  // namespace

DenseCurvature exact_fisher(const Model& model, const Tensor& inputs, int passes, Rng& rng) {
  if (model.param_count() > kMaxFisherParams)
    throw std::invalid_argument("exact_fisher: " + std::to_string(model.param_count()) +
                                " parameters exceed the guard rail of " +
                                std::to_string(kMaxFisherParams));
  if (passes < 1) throw std::invalid_argument("exact_fisher: passes must be >= 1");

  DenseCurvature out;
  out.kind = CurvatureKind::FisherExact;
  out.params = param_map(model);
  const std::size_t n = out.params.size();
  out.matrix = Tensor::matrix(n, n);

  const std::size_t batch = inputs.rows();
  std::vector<double> g;
  for (int pass = 0; pass < passes; ++pass) {
    ForwardContext ctx = forward(model, inputs);
    const std::vector<int> labels = sample_model_labels(ctx.logits(), rng);
    BackwardResult bw = backward(model, ctx, labels);
    for (std::size_t s = 0; s < batch; ++s) {
      per_sample_gradient(model, bw.capture, batch, s, out.params, g);
      for (std::size_t i = 0; i < n; ++i) {
        const double gi = g[i];
        if (gi == 0.0) continue;
        double* row = out.matrix.row(i);
        for (std::size_t j = 0; j < n; ++j) row[j] += gi * g[j];
      }
    }
  }
  const double inv = 1.0 / (static_cast<double>(batch) * passes);
  for (std::size_t i = 0; i < out.matrix.size(); ++i) out.matrix[i] *= inv;
  linalg::symmetrize(out.matrix);
  return out;
}

namespace {

std::vector<double> flat_gradient(const Model& model, const Tensor& inputs,
                                  const std::vector<int>& labels,
                                  const std::vector<ParamRef>& map) {
  ForwardContext ctx = forward(model, inputs);
  BackwardResult bw = backward(model, ctx, labels, /*want_capture=*/false);
  std::vector<double> g(map.size());
  for (std::size_t k = 0; k < map.size(); ++k)
    g[k] = bw.grads.per_layer[map[k].layer].at(map[k].i, map[k].j);
  return g;
}

}  // namespace

DenseCurvature finite_diff_hessian(const Model& model, const Tensor& inputs,
                                   const std::vector<int>& labels, double eps) {
  if (model.param_count() > kMaxHessianParams)
    throw std::invalid_argument("finite_diff_hessian: " + std::to_string(model.param_count()) +
                                " parameters exceed the guard rail of " +
                                std::to_string(kMaxHessianParams));
  if (eps <= 0.0) throw std::invalid_argument("finite_diff_hessian: eps must be > 0");

  DenseCurvature out;
  out.kind = CurvatureKind::HessianFd;
  out.params = param_map(model);
  const std::size_t n = out.params.size();
  out.matrix = Tensor::matrix(n, n);

  Model work = model;
  for (std::size_t k = 0; k < n; ++k) {
    double& wk = work.layers[out.params[k].layer].weights.at(out.params[k].i, out.params[k].j);
    const double w0 = wk;
    wk = w0 + eps;
    const std::vector<double> gp = flat_gradient(work, inputs, labels, out.params);
    wk = w0 - eps;
    const std::vector<double> gm = flat_gradient(work, inputs, labels, out.params);
    wk = w0;
    const double inv = 1.0 / (2.0 * eps);
    for (std::size_t r = 0; r < n; ++r) {
      const double v = (gp[r] - gm[r]) * inv;
      if (!std::isfinite(v))
        throw std::runtime_error("finite_diff_hessian: non-finite entry at column " +
                                 std::to_string(k));
      out.matrix.at(r, k) = v;
    }
  }
  linalg::symmetrize(out.matrix);
  return out;
}

DenseCurvature extract_layer_block(const DenseCurvature& full, int layer) {
  std::vector<std::size_t> keep;
  for (std::size_t k = 0; k < full.params.size(); ++k)
    if (full.params[k].layer == layer) keep.push_back(k);
  DenseCurvature out;
  out.kind = full.kind;
  out.matrix = Tensor::matrix(keep.size(), keep.size());
  for (std::size_t a = 0; a < keep.size(); ++a) {
    out.params.push_back(full.params[keep[a]]);
    for (std::size_t b = 0; b < keep.size(); ++b)
      out.matrix.at(a, b) = full.matrix.at(keep[a], keep[b]);
  }
  return out;
}

DenseCurvature kfac_reconstructed_block(const LayerState& layer, const LayerStats& stats,
                                        double damping, int layer_index) {
  DenseCurvature out;
  out.kind = CurvatureKind::KfacReconstructed;
  Tensor a = stats.A;
  Tensor ds = stats.DS;
  for (std::size_t i = 0; i < a.rows(); ++i) a.at(i, i) += damping;
  for (std::size_t i = 0; i < ds.rows(); ++i) ds.at(i, i) += damping;

  std::vector<ParamRef> map;
  for (std::uint32_t j = 0; j < layer.weight_cols(); ++j)
    for (std::uint32_t i = 0; i < layer.weight_rows(); ++i)
      if (layer.mask.at(i, j) != 0.0) map.push_back({layer_index, i, j});

  out.matrix = Tensor::matrix(map.size(), map.size());
  for (std::size_t p = 0; p < map.size(); ++p)
    for (std::size_t q = 0; q < map.size(); ++q)
      out.matrix.at(p, q) = a.at(map[p].j, map[q].j) * ds.at(map[p].i, map[q].i);
  out.params = std::move(map);
  return out;
}

ObsSolution obs_quadratic(const Tensor& h, const std::vector<double>& w, std::size_t q,
                          double damping) {
  if (h.rank() != 2 || h.rows() != h.cols())
    throw std::invalid_argument("obs_quadratic: H must be square");
  if (w.size() != h.rows()) throw std::invalid_argument("obs_quadratic: w/H size mismatch");
  if (q >= w.size()) throw std::invalid_argument("obs_quadratic: victim index out of range");

  Tensor eq = Tensor::matrix(h.rows(), 1);
  eq.at(q, 0) = 1.0;
  Tensor x = linalg::spd_solve(h, eq, damping, "obs_quadratic");  // H^-1 e_q
  const double hqq_inv = x.at(q, 0);
  if (!(hqq_inv > 0.0))
    throw std::runtime_error("obs_quadratic: [H^-1]_qq not positive (" +
                             std::to_string(hqq_inv) + ")");
  ObsSolution sol;
  sol.loss_increase = 0.5 * w[q] * w[q] / hqq_inv;
  sol.delta_w.resize(w.size());
  const double scale = -w[q] / hqq_inv;
  for (std::size_t k = 0; k < w.size(); ++k) sol.delta_w[k] = scale * x.at(k, 0);
  return sol;
}

namespace {

// Ranks with ties averaged.
std::vector<double> average_ranks(const std::vector<double>& v) {
  const std::size_t n = v.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(n);
  std::size_t s = 0;
  while (s < n) {
    std::size_t e = s;
    while (e + 1 < n && v[order[e + 1]] == v[order[s]]) ++e;
    const double rank = 0.5 * (static_cast<double>(s) + static_cast<double>(e)) + 1.0;
    for (std::size_t k = s; k <= e; ++k) ranks[order[k]] = rank;
    s = e + 1;
  }
  return ranks;
}

}  // namespace

std::optional<double> rank_agreement(const std::vector<double>& a,
                                     const std::vector<double>& b) {
  if (a.size() != b.size()) throw std::invalid_argument("rank_agreement: length mismatch");
  if (a.size() < 2) throw std::invalid_argument("rank_agreement: need at least 2 scores");
  const auto [amin, amax] = std::minmax_element(a.begin(), a.end());
  const auto [bmin, bmax] = std::minmax_element(b.begin(), b.end());
  if (*amin == *amax || *bmin == *bmax) return std::nullopt;

  const std::vector<double> ra = average_ranks(a), rb = average_ranks(b);
  const double n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += ra[i];
    mb += rb[i];
  }
  ma /= n;
  mb /= n;
  double cov = 0.0, va = 0.0, vb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = ra[i] - ma, db = rb[i] - mb;
    cov += da * db;
    va += da * da;
    vb += db * db;
  }
  return cov / std::sqrt(va * vb);
}

}  // namespace nap::oracle
