#pragma once

// Shared test utilities: random SPD factors, tiny trained nets and
// statistics estimation used across the module suites.

#include <vector>

#include "nap/kfac.hpp"
#include "nap/linalg.hpp"
#include "nap/net.hpp"
#include "nap/pipeline.hpp"
#include "nap/rng.hpp"
#include "nap/tensor.hpp"

namespace test {

inline nap::Tensor random_spd(std::size_t n, nap::Rng& rng, double ridge = 0.5) {
  nap::Tensor b = nap::Tensor::matrix(n, n);
  for (std::size_t i = 0; i < b.size(); ++i) b[i] = rng.normal();
  nap::Tensor m = nap::Tensor::matrix(n, n);
  nap::linalg::matmul_at_b(b.data(), b.data(), m.data(), n, n, n);
  for (std::size_t i = 0; i < n; ++i) m.at(i, i) += ridge;
  return m;
}

inline nap::Tensor random_matrix(std::size_t r, std::size_t c, nap::Rng& rng) {
  nap::Tensor m = nap::Tensor::matrix(r, c);
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = rng.normal();
  return m;
}

struct TrainedNet {
  nap::Model model;
  nap::ModelStats stats;
  nap::DataPair data;
};

/// A 4-8-3 dense net trained on separable gaussian clusters, with K-FAC
/// statistics estimated over `stat_steps` combined steps.
inline TrainedNet trained_483(std::uint64_t seed, int epochs = 6, int stat_steps = 60,
                              nap::FisherMode fisher = nap::FisherMode::sampled) {
  TrainedNet t;
  t.data = nap::load_data("gaussian:n=900,features=4,classes=3,sep=4,ntest=300", seed);
  t.model = nap::parse_arch("input:4 dense:8 relu dense:3");
  nap::Rng rng(seed);
  t.model.init_weights(rng);
  nap::train_epochs(t.model, t.data.train, epochs, 0.1, 0.9, 32, rng, nullptr);
  t.stats = nap::ModelStats::for_model(t.model);
  nap::RunConfig cfg;
  cfg.fisher = fisher;
  cfg.lr = 0.01;  // gentle fine-tuning while estimating
  cfg.momentum = 0.9;
  nap::BatchStream stream(t.data.train, 32, rng);
  nap::SgdState sgd;
  for (int s = 0; s < stat_steps; ++s)
    nap::stats_finetune_step(t.model, t.stats, sgd, stream, cfg, rng);
  return t;
}

/// Mean loss over one fixed batch.
inline double batch_loss(const nap::Model& m, const nap::Tensor& x,
                         const std::vector<int>& y) {
  return nap::mean_nll(nap::forward(m, x).logits(), y);
}

}  // namespace test
