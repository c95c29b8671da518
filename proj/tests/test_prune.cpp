#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "helpers.hpp"
#include "nap/linalg.hpp"
#include "nap/oracle.hpp"
#include "nap/prune.hpp"

using namespace nap;

namespace {

// A layer with random weights plus exact (steps_seen=1) random SPD factors.
struct QuadraticSetup {
  Model model;
  ModelStats stats;
  KroneckerBlockInverse block;
};

QuadraticSetup make_setup(std::uint64_t seed, int in = 4, int out = 3, double damping = 0.0) {
  QuadraticSetup q;
  q.model = parse_arch("input:" + std::to_string(in) + " dense:" + std::to_string(out));
  Rng rng(seed);
  q.model.init_weights(rng);
  for (std::size_t r = 0; r < q.model.layers[0].weight_rows(); ++r)
    q.model.layers[0].weights.at(r, in) = rng.normal();  // nonzero biases too
  q.stats = ModelStats::for_model(q.model);
  q.stats.per_layer[0]->A = test::random_spd(in + 1, rng);
  q.stats.per_layer[0]->DS = test::random_spd(out, rng);
  q.stats.per_layer[0]->steps_seen = 1;
  q.block = block_inverse(*q.stats.per_layer[0], damping);
  return q;
}

// Flat column-stacked weight vector of one layer (all entries).
std::vector<double> flat_col_stacked(const LayerState& l) {
  std::vector<double> w;
  for (std::size_t j = 0; j < l.weight_cols(); ++j)
    for (std::size_t i = 0; i < l.weight_rows(); ++i) w.push_back(l.weights.at(i, j));
  return w;
}

}  // namespace

TEST_CASE("importance: zero weights cost nothing, diagonal case matches by hand") {
  Model m = parse_arch("input:1 dense:1");
  m.layers[0].weights = Tensor::from_data({1, 2}, {2.0, 0.0});
  ModelStats stats = ModelStats::for_model(m);
  stats.per_layer[0]->A = Tensor::from_data({2, 2}, {2.0, 0, 0, 2.0});    // A_inv = 0.5 I
  stats.per_layer[0]->DS = Tensor::from_data({1, 1}, {4.0});              // DS_inv = 0.25
  stats.per_layer[0]->steps_seen = 1;
  const auto block = block_inverse(*stats.per_layer[0], 0.0);
  const LayerImportance li = importance(m.layers[0], block, 0);
  REQUIRE(li.index.size() == 2);
  // w=2 at (0,0): 4 / (2 * 0.5*0.25) = 16;  w=0 bias: 0
  CHECK(li.raw[0] == doctest::Approx(16.0));
  CHECK(li.raw[1] == 0.0);
}

TEST_CASE("importance values are nonnegative and masked entries are absent") {
  QuadraticSetup q = make_setup(3);
  q.model.layers[0].mask.at(1, 2) = 0.0;
  q.model.layers[0].reproject();
  const LayerImportance li = importance(q.model.layers[0], q.block, 0);
  CHECK(li.index.size() == q.model.layers[0].remaining_count());
  for (double v : li.raw) CHECK(v >= 0.0);
  const std::uint32_t masked_flat = 1 * q.model.layers[0].weight_cols() + 2;
  CHECK(std::find(li.index.begin(), li.index.end(), masked_flat) == li.index.end());
}

TEST_CASE("importance equals the loss increase of the constrained quadratic") {
  // Loss = 1/2 dw^T H dw with H = kron(A, DS): zeroing w_q and re-minimizing
  // the rest must cost exactly the closed form.
  QuadraticSetup q = make_setup(11);
  const LayerState& l = q.model.layers[0];
  const auto dense =
      oracle::kfac_reconstructed_block(l, *q.stats.per_layer[0], 0.0, 0);
  const auto w = oracle::flat_weights(q.model, dense.params);
  const LayerImportance li = importance(l, q.block, 0);

  for (std::size_t qi = 0; qi < dense.params.size(); ++qi) {
    // independent route: eliminate the victim coordinate
    const std::size_t n = w.size();
    Tensor hrr = Tensor::matrix(n - 1, n - 1), hrq = Tensor::matrix(n - 1, 1);
    std::size_t ri = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (i == qi) continue;
      std::size_t ci = 0;
      for (std::size_t j = 0; j < n; ++j) {
        if (j == qi) continue;
        hrr.at(ri, ci++) = dense.matrix.at(i, j);
      }
      hrq.at(ri++, 0) = dense.matrix.at(i, qi);
    }
    const Tensor rest = linalg::spd_solve(hrr, hrq);
    std::vector<double> delta(n, 0.0);
    delta[qi] = -w[qi];
    ri = 0;
    for (std::size_t i = 0; i < n; ++i)
      if (i != qi) delta[i] = rest.at(ri++, 0) * w[qi];
    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        loss += 0.5 * delta[i] * dense.matrix.at(i, j) * delta[j];

    const std::size_t flat = dense.params[qi].i * l.weight_cols() + dense.params[qi].j;
    const auto it = std::lower_bound(li.index.begin(), li.index.end(), flat);
    REQUIRE(it != li.index.end());
    const double raw = li.raw[static_cast<std::size_t>(it - li.index.begin())];
    CHECK(raw == doctest::Approx(loss).epsilon(1e-6));
  }
}

TEST_CASE("normalize_layer: proportional split, degenerate uniform, unit sum") {
  LayerImportance li;
  li.index = {0, 1};
  li.raw = {4.0, 12.0};
  normalize_layer(li);
  CHECK(li.normalized[0] == doctest::Approx(0.25));
  CHECK(li.normalized[1] == doctest::Approx(0.75));
  CHECK(li.raw_sum == doctest::Approx(16.0));

  LayerImportance zeros;
  zeros.index = {0, 1, 2, 3};
  zeros.raw = {0, 0, 0, 0};
  normalize_layer(zeros);
  for (double v : zeros.normalized) CHECK(v == doctest::Approx(0.25));

  Rng rng(5);
  LayerImportance random;
  for (std::uint32_t k = 0; k < 100; ++k) {
    random.index.push_back(k);
    random.raw.push_back(rng.uniform());
  }
  normalize_layer(random);
  double sum = 0.0;
  for (double v : random.normalized) sum += v;
  CHECK(std::abs(sum - 1.0) < 1e-10);
}

TEST_CASE("normalization is invariant to per-layer scaling") {
  Rng rng(7);
  LayerImportance a;
  for (std::uint32_t k = 0; k < 50; ++k) {
    a.index.push_back(k);
    a.raw.push_back(rng.uniform() + 0.1);
  }
  LayerImportance b = a;
  for (double& v : b.raw) v *= 37.5;
  normalize_layer(a);
  normalize_layer(b);
  for (std::size_t k = 0; k < a.normalized.size(); ++k)
    CHECK(a.normalized[k] == doctest::Approx(b.normalized[k]).epsilon(1e-12));
}

TEST_CASE("select_victims: global k smallest with deterministic ties") {
  ImportanceMap imap;
  imap.per_layer.resize(2);
  imap.per_layer[0].index = {0, 1};
  imap.per_layer[0].normalized = {0.1, 0.9};
  imap.per_layer[1].index = {0, 1};
  imap.per_layer[1].normalized = {0.2, 0.8};

  SUBCASE("hand example: two smallest across layers") {
    const auto [lambda, victims] = select_victims(imap, 0.5);
    REQUIRE(victims.size() == 2);
    CHECK(victims[0].layer == 0);
    CHECK(victims[0].flat == 0);
    CHECK(victims[1].layer == 1);
    CHECK(victims[1].flat == 0);
    CHECK(lambda == doctest::Approx(0.2));
  }
  SUBCASE("k = 0 yields an empty set and lambda 0") {
    const auto [lambda, victims] = select_victims(imap, 0.2);  // floor(0.8) = 0
    CHECK(victims.empty());
    CHECK(lambda == 0.0);
  }
  SUBCASE("p outside (0,1) rejected") {
    CHECK_THROWS_AS((void)select_victims(imap, 0.0), std::invalid_argument);
    CHECK_THROWS_AS((void)select_victims(imap, 1.0), std::invalid_argument);
  }
}

TEST_CASE("select_victims agrees with a full-sort oracle on 1000 random scores") {
  Rng rng(13);
  ImportanceMap imap;
  imap.per_layer.resize(3);
  struct Ref {
    double score;
    int layer;
    std::uint32_t flat;
  };
  std::vector<Ref> all;
  for (int li = 0; li < 3; ++li) {
    for (std::uint32_t k = 0; k < 334 && all.size() < 1000; ++k) {
      const double s = rng.uniform();
      imap.per_layer[li].index.push_back(k);
      imap.per_layer[li].normalized.push_back(s);
      all.push_back({s, li, k});
    }
  }
  REQUIRE(all.size() == 1000);
  const auto [lambda, victims] = select_victims(imap, 0.3);
  CHECK(victims.size() == 300);
  std::sort(all.begin(), all.end(), [](const Ref& a, const Ref& b) {
    if (a.score != b.score) return a.score < b.score;
    if (a.layer != b.layer) return a.layer < b.layer;
    return a.flat < b.flat;
  });
  for (std::size_t k = 0; k < 300; ++k) {
    CHECK(victims[k].layer == all[k].layer);
    CHECK(victims[k].flat == all[k].flat);
    CHECK(victims[k].score == doctest::Approx(all[k].score));
  }
  CHECK(lambda == doctest::Approx(all[299].score));
  // every non-victim scores at least lambda
  for (std::size_t k = 300; k < all.size(); ++k) CHECK(all[k].score >= lambda);
}

TEST_CASE("delta_w: diagonal curvature reduces to plain deletion") {
  Model m = parse_arch("input:2 dense:2");
  Rng rng(17);
  m.init_weights(rng);
  ModelStats stats = ModelStats::for_model(m);
  stats.per_layer[0]->A = linalg::identity(3);
  stats.per_layer[0]->DS = linalg::identity(2);
  stats.per_layer[0]->steps_seen = 1;
  const auto block = block_inverse(*stats.per_layer[0], 0.0);
  const Tensor dw = delta_w(m.layers[0], 1, 0, block);
  for (std::size_t i = 0; i < dw.rows(); ++i)
    for (std::size_t j = 0; j < dw.cols(); ++j) {
      if (i == 1 && j == 0)
        CHECK(dw.at(i, j) == doctest::Approx(-m.layers[0].weights.at(1, 0)));
      else
        CHECK(dw.at(i, j) == 0.0);
    }
}

TEST_CASE("delta_w matches the dense Lagrangian solution and kills the victim") {
  QuadraticSetup q = make_setup(19);
  const LayerState& l = q.model.layers[0];
  const auto dense = oracle::kfac_reconstructed_block(l, *q.stats.per_layer[0], 0.0, 0);
  const auto w = oracle::flat_weights(q.model, dense.params);

  for (std::size_t qi = 0; qi < dense.params.size(); ++qi) {
    const auto sol = oracle::obs_quadratic(dense.matrix, w, qi);
    const std::size_t i = dense.params[qi].i, j = dense.params[qi].j;
    const Tensor dw = delta_w(l, i, j, q.block);
    for (std::size_t k = 0; k < dense.params.size(); ++k) {
      const double got = dw.at(dense.params[k].i, dense.params[k].j);
      CHECK(got == doctest::Approx(sol.delta_w[k]).epsilon(1e-8).scale(1.0));
    }
    CHECK(std::abs(l.weights.at(i, j) + dw.at(i, j)) < 1e-12);
  }
}

TEST_CASE("prune_step: victim count, exact kill, layer locality, plan bookkeeping") {
  test::TrainedNet t = test::trained_483(23);
  Model& m = t.model;
  const std::size_t before = m.remaining_count();
  const std::size_t expect_k = static_cast<std::size_t>(0.25 * before);
  Model snapshot = m;

  PrunePlan plan = prune_step(m, t.stats, 0.25, 1e-3);
  CHECK(plan.victims.size() == expect_k);
  CHECK(plan.remaining_before == before);
  CHECK(plan.remaining_after == before - expect_k);
  CHECK(m.remaining_count() == before - expect_k);
  CHECK(plan.lambda >= 0.0);
  for (const Victim& v : plan.victims) {
    CHECK(m.layers[v.layer].weights[v.flat] == 0.0);
    CHECK(m.layers[v.layer].mask[v.flat] == 0.0);
  }
  // layers without victims must be untouched
  for (std::size_t li = 0; li < m.layers.size(); ++li) {
    if (!m.layers[li].has_params() || plan.layer_victim_counts[li] > 0) continue;
    CHECK(m.layers[li].weights.vec() == snapshot.layers[li].weights.vec());
  }
  // ordered victims: scores ascending
  for (std::size_t k = 1; k < plan.victims.size(); ++k)
    CHECK(plan.victims[k - 1].score <= plan.victims[k].score);

  SUBCASE("repeated halving follows floor bookkeeping exactly") {
    std::size_t rem = m.remaining_count();
    for (int it = 0; it < 3; ++it) {
      PrunePlan p2 = prune_step(m, t.stats, 0.5, 1e-3);
      rem -= rem / 2;  // floor(0.5 * rem) victims
      CHECK(m.remaining_count() == rem);
      CHECK(p2.remaining_after == rem);
    }
  }
  SUBCASE("previously pruned weights are never resurrected") {
    const std::vector<Victim> first = plan.victims;
    (void)prune_step(m, t.stats, 0.2, 1e-3);
    for (const Victim& v : first) {
      CHECK(m.layers[v.layer].weights[v.flat] == 0.0);
      CHECK(m.layers[v.layer].mask[v.flat] == 0.0);
    }
  }
}

TEST_CASE("single-victim prune_step raises the quadratic loss by its importance") {
  // With exact factor statistics, the model-side weight change must cost
  // 1/2 dw^T kron(A,DS) dw = the victim's raw importance.
  QuadraticSetup q = make_setup(29, 5, 4, /*damping=*/0.0);
  Model m = q.model;
  const LayerImportance li = importance(m.layers[0], q.block, 0);
  ImportanceMap imap;
  imap.per_layer.resize(1);
  imap.per_layer[0] = li;
  normalize_layer(imap.per_layer[0]);
  // pick p so exactly one victim falls out
  const double p = 1.05 / static_cast<double>(li.index.size());
  const std::vector<double> before = flat_col_stacked(m.layers[0]);

  PrunePlan plan = prune_step(m, q.stats, p, 0.0);
  REQUIRE(plan.victims.size() == 1);
  const std::vector<double> after = flat_col_stacked(m.layers[0]);
  const auto dense = oracle::kfac_reconstructed_block(q.model.layers[0],
                                                      *q.stats.per_layer[0], 0.0, 0);
  // quadratic loss increase of the applied change
  const std::size_t n = before.size();
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      loss += 0.5 * (after[i] - before[i]) * dense.matrix.at(i, j) * (after[j] - before[j]);
  const Victim& v = plan.victims[0];
  const std::size_t flat = v.flat;
  const auto it = std::lower_bound(li.index.begin(), li.index.end(), flat);
  const double raw = li.raw[static_cast<std::size_t>(it - li.index.begin())];
  CHECK(loss == doctest::Approx(raw).epsilon(1e-6));
}

TEST_CASE("K-FAC victim selection beats random selection on a trained net") {
  test::TrainedNet t = test::trained_483(31);
  const std::size_t n_eval = 600;
  Tensor x = Tensor::matrix(n_eval, 4);
  std::vector<int> y(n_eval);
  for (std::size_t r = 0; r < n_eval; ++r) {
    for (int c = 0; c < 4; ++c) x.at(r, c) = t.data.train.images.at(r, c);
    y[r] = t.data.train.labels[r];
  }
  const double base_loss = test::batch_loss(t.model, x, y);

  Model pruned = t.model;
  PrunePlan plan = prune_step(pruned, t.stats, 0.05, 1e-3);
  const double nap_increase = test::batch_loss(pruned, x, y) - base_loss;
  const std::size_t k = plan.victims.size();
  REQUIRE(k >= 1);

  // paired trials against uniformly random victim sets of the same size
  Rng rng(77);
  int wins = 0;
  const int trials = 20;
  for (int trial = 0; trial < trials; ++trial) {
    Model rand_pruned = t.model;
    std::vector<std::pair<int, std::uint32_t>> cands;
    for (std::size_t li = 0; li < rand_pruned.layers.size(); ++li) {
      if (!rand_pruned.layers[li].has_params()) continue;
      for (std::uint32_t f = 0; f < rand_pruned.layers[li].mask.size(); ++f)
        if (rand_pruned.layers[li].mask[f] != 0.0)
          cands.emplace_back(static_cast<int>(li), f);
    }
    for (std::size_t pick = 0; pick < k; ++pick) {
      const std::size_t j = pick + rng.index(cands.size() - pick);
      std::swap(cands[pick], cands[j]);
      auto [li, f] = cands[pick];
      rand_pruned.layers[li].weights[f] = 0.0;
      rand_pruned.layers[li].mask[f] = 0.0;
    }
    const double rand_increase = test::batch_loss(rand_pruned, x, y) - base_loss;
    wins += nap_increase < rand_increase ? 1 : 0;
  }
  CHECK(wins >= 16);  // the acceptance suite runs the full 100-trial version
}

TEST_CASE("importance reports non-positive inverse diagonals as damping errors") {
  QuadraticSetup q = make_setup(41);
  q.block.DS_inv.at(0, 0) = 0.0;  // corrupt
  CHECK_THROWS_AS((void)importance(q.model.layers[0], q.block, 0), std::runtime_error);
}
