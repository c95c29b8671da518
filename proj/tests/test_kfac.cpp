#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "nap/kfac.hpp"
#include "nap/linalg.hpp"
#include "nap/oracle.hpp"

using namespace nap;

TEST_CASE("first update initializes factors to the batch means") {
  LayerStats s;
  s.A = Tensor::matrix(3, 3);
  s.DS = Tensor::matrix(1, 1);
  // one augmented row a = [1,2,1]
  Tensor a = Tensor::from_data({1, 3}, {1, 2, 1});
  Tensor ds = Tensor::from_data({1, 1}, {0.5});
  update_stats(s, a, ds);
  const double expect[9] = {1, 2, 1, 2, 4, 2, 1, 2, 1};
  for (int k = 0; k < 9; ++k) CHECK(s.A[k] == doctest::Approx(expect[k]));
  CHECK(s.DS[0] == doctest::Approx(0.25));
  CHECK(s.steps_seen == 1);

  SUBCASE("second update blends with the decay factor") {
    // zero activation still carries the homogeneous 1: a = [0,0,1]
    Tensor a2 = Tensor::from_data({1, 3}, {0, 0, 1});
    Tensor ds2 = Tensor::from_data({1, 1}, {1.0});
    update_stats(s, a2, ds2);
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        const double e3 = (i == 2 && j == 2) ? 1.0 : 0.0;
        CHECK(s.A.at(i, j) == doctest::Approx(0.95 * expect[i * 3 + j] + 0.05 * e3));
      }
    CHECK(s.DS[0] == doctest::Approx(0.95 * 0.25 + 0.05 * 1.0));
  }
}

TEST_CASE("update_stats rejects width mismatches") {
  LayerStats s;
  s.A = Tensor::matrix(3, 3);
  s.DS = Tensor::matrix(2, 2);
  CHECK_THROWS_AS(update_stats(s, Tensor::matrix(1, 4), Tensor::matrix(1, 2)),
                  std::invalid_argument);
  CHECK_THROWS_AS(update_stats(s, Tensor::matrix(2, 3), Tensor::matrix(1, 2)),
                  std::invalid_argument);
}

TEST_CASE("a 10,000-row capture recovers the true second moment within 2%") {
  Rng rng(7);
  const std::size_t d = 4;
  // rows x ~ N(0, I) plus homogeneous 1: E[xx^T] = I with a 1 in the corner.
  Tensor truth = linalg::identity(d + 1);
  LayerStats s;
  s.A = Tensor::matrix(d + 1, d + 1);
  s.DS = Tensor::matrix(1, 1);
  const int rows = 10000;
  Tensor a = Tensor::matrix(rows, d + 1);
  Tensor ds = Tensor::matrix(rows, 1);
  for (int r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < d; ++c) a.at(r, c) = rng.normal();
    a.at(r, d) = 1.0;
    ds.at(r, 0) = rng.normal();
  }
  update_stats(s, a, ds);  // first call: direct Monte-Carlo mean
  CHECK(linalg::frobenius_rel_err(s.A, truth) < 0.02);
}

TEST_CASE("EMA fixed point: repeating one batch converges geometrically") {
  Rng rng(13);
  Tensor a = test::random_matrix(8, 5, rng);
  Tensor ds = test::random_matrix(8, 3, rng);
  Tensor target = Tensor::matrix(5, 5);
  linalg::matmul_at_b(a.data(), a.data(), target.data(), 8, 5, 5);
  for (std::size_t k = 0; k < target.size(); ++k) target[k] /= 8.0;

  LayerStats s;
  s.A = Tensor::matrix(5, 5);
  s.DS = Tensor::matrix(3, 3);
  update_stats(s, a, ds);
  double prev = -1.0;
  for (int t = 0; t < 12; ++t) {
    update_stats(s, a, ds);
    const double gap = linalg::max_abs_diff(s.A, target);
    if (prev >= 0.0 && prev > 1e-13) CHECK(gap / prev == doctest::Approx(0.95).epsilon(1e-6));
    prev = gap;
  }
}

TEST_CASE("factors stay symmetric and PSD through noisy updates") {
  Rng rng(19);
  LayerStats s;
  s.A = Tensor::matrix(6, 6);
  s.DS = Tensor::matrix(4, 4);
  for (int t = 0; t < 25; ++t)
    update_stats(s, test::random_matrix(7, 6, rng), test::random_matrix(7, 4, rng));
  CHECK(linalg::max_abs_diff(s.A, linalg::transpose(s.A)) <= 1e-12);
  CHECK(linalg::max_abs_diff(s.DS, linalg::transpose(s.DS)) <= 1e-12);
  // PSD up to tolerance: damped Cholesky must succeed with a tiny ridge.
  Tensor a = s.A;
  CHECK_NOTHROW((void)linalg::spd_inverse(a, 1e-10));
}

TEST_CASE("block_inverse: diagonal case and damped identity contract") {
  LayerStats s;
  s.A = linalg::identity(3);
  for (int i = 0; i < 3; ++i) s.A.at(i, i) = 2.0;
  s.DS = linalg::identity(2);
  for (int i = 0; i < 2; ++i) s.DS.at(i, i) = 4.0;
  s.steps_seen = 1;
  const KroneckerBlockInverse b = block_inverse(s, 0.0);
  for (int i = 0; i < 3; ++i) CHECK(b.A_inv.at(i, i) == doctest::Approx(0.5));
  for (int i = 0; i < 2; ++i) CHECK(b.DS_inv.at(i, i) == doctest::Approx(0.25));

  SUBCASE("requires at least one estimation step") {
    LayerStats empty;
    empty.A = linalg::identity(2);
    empty.DS = linalg::identity(2);
    CHECK_THROWS_AS((void)block_inverse(empty, 0.0), std::invalid_argument);
  }
}

TEST_CASE("block_inverse matches the dense Kronecker oracle") {
  Rng rng(23);
  LayerStats s;
  s.A = test::random_spd(5, rng);
  s.DS = test::random_spd(4, rng);
  s.steps_seen = 1;
  const KroneckerBlockInverse b = block_inverse(s, 0.0);
  const Tensor lhs = linalg::kron(b.A_inv, b.DS_inv);
  const Tensor rhs = linalg::spd_inverse(linalg::kron(s.A, s.DS));
  CHECK(linalg::max_abs_diff(lhs, rhs) < 1e-8);

  SUBCASE("inv_diag equals the dense inverse diagonal at every q") {
    for (std::size_t j = 0; j < 5; ++j)
      for (std::size_t i = 0; i < 4; ++i) {
        const std::size_t q = j * 4 + i;
        CHECK(inv_diag(b, i, j) == doctest::Approx(rhs.at(q, q)).epsilon(1e-8));
      }
  }
}

TEST_CASE("block_inverse survives a rank-deficient factor with damping") {
  LayerStats s;
  s.A = Tensor::matrix(3, 3);
  s.A.at(0, 0) = 1.0;  // eigenvalues {1, 0, 0}
  s.DS = linalg::identity(2);
  s.steps_seen = 1;
  CHECK_THROWS_AS((void)block_inverse(s, 0.0), linalg::SingularMatrixError);
  const KroneckerBlockInverse b = block_inverse(s, 1e-3);
  Tensor damped = s.A;
  for (int i = 0; i < 3; ++i) damped.at(i, i) += 1e-3;
  CHECK(linalg::max_abs_diff(linalg::matmul(b.A_inv, damped), linalg::identity(3)) < 1e-8);
  CHECK(b.damping == 1e-3);
}

TEST_CASE("inv_diag is strictly positive on damped PSD factors") {
  Rng rng(29);
  LayerStats s;
  s.A = test::random_spd(4, rng, 0.0);
  s.DS = test::random_spd(3, rng, 0.0);
  s.steps_seen = 1;
  const KroneckerBlockInverse b = block_inverse(s, 1e-3);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 4; ++j) CHECK(inv_diag(b, i, j) > 0.0);
}

TEST_CASE("label sampling follows the softmax distribution") {
  Rng rng(31);
  SUBCASE("degenerate softmax always picks the dominant logit") {
    Tensor logits = Tensor::from_data({1, 3}, {1e9, 0.0, 0.0});
    for (int t = 0; t < 50; ++t) CHECK(sample_model_labels(logits, rng)[0] == 0);
  }
  SUBCASE("uniform logits sample uniformly within 3-sigma binomial bounds") {
    const int k = 4, draws = 10000;
    Tensor logits = Tensor::matrix(1, k);
    std::vector<int> counts(k, 0);
    for (int t = 0; t < draws; ++t) counts[sample_model_labels(logits, rng)[0]]++;
    const double p = 1.0 / k, sigma = std::sqrt(draws * p * (1 - p));
    for (int c = 0; c < k; ++c) CHECK(std::abs(counts[c] - draws * p) < 3 * sigma);
  }
  SUBCASE("empirical mode passes dataset labels through") {
    Tensor logits = Tensor::matrix(3, 2);
    const std::vector<int> truth = {1, 0, 1};
    CHECK(fisher_labels(FisherMode::empirical, logits, truth, rng) == truth);
  }
}

TEST_CASE("independence-constructed samples reproduce the factorization") {
  // a and g drawn independently: E[aa^T (x) gg^T] = E[aa^T] (x) E[gg^T].
  Rng rng(37);
  const std::size_t na = 3, ng = 2;
  const int rows = 50000;
  Tensor sum_kron = Tensor::matrix(na * ng, na * ng);
  Tensor arows = Tensor::matrix(rows, na), grows = Tensor::matrix(rows, ng);
  for (int r = 0; r < rows; ++r) {
    for (std::size_t k = 0; k < na; ++k) arows.at(r, k) = rng.normal() + (k == 0 ? 0.5 : 0.0);
    for (std::size_t k = 0; k < ng; ++k) grows.at(r, k) = rng.normal() * (k + 1);
    for (std::size_t p = 0; p < na; ++p)
      for (std::size_t q = 0; q < na; ++q)
        for (std::size_t u = 0; u < ng; ++u)
          for (std::size_t v = 0; v < ng; ++v)
            sum_kron.at(p * ng + u, q * ng + v) +=
                arows.at(r, p) * arows.at(r, q) * grows.at(r, u) * grows.at(r, v);
  }
  for (std::size_t k = 0; k < sum_kron.size(); ++k) sum_kron[k] /= rows;
  LayerStats s;
  s.A = Tensor::matrix(na, na);
  s.DS = Tensor::matrix(ng, ng);
  update_stats(s, arows, grows);
  // Empirical E[aa^T (x) gg^T] against the factored product form.
  const Tensor factored = linalg::kron(s.A, s.DS);
  CHECK(linalg::frobenius_rel_err(factored, sum_kron) < 0.03);
}

TEST_CASE("K-FAC diagonal tracks the exact Fisher diagonal on a trained net") {
  test::TrainedNet t = test::trained_483(101);
  Rng rng(55);
  // Exact Fisher over a fixed probe set with model-sampled labels.
  Tensor probe = Tensor::matrix(200, 4);
  for (std::size_t r = 0; r < probe.rows(); ++r)
    for (std::size_t c = 0; c < 4; ++c) probe.at(r, c) = t.data.train.images.at(r, c);
  const auto fisher = oracle::exact_fisher(t.model, probe, 60, rng);

  for (std::size_t li = 0; li < t.model.layers.size(); ++li) {
    if (!t.model.layers[li].has_params()) continue;
    const auto block = oracle::extract_layer_block(fisher, static_cast<int>(li));
    const auto recon = oracle::kfac_reconstructed_block(
        t.model.layers[li], *t.stats.per_layer[li], 0.0, static_cast<int>(li));
    REQUIRE(block.params.size() == recon.params.size());
    std::vector<double> da(block.params.size()), db(block.params.size());
    for (std::size_t q = 0; q < block.params.size(); ++q) {
      da[q] = block.matrix.at(q, q);
      db[q] = recon.matrix.at(q, q);
    }
    const auto rho = oracle::rank_agreement(da, db);
    REQUIRE(rho.has_value());
    CHECK(*rho >= 0.8);
  }
}
