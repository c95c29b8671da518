#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "nap/net.hpp"
#include "nap/oracle.hpp"

using namespace nap;

TEST_CASE("dense forward applies the mask inside the pass") {
  Model m = parse_arch("input:2 dense:2");
  m.layers[0].weights = Tensor::from_data({2, 3}, {1, 0, 0, 0, 1, 0});
  Tensor x = Tensor::from_data({1, 2}, {3, 4});

  SUBCASE("identity weights pass the input through") {
    const ForwardContext ctx = forward(m, x);
    CHECK(ctx.logits().at(0, 0) == 3);
    CHECK(ctx.logits().at(0, 1) == 4);
  }
  SUBCASE("an all-zero mask kills the pre-activation") {
    m.layers[0].mask.fill(0.0);
    const ForwardContext ctx = forward(m, x);
    CHECK(ctx.logits().at(0, 0) == 0);
    CHECK(ctx.logits().at(0, 1) == 0);
  }
  SUBCASE("partial mask: only surviving coordinates contribute") {
    Model m2 = parse_arch("input:2 dense:1");
    m2.layers[0].weights = Tensor::from_data({1, 3}, {0.5, -0.25, 0.1});
    m2.layers[0].mask = Tensor::from_data({1, 3}, {1, 0, 1});
    Tensor x2 = Tensor::from_data({1, 2}, {2, 4});
    const ForwardContext ctx = forward(m2, x2);
    CHECK(ctx.logits().at(0, 0) == doctest::Approx(1.1).epsilon(1e-12));
  }
}

TEST_CASE("forward rejects shape mismatches naming the layer") {
  Model m = parse_arch("input:4 dense:3");
  CHECK_THROWS_AS((void)forward(m, Tensor::matrix(2, 5)), std::invalid_argument);
  Model bad;
  bad.input = ActShape{true, 4, 0, 0, 0};
  bad.layers.push_back(LayerState::dense(5, 3));
  try {
    bad.validate();
    FAIL("expected validation error");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("layer 0") != std::string::npos);
  }
}

TEST_CASE("model validation enforces skip-edge ordering and flat logits") {
  Model m;
  m.input = ActShape{true, 4, 0, 0, 0};
  m.layers.push_back(LayerState::dense(4, 4));
  m.layers.push_back(LayerState::add(3));  // forward reference
  CHECK_THROWS_AS(m.validate(), std::invalid_argument);
  m.layers[1] = LayerState::add(0);  // self-add of previous output: fine
  CHECK_NOTHROW(m.validate());
}

TEST_CASE("gradient at masked indices is exactly zero") {
  Rng rng(9);
  Model m = parse_arch("input:3 dense:4 relu dense:2");
  m.init_weights(rng);
  m.layers[0].mask.at(1, 2) = 0.0;
  m.layers[2].mask.at(0, 3) = 0.0;
  m.layers[0].reproject();
  m.layers[2].reproject();
  Tensor x = test::random_matrix(5, 3, rng);
  std::vector<int> y = {0, 1, 1, 0, 1};
  const ForwardContext ctx = forward(m, x);
  const BackwardResult bw = backward(m, ctx, y);
  CHECK(bw.grads.per_layer[0].at(1, 2) == 0.0);
  CHECK(bw.grads.per_layer[2].at(0, 3) == 0.0);
}

namespace {

// Central differences are only valid away from relu kinks: a perturbed
// pre-activation crossing zero poisons the quotient. Jitter the biases and
// verify a margin before running the check.
void jitter_biases(Model& m, Rng& rng) {
  for (LayerState& l : m.layers) {
    if (!l.has_params()) continue;
    for (std::size_t r = 0; r < l.weight_rows(); ++r)
      l.weights.at(r, l.weight_cols() - 1) = 0.1 * rng.normal();
  }
}

bool relu_margin_ok(const Model& m, const Tensor& x, double margin) {
  const ForwardContext ctx = forward(m, x);
  for (std::size_t li = 0; li < m.layers.size(); ++li) {
    if (m.layers[li].kind != LayerKind::Relu || li == 0) continue;
    const Tensor& pre = ctx.outputs[li - 1];
    for (std::size_t k = 0; k < pre.size(); ++k)
      if (std::abs(pre[k]) < margin) return false;
  }
  return true;
}

double fd_worst_rel_err(const Model& m, const Tensor& x, const std::vector<int>& y) {
  const BackwardResult bw = backward(m, forward(m, x), y);
  const double eps = 1e-5;
  Model work = m;
  double worst = 0.0;
  for (const auto& ref : oracle::param_map(m)) {
    double& w = work.layers[ref.layer].weights.at(ref.i, ref.j);
    const double w0 = w;
    w = w0 + eps;
    const double lp = test::batch_loss(work, x, y);
    w = w0 - eps;
    const double lm = test::batch_loss(work, x, y);
    w = w0;
    const double fd = (lp - lm) / (2 * eps);
    const double an = bw.grads.per_layer[ref.layer].at(ref.i, ref.j);
    worst = std::max(worst, std::abs(fd - an) / std::max(1.0, std::abs(fd)));
  }
  return worst;
}

}  // namespace

TEST_CASE("gradients match central finite differences on a random 3-4-2 net") {
  Rng rng(17);
  Model m = parse_arch("input:3 dense:4 relu dense:2");
  m.init_weights(rng);
  Tensor x = Tensor::matrix(5, 3);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = rng.uniform();
  CHECK(fd_worst_rel_err(m, x, {0, 1, 1, 0, 1}) < 1e-6);
}

TEST_CASE("gradients match finite differences on a conv net with skip edge") {
  Rng rng(23);
  // input 2x4x4; the padded conv keeps the shape so the skip edge lines up.
  Model m = parse_arch(
      "input:2x4x4 conv:2x3x3:s1:p1 relu conv:2x3x3:s1:p1 add:1 relu flatten dense:3");
  m.init_weights(rng);
  jitter_biases(m, rng);
  CHECK(m.param_count() <= 200);
  Tensor x = Tensor::matrix(3, 32);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = rng.uniform();
  REQUIRE(relu_margin_ok(m, x, 1e-3));
  CHECK(fd_worst_rel_err(m, x, {0, 2, 1}) < 1e-6);
}

TEST_CASE("gradients flow through a strided conv stack") {
  Rng rng(29);
  Model m = parse_arch("input:1x6x6 conv:3x3x3:s2:p1 relu flatten dense:2");
  m.init_weights(rng);
  jitter_biases(m, rng);
  Tensor x = Tensor::matrix(4, 36);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = rng.uniform();
  REQUIRE(relu_margin_ok(m, x, 1e-3));
  CHECK(fd_worst_rel_err(m, x, {0, 1, 1, 0}) < 1e-6);
}

TEST_CASE("batch of one: weight gradient is the outer product ds x [a;1]") {
  Rng rng(31);
  Model m = parse_arch("input:3 dense:4 relu dense:2");
  m.init_weights(rng);
  Tensor x = test::random_matrix(1, 3, rng);
  std::vector<int> y = {1};
  const BackwardResult bw = backward(m, forward(m, x), y);
  for (int li : {0, 2}) {
    const auto& cap = bw.capture.per_layer[li];
    REQUIRE(cap.has_value());
    const Tensor& g = bw.grads.per_layer[li];
    for (std::size_t i = 0; i < g.rows(); ++i)
      for (std::size_t j = 0; j < g.cols(); ++j)
        CHECK(g.at(i, j) ==
              doctest::Approx(cap->ds.at(0, i) * cap->a.at(0, j)).epsilon(1e-12));
  }
}

TEST_CASE("capture exists only for parameterized layers and has per-sample rows") {
  Rng rng(37);
  Model m = parse_arch("input:2x3x3 conv:3x2x2:s1:p0 relu flatten dense:2");
  m.init_weights(rng);
  Tensor x = test::random_matrix(4, 18, rng);
  const BackwardResult bw = backward(m, forward(m, x), {0, 1, 0, 1});
  REQUIRE(bw.capture.per_layer[0].has_value());  // conv
  CHECK(!bw.capture.per_layer[1].has_value());   // relu
  CHECK(!bw.capture.per_layer[2].has_value());   // flatten
  REQUIRE(bw.capture.per_layer[3].has_value());  // dense
  // conv: batch 4, 2x2 output -> 16 rows; dense: 4 rows
  CHECK(bw.capture.per_layer[0]->a.rows() == 16);
  CHECK(bw.capture.per_layer[0]->ds.rows() == 16);
  CHECK(bw.capture.per_layer[3]->a.rows() == 4);
  for (std::size_t r = 0; r < 16; ++r)
    CHECK(bw.capture.per_layer[0]->a.at(r, bw.capture.per_layer[0]->a.cols() - 1) == 1.0);
}

TEST_CASE("backward rejects label mismatches") {
  Rng rng(43);
  Model m = parse_arch("input:3 dense:2");
  m.init_weights(rng);
  const ForwardContext ctx = forward(m, test::random_matrix(4, 3, rng));
  CHECK_THROWS_AS((void)backward(m, ctx, {0, 1}), std::invalid_argument);
  CHECK_THROWS_AS((void)backward(m, ctx, {0, 1, 5, 0}), std::invalid_argument);
}

TEST_CASE("sgd_step: plain step, mask permanence, momentum recursion") {
  SUBCASE("momentum 0, lr 1") {
    Model m = parse_arch("input:1 dense:1");
    m.layers[0].weights = Tensor::from_data({1, 2}, {2.0, 0.0});
    Gradients g;
    g.per_layer.resize(1);
    g.per_layer[0] = Tensor::from_data({1, 2}, {0.5, 0.0});
    SgdState s;
    sgd_step(m, g, s, 1.0, 0.0);
    CHECK(m.layers[0].weights.at(0, 0) == doctest::Approx(1.5));
  }
  SUBCASE("masked entries stay exactly zero under any gradient") {
    Model m = parse_arch("input:1 dense:1");
    m.layers[0].weights = Tensor::from_data({1, 2}, {0.0, 0.3});
    m.layers[0].mask = Tensor::from_data({1, 2}, {0.0, 1.0});
    Gradients g;
    g.per_layer.resize(1);
    g.per_layer[0] = Tensor::from_data({1, 2}, {123.0, 0.1});
    SgdState s;
    for (int k = 0; k < 5; ++k) sgd_step(m, g, s, 0.5, 0.9);
    CHECK(m.layers[0].weights.at(0, 0) == 0.0);
  }
  SUBCASE("two steps with momentum follow the hand iteration") {
    Model m = parse_arch("input:1 dense:1");
    Gradients g;
    g.per_layer.resize(1);
    g.per_layer[0] = Tensor::from_data({1, 2}, {1.0, 0.0});
    SgdState s;
    sgd_step(m, g, s, 0.1, 0.9);
    CHECK(m.layers[0].weights.at(0, 0) == doctest::Approx(-0.1).epsilon(1e-12));
    sgd_step(m, g, s, 0.1, 0.9);
    CHECK(m.layers[0].weights.at(0, 0) == doctest::Approx(-0.29).epsilon(1e-12));
  }
  SUBCASE("lr <= 0 rejected") {
    Model m = parse_arch("input:1 dense:1");
    Gradients g;
    g.per_layer.resize(1);
    g.per_layer[0] = Tensor::matrix(1, 2);
    SgdState s;
    CHECK_THROWS_AS(sgd_step(m, g, s, 0.0, 0.0), std::invalid_argument);
  }
}

TEST_CASE("conv with full-extent kernel equals dense with rearranged weights") {
  Rng rng(41);
  Model conv = parse_arch("input:2x3x4 conv:5x3x4:s1:p0 flatten dense:2");
  conv.init_weights(rng);
  Model dense = parse_arch("input:24 dense:5 dense:2");
  // Patch order (ic,ky,kx) equals the row-major flatten order, so weights
  // carry over directly.
  dense.layers[0].weights = conv.layers[0].weights;
  dense.layers[1].weights = conv.layers[2].weights;

  Tensor x = test::random_matrix(6, 24, rng);
  const ForwardContext ca = forward(conv, x);
  const ForwardContext cb = forward(dense, x);
  CHECK(linalg::max_abs_diff(ca.logits(), cb.logits()) < 1e-12);
}

TEST_CASE("training is bit-deterministic for a fixed seed") {
  auto run = [] {
    DataPair data = load_data("gaussian:n=256,features=6,classes=3,sep=3", 5);
    Model m = parse_arch("input:6 dense:10 relu dense:3");
    Rng rng(5);
    m.init_weights(rng);
    train_epochs(m, data.train, 3, 0.05, 0.9, 16, rng, nullptr);
    return m;
  };
  const Model a = run(), b = run();
  for (std::size_t li = 0; li < a.layers.size(); ++li) {
    if (!a.layers[li].has_params()) continue;
    CHECK(a.layers[li].weights.vec() == b.layers[li].weights.vec());
  }
}

TEST_CASE("mask permanence through a training run") {
  DataPair data = load_data("gaussian:n=200,features=5,classes=2,sep=3", 6);
  Model m = parse_arch("input:5 dense:6 relu dense:2");
  Rng rng(6);
  m.init_weights(rng);
  for (std::size_t k = 0; k < m.layers[0].mask.size(); k += 3) m.layers[0].mask[k] = 0.0;
  m.layers[0].reproject();
  train_epochs(m, data.train, 2, 0.1, 0.9, 16, rng, nullptr);
  double worst = 0.0;
  for (std::size_t k = 0; k < m.layers[0].mask.size(); ++k)
    if (m.layers[0].mask[k] == 0.0) worst = std::max(worst, std::abs(m.layers[0].weights[k]));
  CHECK(worst == 0.0);
}

TEST_CASE("arch string round trip") {
  const std::string spec =
      "input:1x28x28 conv:12x3x3:s2:p1 relu conv:24x3x3:s2:p1 relu flatten dense:96 relu "
      "dense:10";
  Model m = parse_arch(spec);
  CHECK(arch_string(m) == spec);
  Model again = parse_arch(arch_string(m));
  CHECK(again.param_count() == m.param_count());
  CHECK_THROWS_AS((void)parse_arch("dense:3"), std::invalid_argument);
  CHECK_THROWS_AS((void)parse_arch("input:4 dense:0"), std::invalid_argument);
  CHECK_THROWS_AS((void)parse_arch("input:4 bogus:1"), std::invalid_argument);
}
