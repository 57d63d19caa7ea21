#include <catch2/catch_amalgamated.hpp>

#include "hodiff/autodiff.hpp"
#include "hodiff/nn.hpp"
#include "oracles.hpp"

using namespace hodiff;
using GraphD = Graph<double>;

namespace {

// Check d(scalar)/d(leaf) against central differences for a graph builder
// that maps one differentiable leaf to a scalar output.
double grad_check(const Tensor<double>& x0,
                  const std::function<GraphD::Var(GraphD&, GraphD::Var)>& build,
                  double h = 1e-6) {
  GraphD g;
  auto x = g.leaf(x0, true);
  auto out = build(g, x);
  g.backward(out);
  const Tensor<double>& analytic = g.grad(x);

  auto f = [&](const std::vector<double>& flat) {
    Tensor<double> xt = x0;
    xt.data = flat;
    GraphD g2;
    auto x2 = g2.leaf(xt, true);
    return g2.scalar(build(g2, x2));
  };
  auto fd = oracle::central_diff(f, x0.data, h);
  return oracle::max_rel_err(std::vector<double>(analytic.data.begin(), analytic.data.end()), fd);
}

Tensor<double> randn(std::vector<int> dims, uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  return Tensor<double>::randn(std::move(dims), rng, scale);
}

}  // namespace

TEST_CASE("gradients: dense MLP chain (matmul, bias, silu, mse)") {
  const auto W1 = randn({4, 6}, 1), b1 = randn({1, 6}, 2, 0.1);
  const auto W2 = randn({6, 3}, 3), target = randn({5, 3}, 4);
  auto build = [&](GraphD& g, GraphD::Var x) {
    auto h = g.silu(g.add_rowvec(g.matmul(x, g.leaf(W1)), g.leaf(b1)));
    auto y = g.matmul(h, g.leaf(W2));
    return g.mse(y, g.leaf(target));
  };
  CHECK(grad_check(randn({5, 4}, 5), build) < 1e-6);

  // Same chain, gradient with respect to the weights instead of the input.
  const auto X = randn({5, 4}, 6);
  auto build_w = [&](GraphD& g, GraphD::Var w1) {
    auto h = g.silu(g.add_rowvec(g.matmul(g.leaf(X), w1), g.leaf(b1)));
    auto y = g.matmul(h, g.leaf(W2));
    return g.mse(y, g.leaf(target));
  };
  CHECK(grad_check(randn({4, 6}, 7), build_w) < 1e-6);
}

TEST_CASE("gradients: concat, slice, tile, maxpool, norms") {
  const auto other = randn({3, 4}, 11);
  auto build = [&](GraphD& g, GraphD::Var x) {
    auto cat = g.concat_rows(x, g.leaf(other));      // (7,4)
    auto pooled = g.maxpool_rows(cat);               // (1,4)
    auto tiled = g.tile_rows(pooled, 4);             // (4,4)
    auto sl = g.slice_rows(g.concat_cols(cat, cat), 1, 5);  // (4,8)
    auto joined = g.concat_cols(sl, tiled);          // (4,12)
    auto l1 = g.l1_mean(joined, g.leaf(randn({4, 12}, 12)));
    return g.add(l1, g.norm2(x));
  };
  CHECK(grad_check(randn({4, 4}, 13), build) < 1e-6);
}

TEST_CASE("gradients: elementwise ops and reductions") {
  const auto other = randn({3, 3}, 21);
  auto build = [&](GraphD& g, GraphD::Var x) {
    auto prod = g.mul(x, g.leaf(other));
    auto s = g.sub(g.scale(prod, 1.7), x);
    return g.mean_all(g.silu(s));
  };
  CHECK(grad_check(randn({3, 3}, 22), build) < 1e-6);
}

TEST_CASE("gradients: conv2d wrt input, weights and bias") {
  const int H = 6, W = 5, Cin = 2, Cout = 3;
  const auto w = randn({3, 3, Cin, Cout}, 31, 0.5);
  const auto b = randn({1, Cout}, 32, 0.1);
  const auto probe = randn({H, W, Cout}, 33);          // stride 1 readout
  const auto probe2 = randn({3, 3, Cout}, 34);         // stride 2 readout
  for (int stride : {1, 2}) {
    auto build_x = [&](GraphD& g, GraphD::Var x) {
      auto y = g.conv2d(x, g.leaf(w), g.leaf(b), stride);
      return g.dot_const(y, stride == 1 ? probe : probe2);
    };
    CHECK(grad_check(randn({H, W, Cin}, 35 + stride), build_x) < 1e-6);
  }
  const auto X = randn({H, W, Cin}, 38);
  auto build_w = [&](GraphD& g, GraphD::Var wv) {
    auto y = g.conv2d(g.leaf(X), wv, g.leaf(b), 1);
    return g.dot_const(y, probe);
  };
  CHECK(grad_check(randn({3, 3, Cin, Cout}, 39, 0.5), build_w) < 1e-6);
  auto build_b = [&](GraphD& g, GraphD::Var bv) {
    auto y = g.conv2d(g.leaf(X), g.leaf(w), bv, 1);
    return g.dot_const(y, probe);
  };
  CHECK(grad_check(randn({1, Cout}, 40, 0.1), build_b) < 1e-6);
}

TEST_CASE("gradients: bilinear upsample and global average pool") {
  const auto probe = randn({6, 6, 2}, 41);
  auto build = [&](GraphD& g, GraphD::Var x) {
    auto up = g.upsample_bilinear(x, 6, 6);
    return g.dot_const(up, probe);
  };
  CHECK(grad_check(randn({3, 3, 2}, 42), build) < 1e-6);

  const auto probe2 = randn({1, 4}, 43);
  auto build2 = [&](GraphD& g, GraphD::Var x) { return g.dot_const(g.avgpool_all(x), probe2); };
  CHECK(grad_check(randn({4, 5, 4}, 44), build2) < 1e-6);
}

TEST_CASE("gradients: bilinear gather into the feature map") {
  Rng rng(45);
  Tensor<double> ndc({7, 2});
  for (auto& v : ndc.data) v = rng.uniform(-1.2, 1.2);  // includes off-image rows
  const auto probe = randn({7, 3}, 46);
  auto build = [&](GraphD& g, GraphD::Var fmap) {
    return g.dot_const(g.bilinear_gather(fmap, ndc), probe);
  };
  CHECK(grad_check(randn({5, 6, 3}, 47), build) < 1e-6);
}

TEST_CASE("gradients: soft mask wrt point positions") {
  CameraT<double> cam;
  cam.width = cam.height = 16;
  cam.fx = cam.fy = 20.0;
  cam.cx = cam.cy = 8.0;
  cam.wrist_to_camera.R = axis_angle_to_matrix(Vec3<double>(0.1, -0.2, 0.05));
  cam.wrist_to_camera.t = Vec3<double>(0.01, -0.02, 0.5);

  Rng rng(48);
  Tensor<double> pts({5, 3});
  for (int i = 0; i < 5; ++i) {
    pts.at(i, 0) = rng.uniform(-0.1, 0.1);
    pts.at(i, 1) = rng.uniform(-0.1, 0.1);
    pts.at(i, 2) = rng.uniform(-0.05, 0.05);
  }
  const auto probe = randn({16, 16}, 49);
  auto build = [&](GraphD& g, GraphD::Var p) {
    return g.dot_const(g.soft_mask(p, cam, 1.3), probe);
  };
  CHECK(grad_check(pts, build, 1e-7) < 1e-5);
}

TEST_CASE("gradients: single point NDC projection") {
  CameraT<double> cam;
  cam.width = 24;
  cam.height = 20;
  cam.fx = 30.0;
  cam.fy = 28.0;
  cam.cx = 12.0;
  cam.cy = 10.0;
  cam.wrist_to_camera.R = axis_angle_to_matrix(Vec3<double>(-0.3, 0.2, 0.4));
  cam.wrist_to_camera.t = Vec3<double>(0.02, 0.03, 0.4);
  Tensor<double> p({1, 3});
  p.at(0, 0) = 0.05;
  p.at(0, 1) = -0.03;
  p.at(0, 2) = 0.06;
  const auto probe = randn({1, 2}, 50);
  auto build = [&](GraphD& g, GraphD::Var pv) {
    return g.dot_const(g.project_point_ndc(pv, cam), probe);
  };
  CHECK(grad_check(p, build, 1e-7) < 1e-6);
}

TEST_CASE("graph rejects shape mismatches and non-scalar backward roots") {
  GraphD g;
  auto a = g.leaf(randn({2, 3}, 51), true);
  auto b = g.leaf(randn({3, 2}, 52), true);
  CHECK_THROWS(g.add(a, b));
  auto c = g.matmul(a, b);
  CHECK_THROWS(g.backward(c));  // 2x2, not scalar
}

TEST_CASE("maxpool backward routes gradient to the argmax row only") {
  GraphD g;
  Tensor<double> x({3, 2});
  x.at(0, 0) = 1.0;
  x.at(1, 0) = 5.0;
  x.at(2, 0) = 2.0;
  x.at(0, 1) = 7.0;
  x.at(1, 1) = 0.0;
  x.at(2, 1) = 3.0;
  auto xv = g.leaf(x, true);
  auto s = g.mean_all(g.maxpool_rows(xv));
  g.backward(s);
  const auto& grad = g.grad(xv);
  CHECK(grad.at(1, 0) == Catch::Approx(0.5));
  CHECK(grad.at(0, 1) == Catch::Approx(0.5));
  CHECK(grad.at(0, 0) == 0.0);
  CHECK(grad.at(2, 1) == 0.0);
}

TEST_CASE("Adam with zero gradients leaves parameters unchanged") {
  ParamStore<double> params;
  Rng rng(60);
  add_linear(params, "lin", 3, 4, rng);
  auto before = params.get("lin.w").data;
  AdamOptimizer<double> opt(1e-3);
  std::unordered_map<std::string, Tensor<double>> grads;
  grads.emplace("lin.w", Tensor<double>({3, 4}));
  grads.emplace("lin.b", Tensor<double>({1, 4}));
  opt.step(params, grads);
  CHECK(params.get("lin.w").data == before);
}

TEST_CASE("time embedding has unit-amplitude channels and is even-dim only") {
  auto emb = time_embedding<double>(17, 8);
  REQUIRE(emb.cols() == 8);
  for (double v : emb.data) CHECK(std::abs(v) <= 1.0 + 1e-12);
  CHECK(emb.at(0, 4) == Catch::Approx(std::cos(17.0)));  // first cos channel, freq 1
  CHECK_THROWS(time_embedding<double>(17, 7));
}
