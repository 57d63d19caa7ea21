#include <catch2/catch_amalgamated.hpp>

#include "hodiff/diffusion.hpp"
#include "oracles.hpp"

using namespace hodiff;

namespace {

PointCloud random_cloud(int n, Rng& rng, float scale = 0.1f) {
  PointCloud pc = PointCloud::zeros(n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < 3; ++j) pc.points.at(i, j) = float(rng.normal()) * scale;
  return pc;
}

std::vector<oracle::V3> to_v3(const PointCloud& pc) {
  std::vector<oracle::V3> out(pc.count());
  for (int i = 0; i < pc.count(); ++i)
    out[i] = {double(pc.points.at(i, 0)), double(pc.points.at(i, 1)), double(pc.points.at(i, 2))};
  return out;
}

}  // namespace

TEST_CASE("make_schedule basic values") {
  auto s1 = make_schedule(1, 0.5, 0.5);
  REQUIRE(s1.alpha_bars.size() == 1);
  CHECK(s1.alpha_bars[0] == Catch::Approx(0.5).epsilon(1e-12));

  auto s2 = make_schedule(2, 0.1, 0.2);
  CHECK(s2.alpha_bars[0] == Catch::Approx(0.9).epsilon(1e-12));
  CHECK(s2.alpha_bars[1] == Catch::Approx(0.72).epsilon(1e-12));
}

TEST_CASE("make_schedule matches cumulative-product oracle and is monotone") {
  auto s = make_schedule(100, 1e-4, 0.02);
  auto expect = oracle::cumprod_alpha_bar(s.betas);
  for (int t = 1; t <= 100; ++t) {
    CHECK(std::abs(s.alpha_bar(t) - expect[t - 1]) / expect[t - 1] < 1e-12);
    if (t > 1) CHECK(s.alpha_bar(t) < s.alpha_bar(t - 1));
  }
  CHECK(s.alpha_bar(100) < s.alpha_bar(1));
  CHECK(s.alpha_bar(1) < 1.0);
  REQUIRE_NOTHROW(s.validate());
}

TEST_CASE("make_schedule rejects bad ranges") {
  CHECK_THROWS(make_schedule(0, 0.1, 0.2));
  CHECK_THROWS(make_schedule(10, 0.0, 0.2));
  CHECK_THROWS(make_schedule(10, 0.3, 0.2));
  CHECK_THROWS(make_schedule(10, 0.1, 1.0));
}

TEST_CASE("sigma modes") {
  auto s = make_schedule(10, 0.01, 0.2, ScheduleKind::linear, SigmaMode::beta);
  CHECK(s.sigma(3) == Catch::Approx(std::sqrt(s.beta(3))));

  s.sigma_mode = SigmaMode::beta_tilde;
  // t=1: alpha_bar_0 = 1 so the posterior variance vanishes.
  CHECK(s.sigma(1) == Catch::Approx(0.0).margin(1e-15));
  const double want =
      std::sqrt((1.0 - s.alpha_bar(1)) / (1.0 - s.alpha_bar(2)) * s.beta(2));
  CHECK(s.sigma(2) == Catch::Approx(want).epsilon(1e-12));
}

TEST_CASE("zero-mean noise: two-point case is an antisymmetric pair") {
  Rng rng(42);
  auto eps = sample_zero_mean_noise<float>(2, rng);
  for (int j = 0; j < 3; ++j)
    CHECK(eps.points.at(0, j) == Catch::Approx(-eps.points.at(1, j)).margin(1e-7));
}

TEST_CASE("zero-mean noise: column means vanish for any N and seed") {
  for (uint64_t seed : {1ull, 7ull, 99ull}) {
    for (int n : {2, 5, 64, 1024}) {
      Rng rng(seed);
      auto eps = sample_zero_mean_noise<float>(n, rng);
      const auto c = eps.centroid();
      for (int j = 0; j < 3; ++j) CHECK(std::abs(c[j]) < 1e-6f);
    }
  }
  Rng rng(5);
  CHECK_THROWS(sample_zero_mean_noise<float>(1, rng));
}

TEST_CASE("zero-mean noise variance shrinks by (1 - 1/N)", "[montecarlo]") {
  const int n = 1024;
  const int trials = 100;
  Rng rng(2024);
  double acc = 0;
  for (int t = 0; t < trials; ++t) {
    auto eps = sample_zero_mean_noise<double>(n, rng);
    double ss = 0;
    for (double v : eps.points.data) ss += v * v;
    acc += ss / double(3 * n);  // mean is exactly zero, so this is the variance
  }
  const double want = 1.0 - 1.0 / n;
  CHECK(std::abs(acc / trials - want) / want < 0.05);
}

TEST_CASE("forward_diffuse: alpha_bar -> 1 limit returns the re-centered cloud") {
  auto s = make_schedule(1, 1e-12, 1e-12);
  Rng rng(3);
  auto x0 = random_cloud(16, rng);
  auto eps = sample_zero_mean_noise<float>(16, rng);
  const Vec3<float> M(0.2f, -0.1f, 0.05f);
  auto xt = forward_diffuse(x0, M, 1, s, eps);
  auto recentered = x0;
  recentered.recenter(M);
  for (int i = 0; i < 16; ++i)
    for (int j = 0; j < 3; ++j)
      CHECK(xt.points.at(i, j) == Catch::Approx(recentered.points.at(i, j)).margin(1e-5));
}

TEST_CASE("forward_diffuse: point-mass cloud isolates the noise term") {
  auto s = make_schedule(10, 0.01, 0.2);
  const int t = 5;
  const int n = 8;
  PointCloud x0 = PointCloud::zeros(n);
  for (int i = 0; i < n; ++i) x0.set_row(i, Vec3<float>(0.3f, 0.1f, -0.2f));
  Rng rng(9);
  auto eps = sample_zero_mean_noise<float>(n, rng);
  const Vec3<float> M(0.05f, 0.02f, 0.0f);
  auto xt = forward_diffuse(x0, M, t, s, eps);
  const float a = std::sqrt(float(s.alpha_bar(t)));
  const float b = std::sqrt(1.0f - float(s.alpha_bar(t)));
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < 3; ++j)
      CHECK(xt.points.at(i, j) ==
            Catch::Approx(a * M[j] + b * eps.points.at(i, j)).margin(1e-6));
}

TEST_CASE("forward_diffuse matches the scalar oracle; centroid lands on sqrt(abar)*M") {
  auto s = make_schedule(100, 1e-4, 0.02);
  const int t = 50;
  Rng rng(11);
  auto x0 = random_cloud(32, rng);
  auto eps = sample_zero_mean_noise<float>(32, rng);
  const Vec3<float> M(0.1f, 0.0f, -0.05f);
  auto xt = forward_diffuse(x0, M, t, s, eps);

  auto want = oracle::forward_diffuse(to_v3(x0), {0.1, 0.0, -0.05}, s.alpha_bar(t), to_v3(eps));
  for (int i = 0; i < 32; ++i) {
    CHECK(xt.points.at(i, 0) == Catch::Approx(want[i].x).margin(1e-6));
    CHECK(xt.points.at(i, 1) == Catch::Approx(want[i].y).margin(1e-6));
    CHECK(xt.points.at(i, 2) == Catch::Approx(want[i].z).margin(1e-6));
  }
  // The forward marginal carries the centroid at sqrt(abar_t) * M (the noise
  // is exactly zero-mean), decaying toward the origin as t grows.
  const auto c = xt.centroid();
  const float a = std::sqrt(float(s.alpha_bar(t)));
  for (int j = 0; j < 3; ++j) CHECK(std::abs(c[j] - a * M[j]) < 1e-6f);
}

TEST_CASE("forward_diffuse rejects shape mismatch and bad t") {
  auto s = make_schedule(10, 0.01, 0.2);
  Rng rng(1);
  auto x0 = random_cloud(8, rng);
  auto eps = sample_zero_mean_noise<float>(9, rng);
  CHECK_THROWS(forward_diffuse(x0, Vec3<float>(0, 0, 0), 5, s, eps));
  auto eps8 = sample_zero_mean_noise<float>(8, rng);
  CHECK_THROWS(forward_diffuse(x0, Vec3<float>(0, 0, 0), 0, s, eps8));
  CHECK_THROWS(forward_diffuse(x0, Vec3<float>(0, 0, 0), 11, s, eps8));
}

TEST_CASE("reverse_step: row-constant eps_pred is annihilated by centering") {
  auto s = make_schedule(10, 0.01, 0.2);
  Rng rng(17);
  auto xt = random_cloud(12, rng);
  TensorF eps({12, 3});
  for (int i = 0; i < 12; ++i) {
    eps.at(i, 0) = 3.0f;
    eps.at(i, 1) = -1.0f;
    eps.at(i, 2) = 0.5f;
  }
  const Vec3<float> M_hat(0.02f, 0.03f, -0.01f);
  auto prev = reverse_step(xt, eps, 1, s, M_hat, rng);  // t=1: deterministic
  auto want = xt;
  const float inv = 1.0f / std::sqrt(float(s.alpha(1)));
  for (auto& v : want.points.data) v *= inv;
  want.recenter(M_hat);
  for (int i = 0; i < 12; ++i)
    for (int j = 0; j < 3; ++j)
      CHECK(prev.points.at(i, j) == Catch::Approx(want.points.at(i, j)).margin(1e-6));
}

TEST_CASE("reverse_step matches independent transcription for random inputs") {
  auto s = make_schedule(10, 0.01, 0.2);
  for (int t : {1, 4, 10}) {
    Rng rng(100 + t);
    auto xt = random_cloud(16, rng);
    TensorF eps({16, 3});
    for (auto& v : eps.data) v = float(rng.normal());
    const Vec3<float> M_hat(0.1f, -0.2f, 0.05f);

    Rng lib_rng(55);
    auto got = reverse_step(xt, eps, t, s, M_hat, lib_rng);

    // Replay the same noise draw the library makes (zero-mean z at t > 1).
    std::vector<oracle::V3> z(16);
    if (t > 1) {
      Rng z_rng(55);
      auto zc = sample_zero_mean_noise<float>(16, z_rng);
      for (int i = 0; i < 16; ++i)
        z[i] = {double(zc.points.at(i, 0)), double(zc.points.at(i, 1)),
                double(zc.points.at(i, 2))};
    }
    std::vector<oracle::V3> epsv(16);
    for (int i = 0; i < 16; ++i)
      epsv[i] = {double(eps.at(i, 0)), double(eps.at(i, 1)), double(eps.at(i, 2))};
    auto want = oracle::reverse_step(to_v3(xt), epsv, s.alpha(t), s.alpha_bar(t),
                                     t > 1 ? s.sigma(t) : 0.0, z, {0.1, -0.2, 0.05});
    for (int i = 0; i < 16; ++i) {
      CHECK(got.points.at(i, 0) == Catch::Approx(want[i].x).margin(1e-5));
      CHECK(got.points.at(i, 1) == Catch::Approx(want[i].y).margin(1e-5));
      CHECK(got.points.at(i, 2) == Catch::Approx(want[i].z).margin(1e-5));
    }
    const auto c = got.centroid();
    CHECK(std::abs(c.x() - 0.1f) < 1e-6f);
    CHECK(std::abs(c.y() + 0.2f) < 1e-6f);
    CHECK(std::abs(c.z() - 0.05f) < 1e-6f);
  }
}

TEST_CASE("reverse_step rejects t=0 and NaN predictions") {
  auto s = make_schedule(10, 0.01, 0.2);
  Rng rng(1);
  auto xt = random_cloud(4, rng);
  TensorF eps({4, 3});
  CHECK_THROWS(reverse_step(xt, eps, 0, s, Vec3<float>(0, 0, 0), rng));
  eps.at(2, 1) = std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS(reverse_step(xt, eps, 3, s, Vec3<float>(0, 0, 0), rng));
}

TEST_CASE("estimate_x0 inverts forward_diffuse with the true noise") {
  auto s = make_schedule(100, 1e-4, 0.02);
  Rng rng(23);
  auto x0 = random_cloud(24, rng);
  const Vec3<float> M(0.07f, -0.02f, 0.01f);
  for (int t : {1, 37, 100}) {
    Rng erng(300 + t);
    auto eps = sample_zero_mean_noise<float>(24, erng);
    auto xt = forward_diffuse(x0, M, t, s, eps);
    auto rec = estimate_x0(xt, eps.points, t, s);
    auto want = x0;
    want.recenter(M);
    for (int i = 0; i < 24; ++i)
      for (int j = 0; j < 3; ++j)
        CHECK(rec.points.at(i, j) == Catch::Approx(want.points.at(i, j)).margin(1e-5));
  }
}

TEST_CASE("estimate_x0: zero prediction rescales, tiny alpha_bar rejected") {
  auto s = make_schedule(10, 0.01, 0.2);
  Rng rng(31);
  auto xt = random_cloud(6, rng);
  TensorF zero({6, 3});
  auto rec = estimate_x0(xt, zero, 4, s);
  const float inv = 1.0f / std::sqrt(float(s.alpha_bar(4)));
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 3; ++j)
      CHECK(rec.points.at(i, j) == Catch::Approx(xt.points.at(i, j) * inv).margin(1e-6));

  auto deep = make_schedule(12, 0.9, 0.95);  // alpha_bar_12 ~ 6e-14
  CHECK_THROWS(estimate_x0(xt, zero, 12, deep));
}

TEST_CASE("estimate_x0 matches its transcription on a random instance") {
  auto s = make_schedule(50, 1e-3, 0.05);
  const int t = 20;
  Rng rng(77);
  auto xt = random_cloud(10, rng);
  TensorF eps({10, 3});
  for (auto& v : eps.data) v = float(rng.normal());
  auto got = estimate_x0(xt, eps, t, s);
  const double a = std::sqrt(s.alpha_bar(t));
  const double b = std::sqrt(1.0 - s.alpha_bar(t));
  for (int i = 0; i < 10; ++i)
    for (int j = 0; j < 3; ++j)
      CHECK(got.points.at(i, j) ==
            Catch::Approx((double(xt.points.at(i, j)) - b * double(eps.at(i, j))) / a).margin(1e-6));
}

TEST_CASE("sample: zero denoiser with T=1 reduces to one deterministic step") {
  auto s = make_schedule(1, 0.02, 0.02);
  const Vec3<float> M_hat(0.3f, 0.0f, -0.1f);
  auto zero_fn = [](const PointCloud& x, int) { return TensorF({x.count(), 3}); };
  Rng rng(404);
  auto out = sample<float>(zero_fn, M_hat, s, 8, rng);

  Rng replay(404);
  auto xT = sample_zero_mean_noise<float>(8, replay);
  xT.recenter(M_hat);
  auto want = xT;
  const float inv = 1.0f / std::sqrt(float(s.alpha(1)));
  for (auto& v : want.points.data) v *= inv;
  want.recenter(M_hat);
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 3; ++j)
      CHECK(out.points.at(i, j) == Catch::Approx(want.points.at(i, j)).margin(1e-6));
}

TEST_CASE("sample holds the centroid lock at every step for an arbitrary denoiser") {
  auto s = make_schedule(50, 1e-4, 0.02);
  const Vec3<float> M_hat(0.12f, -0.34f, 0.07f);
  // Deterministic, non-zero-mean, nonlinear stand-in for a denoiser.
  auto fn = [](const PointCloud& x, int t) {
    TensorF out({x.count(), 3});
    for (int i = 0; i < x.count(); ++i)
      for (int j = 0; j < 3; ++j)
        out.at(i, j) = std::sin(7.0f * x.points.at(i, j)) + 0.3f * float(t % 5);
    return out;
  };
  float worst = 0.0f;
  SampleOptions<float> opt;
  opt.on_step = [&](int, const PointCloud& x) {
    const auto c = x.centroid();
    for (int j = 0; j < 3; ++j) worst = std::max(worst, std::abs(c[j] - M_hat[j]));
  };
  Rng rng(777);
  auto out = sample<float>(fn, M_hat, s, 64, rng, opt);
  CHECK(worst < 1e-5f);
}

TEST_CASE("sample is deterministic given the seed") {
  auto s = make_schedule(20, 1e-3, 0.05);
  auto fn = [](const PointCloud& x, int) {
    TensorF out({x.count(), 3});
    for (size_t i = 0; i < out.size(); ++i) out.data[i] = 0.1f * x.points.data[i];
    return out;
  };
  Rng a(9001), b(9001);
  auto r1 = sample<float>(fn, Vec3<float>(0.1f, 0.2f, 0.3f), s, 32, a);
  auto r2 = sample<float>(fn, Vec3<float>(0.1f, 0.2f, 0.3f), s, 32, b);
  REQUIRE(r1.points.data == r2.points.data);  // bitwise
}

TEST_CASE("sample aborts with the step index on non-finite denoiser output") {
  auto s = make_schedule(5, 0.01, 0.1);
  auto bad = [](const PointCloud& x, int t) {
    TensorF out({x.count(), 3});
    if (t == 3) out.at(0, 0) = std::numeric_limits<float>::quiet_NaN();
    return out;
  };
  Rng rng(5);
  try {
    sample<float>(bad, Vec3<float>(0, 0, 0), s, 8, rng);
    FAIL("expected abort");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("t=3") != std::string::npos);
  }
}

TEST_CASE("forward moments over many draws", "[montecarlo]") {
  // Smaller sibling of the acceptance criterion: 2000 draws, fixed X0 and t.
  auto s = make_schedule(100, 1e-4, 0.02);
  const int t = 50, n = 16, draws = 2000;
  Rng rng(60601);
  auto x0 = random_cloud(n, rng);
  const Vec3<float> M(0.1f, -0.05f, 0.2f);

  std::vector<double> mean_acc(n * 3, 0.0);
  std::vector<double> sq_acc(n * 3, 0.0);
  for (int d = 0; d < draws; ++d) {
    auto eps = sample_zero_mean_noise<float>(n, rng);
    auto xt = forward_diffuse(x0, M, t, s, eps);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < 3; ++j) {
        mean_acc[i * 3 + j] += xt.points.at(i, j);
        sq_acc[i * 3 + j] += double(xt.points.at(i, j)) * xt.points.at(i, j);
      }
  }
  const double a = std::sqrt(s.alpha_bar(t));
  const double noise_var = (1.0 - s.alpha_bar(t)) * (1.0 - 1.0 / n);
  const double se = std::sqrt(noise_var / draws);
  auto x0c = x0;
  x0c.recenter(M);
  double var_mean = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < 3; ++j) {
      const double want = a * x0c.points.at(i, j);
      const double got_mean = mean_acc[i * 3 + j] / draws;
      CHECK(std::abs(got_mean - want) < 4.0 * se);
      var_mean += sq_acc[i * 3 + j] / draws - got_mean * got_mean;
    }
  var_mean /= double(n * 3);
  CHECK(std::abs(var_mean - noise_var) / noise_var < 0.05);
}
