#include <doctest.h>

#include <random>

#include "cpr/features.hpp"
#include "cpr/image_io.hpp"
#include "cpr/kernels.hpp"
#include "../support.hpp"

using namespace cpr;

namespace {

Tensor3<float> noise_image(int h, int w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0.f, 1.f);
  Tensor3<float> t(h, w, 3);
  for (auto& v : t.data) v = u(rng);
  return t;
}

}  // namespace

TEST_SUITE("features") {
  TEST_CASE("feature_at is exact on lattice points and linear between them") {
    std::mt19937_64 rng(4);
    const FeatureMap f = testing::random_map(5, 6, 3, rng);
    std::vector<double> v(3);
    feature_at(f, {2, 3}, v);
    for (int k = 0; k < 3; ++k) CHECK(v[k] == f.data.at(3, 2, k));
    feature_at(f, {2.5, 3}, v);
    for (int k = 0; k < 3; ++k) CHECK(v[k] == doctest::Approx((f.data.at(3, 2, k) + f.data.at(3, 3, k)) / 2));
  }

  TEST_CASE("feature_at matches the four-corner oracle") {
    std::mt19937_64 rng(5);
    const FeatureMap f = testing::random_map(7, 9, 4, rng);
    std::uniform_real_distribution<double> ux(0, 8), uy(0, 6);
    std::vector<double> v(4);
    for (int t = 0; t < 500; ++t) {
      const Point2 p{ux(rng), uy(rng)};
      feature_at(f, p, v);
      const auto o = testing::bilinear_oracle(f, p);
      for (int k = 0; k < 4; ++k) REQUIRE(std::abs(v[k] - o[k]) < 1e-6);
    }
    feature_at(f, {8, 6}, v);
    for (int k = 0; k < 4; ++k) CHECK(v[k] == f.data.at(6, 8, k));
  }

  TEST_CASE("feature_at rejects points off the map") {
    std::mt19937_64 rng(6);
    const FeatureMap f = testing::random_map(4, 4, 2, rng);
    std::vector<double> v(2);
    CHECK_THROWS_AS(feature_at(f, {-0.5, 1}, v), PreconditionError);
    CHECK_THROWS_AS(feature_at(f, {1, 3.5}, v), PreconditionError);
    CHECK_NOTHROW(feature_at(f, {3 + 1e-12, -1e-12}, v));
  }

  TEST_CASE("scatter_feature_grad is the adjoint of feature_at") {
    std::mt19937_64 rng(7);
    const FeatureMap f = testing::random_map(6, 5, 3, rng);
    std::normal_distribution<double> n;
    for (int t = 0; t < 50; ++t) {
      const Point2 p{std::uniform_real_distribution<double>(0, 4)(rng), std::uniform_real_distribution<double>(0, 5)(rng)};
      std::vector<double> g{n(rng), n(rng), n(rng)}, v(3);
      feature_at(f, p, v);
      Tensor3<double> gm(6, 5, 3);
      scatter_feature_grad(gm, p, g);
      double lhs = 0, rhs = 0;
      for (int k = 0; k < 3; ++k) lhs += v[k] * g[k];
      for (std::size_t i = 0; i < gm.size(); ++i) rhs += gm.data[i] * f.data.data[i];
      REQUIRE(lhs == doctest::Approx(rhs).epsilon(1e-12));
    }
  }

  TEST_CASE("extractor output shape follows the ceil rule") {
    ExtractorConfig cfg;
    cfg.width = 6;
    cfg.tower_depth = 1;
    const FeatureExtractor ex(cfg, 1);
    const FeatureMap a = ex.forward(noise_image(64, 64, 1));
    CHECK(a.h() == 8);
    CHECK(a.w() == 8);
    CHECK(a.d() == 6);
    CHECK(a.stride == 8);
    const FeatureMap b = ex.forward(noise_image(65, 64, 1));
    CHECK(b.h() == 9);
    CHECK(b.w() == 8);
    cfg.stride = 4;
    CHECK(FeatureExtractor(cfg, 1).forward(noise_image(64, 64, 1)).h() == 16);
  }

  TEST_CASE("extractor is deterministic and validates input") {
    ExtractorConfig cfg;
    cfg.width = 4;
    cfg.tower_depth = 2;
    const FeatureExtractor ex(cfg, 3);
    const auto img = noise_image(32, 40, 2);
    CHECK(ex.forward(img).data.data == ex.forward(img).data.data);
    CHECK_THROWS_AS(ex.forward(noise_image(4, 40, 2)), InputError);
    CHECK_THROWS_AS(ex.forward(Tensor3<float>(32, 32, 1)), InputError);
    cfg.stride = 16;
    CHECK_THROWS_AS(FeatureExtractor(cfg, 1), ConfigError);
  }

  TEST_CASE("extractor backward matches finite differences") {
    ExtractorConfig cfg;
    cfg.stride = 4;
    cfg.width = 4;
    cfg.tower_depth = 1;
    std::mt19937_64 rng(10);
    std::uniform_real_distribution<float> centered(-1.f, 1.f);
    Tensor3<float> img(12, 12, 3);
    for (auto& v : img.data) v = centered(rng);

    for (const bool all_active : {true, false}) {
      FeatureExtractor ex(cfg, 9);
      if (all_active) {
        // Large biases keep every unit on the linear side of the ReLU.
        for (auto* p : ex.parameters()) {
          const bool bias = p->name.find("bias") != std::string::npos;
          for (auto& v : p->value) v = bias ? 4.f : v * 0.2f;
        }
      }
      FeatureExtractor::Cache cache;
      const FeatureMap f = ex.forward(img, &cache);
      Tensor3<double> probe(f.h(), f.w(), f.d());
      std::normal_distribution<double> n;
      for (auto& v : probe.data) v = n(rng);
      ex.zero_grad();
      ex.backward(cache, probe);
      auto objective = [&] {
        const FeatureMap g = ex.forward(img);
        double s = 0;
        for (std::size_t i = 0; i < g.data.size(); ++i) s += g.data.data[i] * probe.data[i];
        return s;
      };
      auto central = [&](float& v, float h) {
        const float keep = v;
        v = keep + h;
        const double fp = objective();
        v = keep - h;
        const double fm = objective();
        v = keep;
        return (fp - fm) / (2.0 * h);
      };
      int checked = 0, skipped = 0, bad = 0;
      for (auto* p : ex.parameters()) {
        for (std::size_t i = 0; i < p->size(); i += std::max<std::size_t>(1, p->size() / 6)) {
          const double coarse = central(p->value[i], 2e-2f);
          const double fine = central(p->value[i], 5e-3f);
          // Disagreeing step sizes mean a unit crossed zero inside the stencil.
          if (!all_active && std::abs(coarse - fine) > 1e-2 * std::max({1.0, std::abs(fine)})) {
            ++skipped;
            continue;
          }
          ++checked;
          const double ana = p->grad[i];
          if (std::abs(fine - ana) > 1e-2 * std::max({1.0, std::abs(fine), std::abs(ana)})) {
            ++bad;
            MESSAGE(p->name << "[" << i << "] numeric " << fine << " analytic " << ana);
          }
        }
      }
      INFO("all_active=" << all_active << " skipped=" << skipped);
      CHECK(checked >= 3 * (checked + skipped) / 4);
      CHECK(bad == 0);
    }
  }
}

TEST_SUITE("kernels") {
  TEST_CASE("parallel convolution equals the serial reference") {
    std::mt19937_64 rng(11);
    std::normal_distribution<float> n;
    for (const auto& s : {ConvShape{9, 7, 3, 5, 3, 1, 1}, ConvShape{10, 11, 4, 6, 3, 2, 1}, ConvShape{5, 5, 2, 2, 1, 1, 0}}) {
      std::vector<float> in(static_cast<std::size_t>(s.in_h) * s.in_w * s.in_c), w(s.weight_count()), b(s.out_c);
      for (auto* v : {&in, &w, &b})
        for (auto& x : *v) x = n(rng);
      const std::size_t out_n = static_cast<std::size_t>(s.out_h()) * s.out_w() * s.out_c;
      std::vector<float> a(out_n), r(out_n);
      conv2d_forward<float>(s, in, w, b, a);
      reference::conv2d_forward<float>(s, in, w, b, r);
      CHECK(a == r);

      std::vector<float> go(out_n);
      for (auto& x : go) x = n(rng);
      std::vector<float> gi_a(in.size()), gw_a(w.size()), gb_a(b.size());
      std::vector<float> gi_r(in.size()), gw_r(w.size()), gb_r(b.size());
      conv2d_backward<float>(s, in, w, go, gi_a, gw_a, gb_a);
      reference::conv2d_backward<float>(s, in, w, go, gi_r, gw_r, gb_r);
      for (std::size_t i = 0; i < gi_a.size(); ++i) REQUIRE(gi_a[i] == doctest::Approx(gi_r[i]).epsilon(1e-5));
      for (std::size_t i = 0; i < gw_a.size(); ++i) REQUIRE(gw_a[i] == doctest::Approx(gw_r[i]).epsilon(1e-5));
      for (std::size_t i = 0; i < gb_a.size(); ++i) REQUIRE(gb_a[i] == doctest::Approx(gb_r[i]).epsilon(1e-5));
    }
  }

  TEST_CASE("convolution backward matches finite differences in double") {
    const ConvShape s{6, 5, 2, 3, 3, 2, 1};
    std::mt19937_64 rng(12);
    std::normal_distribution<double> n;
    std::vector<double> in(static_cast<std::size_t>(6 * 5 * 2)), w(s.weight_count()), b(3);
    for (auto* v : {&in, &w, &b})
      for (auto& x : *v) x = n(rng);
    const std::size_t out_n = static_cast<std::size_t>(s.out_h()) * s.out_w() * s.out_c;
    std::vector<double> probe(out_n);
    for (auto& x : probe) x = n(rng);
    auto f = [&] {
      std::vector<double> out(out_n);
      conv2d_forward<double>(s, in, w, b, out);
      double acc = 0;
      for (std::size_t i = 0; i < out_n; ++i) acc += out[i] * probe[i];
      return acc;
    };
    std::vector<double> gi(in.size()), gw(w.size()), gb(b.size());
    conv2d_backward<double>(s, in, w, probe, gi, gw, gb);
    std::vector<double*> ptrs;
    std::vector<double> ana;
    for (std::size_t i = 0; i < in.size(); ++i) ptrs.push_back(&in[i]), ana.push_back(gi[i]);
    for (std::size_t i = 0; i < w.size(); ++i) ptrs.push_back(&w[i]), ana.push_back(gw[i]);
    for (std::size_t i = 0; i < b.size(); ++i) ptrs.push_back(&b[i]), ana.push_back(gb[i]);
    const auto r = testing::check_gradient(f, ptrs, ana, 1e-6);
    CHECK(r.failures == 0);
  }

  TEST_CASE("relu and its gradient") {
    std::vector<float> x{-1.f, 0.f, 2.f};
    relu_forward<float>(x);
    CHECK(x == std::vector<float>{0.f, 0.f, 2.f});
    std::vector<float> g{5.f, 5.f, 5.f};
    relu_backward<float>(x, g);
    CHECK(g == std::vector<float>{0.f, 0.f, 5.f});
  }
}
