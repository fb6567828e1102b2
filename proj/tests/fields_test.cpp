#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "frontflow/error.hpp"
#include "frontflow/fields.hpp"

using namespace frontflow;

namespace {

constexpr Vec2 kDomain{0.3, 0.3};

ParameterVector blank(const PriorSpec& prior) {
  ParameterVector u;
  u.discretisation = prior.discretisation;
  const auto n = prior.discretisation.grid.size();
  const auto b = static_cast<std::size_t>(prior.discretisation.boundary_points);
  u.level.assign(n, 0.0);
  u.log_k_top.assign(n, std::log(3e-9));
  u.log_k_bottom.assign(n, std::log(3.5e-9));
  u.log_k_defect.assign(n, std::log(1e-10));
  u.xi_top.assign(b, 0.0);
  u.xi_bottom.assign(b, 0.0);
  for (int i = 0; i < kScalarCount; ++i) u.scalars[i] = prior.scalars[i].mid();
  return u;
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

}  // namespace

TEST_SUITE("fields") {
  TEST_CASE("matern closed forms") {
    CHECK(matern_covariance(0.0, {1.0, 1.0, 1.5, 0.0}) == 1.0);
    CHECK(matern_covariance(0.0, {2.0, 0.3, 2.0, 0.0}) == doctest::Approx(4.0));
    CHECK(matern_covariance(1.0, {1.0, 1.0, 0.5, 0.0}) == doctest::Approx(std::exp(-1.0)).epsilon(1e-12));
    CHECK(matern_covariance(1.0, {1.0, 1.0, 1.5, 0.0}) ==
          doctest::Approx((1 + std::sqrt(3.0)) * std::exp(-std::sqrt(3.0))).epsilon(1e-12));
    CHECK(matern_covariance(1.0, {1.0, 1.0, 1.5, 0.0}) == doctest::Approx(0.4833577).epsilon(1e-6));
    const double s5 = std::sqrt(5.0) * 0.7;
    CHECK(matern_covariance(0.7, {1.0, 1.0, 2.5, 0.0}) ==
          doctest::Approx((1 + s5 + s5 * s5 / 3) * std::exp(-s5)).epsilon(1e-12));
  }

  TEST_CASE("bessel K against closed forms") {
    for (double x : {0.01, 0.3, 1.0, 4.0, 25.0}) {
      const double half = std::sqrt(std::numbers::pi / (2 * x)) * std::exp(-x);
      CHECK(bessel_k(0.5, x) == doctest::Approx(half).epsilon(1e-12));
      CHECK(bessel_k(1.5, x) == doctest::Approx(half * (1 + 1 / x)).epsilon(1e-12));
    }
  }

  TEST_CASE("matern is monotone in distance") {
    const MaternSpec s{1.3, 0.05, 2.0, 0.0};
    double prev = matern_covariance(0.0, s);
    for (int k = 1; k < 200; ++k) {
      const double c = matern_covariance(k * 1e-3, s);
      CHECK(c <= prev);
      CHECK(c > 0.0);
      prev = c;
    }
  }

  TEST_CASE("grf degenerate amplitude and determinism") {
    const RegularGrid g{12, 9, kDomain};
    const auto pts = g.points();
    const MaternSpec tiny{1e-12, 0.03, 2.0, -21.5};
    for (double v : sample_grf(tiny, pts, 17)) CHECK(std::abs(v + 21.5) < 1e-5);
    const MaternSpec s{1.0, 0.03, 1.5, 0.0};
    CHECK(sample_grf(s, pts, 17) == sample_grf(s, pts, 17));
    CHECK(sample_grf(s, pts, 17) != sample_grf(s, pts, 18));
  }

  TEST_CASE("grf empirical covariance at r = ell") {
    const MaternSpec s{1.0, 0.05, 2.0, 0.0};
    const std::vector<Vec2> pts{{0.1, 0.1}, {0.15, 0.1}};
    const int n = 2000;
    double sxy = 0, sxx = 0, syy = 0;
    for (int k = 0; k < n; ++k) {
      const auto v = sample_grf(s, pts, 1000 + k);
      sxy += v[0] * v[1];
      sxx += v[0] * v[0];
      syy += v[1] * v[1];
    }
    const double c = matern_covariance(0.05, s);
    const double se = std::sqrt((1.0 + c * c) / n);
    CHECK(std::abs(sxy / n - c) < 3 * se);
    CHECK(std::abs(sxx / n - 1.0) < 3 * std::sqrt(2.0 / n));
    CHECK(std::abs(syy / n - 1.0) < 3 * std::sqrt(2.0 / n));
  }

  TEST_CASE("covariance factor is cached and reconstructs C") {
    const RegularGrid g{6, 6, kDomain};
    const auto pts = g.points();
    const MaternSpec s{0.3, 0.03, 2.0, 0.0};
    const auto f1 = covariance_factor(s, pts, {});
    const auto f2 = covariance_factor(s, pts, {});
    CHECK(f1.get() == f2.get());
    const Eigen::MatrixXd c = f1->lower * f1->lower.transpose();
    for (std::size_t i = 0; i < pts.size(); ++i)
      for (std::size_t j = 0; j < pts.size(); ++j) {
        const double r = std::hypot(pts[i].x - pts[j].x, pts[i].y - pts[j].y);
        const double expect = matern_covariance(r, s) + (i == j ? f1->jitter_used : 0.0);
        CHECK(c(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) == doctest::Approx(expect).epsilon(1e-10));
      }
    CHECK(f1->jitter_used <= 1e-10 * 0.09 * 256);
  }

  TEST_CASE("prior scalar statistics and supports") {
    const auto prior = PriorSpec::defaults(kDomain, 6, 6);
    const int n = 10000;
    double s = 0;
    for (int k = 0; k < n; ++k) {
      const auto u = sample_prior(prior, 50000 + k);
      s += u.scalar(ScalarId::Mu);
      CHECK(u.scalar(ScalarId::KNom) >= 2e-10);
      CHECK(u.scalar(ScalarId::KNom) <= 6.5e-10);
      for (int i = 0; i < kScalarCount; ++i) CHECK(prior.scalars[i].contains_open(u.scalars[i]));
    }
    const double se = (0.12 - 0.085) / std::sqrt(12.0 * n);
    CHECK(std::abs(s / n - 0.1025) < 3 * se);
  }

  TEST_CASE("prior level-set exceedance is about 16 percent") {
    const auto prior = PriorSpec::defaults(kDomain, 8, 8);
    const auto& g = prior.discretisation.grid;
    const std::size_t probe = g.index(3, 4);
    const int n = 10000;
    int hit = 0;
    for (int k = 0; k < n; ++k) hit += sample_prior(prior, 900000 + k).level[probe] > 1.0;
    const double p = normal_cdf(-1.0);
    CHECK(p == doctest::Approx(0.1587).epsilon(1e-3));
    CHECK(std::abs(static_cast<double>(hit) / n - p) < 3 * std::sqrt(p * (1 - p) / n));
    CHECK(static_cast<double>(hit) / n > 0.13);
    CHECK(static_cast<double>(hit) / n < 0.19);
  }

  TEST_CASE("prior independence between scalars and fields") {
    const auto prior = PriorSpec::defaults(kDomain, 6, 6);
    const int n = 10000;
    double sa = 0, sb = 0, sab = 0, saa = 0, sbb = 0;
    for (int k = 0; k < n; ++k) {
      const auto u = sample_prior(prior, 7000000 + k);
      const double a = u.scalar(ScalarId::Mu), b = u.level[10];
      sa += a;
      sb += b;
      sab += a * b;
      saa += a * a;
      sbb += b * b;
    }
    const double cov = sab / n - sa / n * sb / n;
    const double r = cov / std::sqrt((saa / n - sa / n * sa / n) * (sbb / n - sb / n * sb / n));
    CHECK(std::abs(r) < 3.0 / std::sqrt(n));
  }

  TEST_CASE("sub-streams isolate components") {
    auto coarse = PriorSpec::defaults(kDomain, 6, 6);
    auto fine = PriorSpec::defaults(kDomain, 6, 12);
    const auto a = sample_prior(coarse, 77), b = sample_prior(fine, 77);
    CHECK(a.scalars == b.scalars);
    CHECK(a.level == b.level);
    CHECK(a.xi_top != b.xi_top);
  }

  TEST_CASE("realise: defect free, full defect, race strip precedence") {
    const auto prior = PriorSpec::defaults(kDomain, 40, 40);
    const auto& g = prior.discretisation.grid;
    auto u = blank(prior);
    auto f = realise_fields(u, prior, g);
    for (std::size_t k = 0; k < g.size(); ++k) {
      CHECK(f.labels[k] == Region::Nominal);
      CHECK(f.log_k[k] == std::log(u.scalar(ScalarId::KNom)));
      CHECK(f.phi[k] == u.scalar(ScalarId::PhiNom));
    }

    u.level.assign(g.size(), 2.0);
    f = realise_fields(u, prior, g);
    for (std::size_t k = 0; k < g.size(); ++k) {
      CHECK(f.labels[k] == Region::Defect);
      CHECK(f.phi[k] == u.scalar(ScalarId::PhiDef));
    }

    u.xi_top.assign(u.xi_top.size(), 0.0075);
    f = realise_fields(u, prior, g);
    for (int j = 0; j < g.ny; ++j)
      for (int i = 0; i < g.nx; ++i) {
        const auto k = g.index(i, j);
        CHECK(f.labels[k] == (g.y(j) > 0.3 - 0.0075 ? Region::RaceTop : Region::Defect));
      }

    u.xi_bottom.assign(u.xi_bottom.size(), -0.02);
    CHECK(realise_fields(u, prior, g).labels == f.labels);
  }

  TEST_CASE("region partition matches the defining inequalities") {
    const auto prior = PriorSpec::defaults(kDomain, 30, 30);
    const auto& g = prior.discretisation.grid;
    for (std::uint64_t seed : {1u, 2u, 3u, 4u, 5u}) {
      auto u = sample_prior(prior, seed);
      for (auto& x : u.xi_top) x += 0.01;
      const auto f = realise_fields(u, prior, g);
      for (int i = 0; i < g.nx; ++i) {
        const double xt = std::max(0.0, race_width_at(u.xi_top, u.discretisation, g.x(i)));
        const double xb = std::max(0.0, race_width_at(u.xi_bottom, u.discretisation, g.x(i)));
        for (int j = 0; j < g.ny; ++j) {
          const auto k = g.index(i, j);
          const double y = g.y(j);
          Region want = Region::Nominal;
          if (y > g.domain.y - xt)
            want = Region::RaceTop;
          else if (y < xb)
            want = Region::RaceBottom;
          else if (u.level[k] > prior.level_threshold)
            want = Region::Defect;
          CHECK(f.labels[k] == want);
          CHECK(f.phi[k] > 0.0);
          CHECK(f.phi[k] < 1.0);
        }
      }
    }
  }

  TEST_CASE("realise rejects a mismatched grid") {
    const auto prior = PriorSpec::defaults(kDomain, 10, 10);
    CHECK_THROWS_AS(realise_fields(blank(prior), prior, RegularGrid{12, 12, kDomain}), Error);
  }

  TEST_CASE("inlet pressure") {
    const InletParams truth{109120.0, 1.114, 0.42, 0.66};
    CHECK(inlet_pressure(0.0, truth) == doctest::Approx(72019.2).epsilon(1e-12));
    const InletParams flat{1e5, 1.0, 0.5, 1.0};
    for (double t : {0.0, 0.1, 5.0, 100.0}) CHECK(inlet_pressure(t, flat) == 1e5);
    CHECK(std::abs(inlet_pressure(1e6 * truth.lambda, truth) / truth.p_inlet - 1.0) < 1e-6);
    double prev = 0.0;
    for (int k = 0; k < 1000; ++k) {
      const double p = inlet_pressure(k * 0.11, truth);
      CHECK(p >= prev);
      prev = p;
    }
  }

  TEST_CASE("synthetic benchmark truth") {
    const RegularGrid g{120, 120, kDomain};
    const auto truth = build_synthetic_truth(TruthSpec::benchmark(kDomain), g);
    const auto at = [&](double x, double y) { return g.index(g.nearest_i(x), g.nearest_j(y)); };
    CHECK(truth.fields.log_k[at(0.15, 0.15)] == std::log(1.2e-10));
    CHECK(truth.fields.phi[at(0.15, 0.15)] == 0.62);
    CHECK(truth.fields.log_k[at(0.23, 0.08)] == std::log(4e-11));
    CHECK(truth.fields.log_k[at(0.2, 0.005)] == std::log(4e-9));
    CHECK(truth.fields.phi[at(0.2, 0.005)] == 0.91);
    CHECK(truth.fields.labels[at(0.2, 0.005)] == Region::RaceBottom);
    CHECK(truth.fields.log_k[at(0.05, 0.297)] == std::log(2.5e-9));
    CHECK(truth.fields.phi[at(0.05, 0.05)] == 0.73);
    CHECK(truth.fields.log_k[at(0.05, 0.05)] == std::log(4e-10));
    CHECK(truth.process.mu == 0.092);
    CHECK(truth.process.inlet.p_inlet == 109120.0);
    CHECK(truth.process.inlet.chi == 0.66);
  }

  TEST_CASE("FLD1 and PRM1 round trips") {
    const auto dir = std::filesystem::temp_directory_path() / "ff_fields_test";
    std::filesystem::create_directories(dir);
    const auto prior = PriorSpec::defaults(kDomain, 12, 9);
    const auto u = sample_prior(prior, 4);
    const auto f = realise_fields(u, prior, prior.discretisation.grid);
    save_field_pair(dir / "a.fld", f);
    const auto back = load_field_pair(dir / "a.fld");
    CHECK(back.grid == f.grid);
    CHECK(back.log_k == f.log_k);
    CHECK(back.phi == f.phi);
    CHECK(back.labels == f.labels);
    CHECK(std::filesystem::file_size(dir / "a.fld") == 4 + 2 * 8 + 2 * 8 + f.log_k.size() * 17);

    save_parameter_vector(dir / "a.prm", u);
    const auto v = load_parameter_vector(dir / "a.prm");
    CHECK(v.scalars == u.scalars);
    CHECK(v.level == u.level);
    CHECK(v.xi_bottom == u.xi_bottom);
    CHECK(v.discretisation == u.discretisation);

    std::filesystem::resize_file(dir / "a.fld", 100);
    CHECK_THROWS_AS(load_field_pair(dir / "a.fld"), Error);
    std::filesystem::remove_all(dir);
  }
}
