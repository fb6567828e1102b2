#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "frontflow/frontflow.h"

namespace fs = std::filesystem;

namespace {

const char* const kTiny[] = {"mesh.nx", "11", "mesh.ny", "11", "prior.grid", "8", "prior.boundary_points", "8",
                             "observation.times", "3", "eki.J", "10", "workers", "1", nullptr};

fs::path work(const char* name) {
  const auto d = fs::temp_directory_path() / "ff_capi_test" / name;
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

ff_config* tiny_config() {
  ff_config* c = nullptr;
  REQUIRE(ff_config_parse("", kTiny, &c) == FF_OK);
  return c;
}

void count_progress(const char*, void* user) { ++*static_cast<int*>(user); }

}  // namespace

TEST_CASE("version and error reporting") {
  CHECK(std::strlen(ff_version()) > 0);
  ff_config* c = nullptr;
  CHECK(ff_config_parse(R"({"nonsense": 1})", nullptr, &c) == FF_ERR_CONFIG);
  CHECK(c == nullptr);
  CHECK(std::string(ff_last_error()).find("nonsense") != std::string::npos);
  CHECK(ff_exit_code(FF_ERR_CONFIG) == 2);
  CHECK(ff_exit_code(FF_ERR_NUMERICAL) == 3);
  CHECK(ff_exit_code(FF_ERR_NONCONVERGENCE) == 4);
  CHECK(ff_exit_code(FF_ERR_IO) == 1);
  CHECK(ff_exit_code(FF_OK) == 0);
  CHECK(ff_config_parse("{}", nullptr, nullptr) == FF_ERR_INVALID_ARGUMENT);
}

TEST_CASE("configuration documents") {
  const auto defaults = nlohmann::json::parse(ff_config_default_json());
  CHECK(defaults["eki"]["J"] == 500);
  ff_config* c = tiny_config();
  const auto resolved = nlohmann::json::parse(ff_config_json(c));
  CHECK(resolved["mesh"]["nx"] == 11);
  CHECK(resolved["eki"]["J"] == 10);
  ff_config_free(c);

  const auto dir = work("config");
  std::ofstream(dir / "empty.json") << "";
  CHECK(ff_config_load((dir / "empty.json").c_str(), nullptr, 0, &c) == FF_ERR_CONFIG);
}

TEST_CASE("mesh handles") {
  ff_mesh* m = nullptr;
  REQUIRE(ff_mesh_generate(3, 2, 0.3, 0.3, &m) == FF_OK);
  CHECK(ff_mesh_node_count(m) == 6);
  CHECK(ff_mesh_element_count(m) == 4);
  std::vector<double> xy(12);
  REQUIRE(ff_mesh_nodes(m, xy.data()) == FF_OK);
  CHECK(xy[2] == doctest::Approx(0.15));
  ff_mesh_free(m);
  CHECK(ff_mesh_generate(1, 2, 0.3, 0.3, &m) != FF_OK);
  CHECK(ff_mesh_load("/nonexistent/mesh.txt", &m) != FF_OK);
}

TEST_CASE("params, simulation and observation") {
  ff_config* c = tiny_config();
  ff_params* u = nullptr;
  REQUIRE(ff_params_sample(c, 4, &u) == FF_OK);
  double s[10];
  REQUIRE(ff_params_scalars(u, s) == FF_OK);
  CHECK(s[5] > 0.0);
  const auto dir = work("params");
  const auto prm = (dir / "u.prm").string();
  REQUIRE(ff_params_save(u, prm.c_str()) == FF_OK);
  ff_params* back = nullptr;
  REQUIRE(ff_params_load(prm.c_str(), &back) == FF_OK);
  double t[10];
  ff_params_scalars(back, t);
  CHECK(std::memcmp(s, t, sizeof s) == 0);

  ff_record* r = nullptr;
  REQUIRE(ff_simulate_params(c, u, &r) == FF_OK);
  const size_t k = ff_record_snapshot_count(r);
  REQUIRE(k > 1);
  CHECK(ff_record_snapshot_time(r, k - 1) > ff_record_snapshot_time(r, 0));
  std::vector<double> p(121), f(121);
  CHECK(ff_record_snapshot(r, k - 1, p.data(), f.data(), 121) == FF_OK);
  CHECK(ff_record_snapshot(r, k - 1, p.data(), f.data(), 120) == FF_ERR_SHAPE_MISMATCH);
  for (double v : f) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
  std::vector<double> obs(23 * 3);
  CHECK(ff_record_observe(c, r, obs.data(), obs.size()) == FF_OK);
  CHECK(ff_record_observe(c, r, obs.data(), 5) == FF_ERR_SHAPE_MISMATCH);
  double fill = -1.0;
  const int filled = ff_record_fill_time(r, &fill);
  if (filled) CHECK(fill > 0.0);

  ff_record_free(r);
  ff_params_free(back);
  ff_params_free(u);
  ff_config_free(c);
}

TEST_CASE("commands through the C interface") {
  ff_config* c = tiny_config();
  const auto dir = work("commands");
  std::ofstream(dir / "truth.json") << R"({"truth": "single_strip", "grid": 20})";
  REQUIRE(ff_cmd_make_data(c, (dir / "truth.json").c_str(), (dir / "d.csv").c_str()) == FF_OK);
  int ticks = 0;
  ff_inversion_report rep{};
  REQUIRE(ff_cmd_invert(c, (dir / "d.csv").c_str(), (dir / "inv").c_str(), count_progress, &ticks, &rep) == FF_OK);
  CHECK(rep.converged == 1);
  CHECK(rep.iterations > 0);
  CHECK(ticks >= rep.iterations);
  REQUIRE(ff_cmd_summarize(c, (dir / "inv" / "ensemble.ens").c_str(), (dir / "sum").c_str()) == FF_OK);
  CHECK(fs::exists(dir / "sum" / "posterior_grid.csv"));
  CHECK(ff_cmd_simulate(c, (dir / "nope.json").c_str(), (dir / "sim").c_str()) != FF_OK);
  ff_config_free(c);

  const char* const surrogate[] = {"eki.mode", "surrogate", nullptr};
  REQUIRE(ff_config_parse("", surrogate, &c) == FF_OK);
  CHECK(ff_cmd_invert(c, (dir / "d.csv").c_str(), (dir / "s").c_str(), nullptr, nullptr, nullptr) == FF_ERR_CONFIG);
  ff_config_free(c);
}

TEST_CASE("surrogate prediction through the C interface") {
  const fs::path fixtures = FF_FIXTURES;
  ff_surrogate* m = nullptr;
  REQUIRE(ff_surrogate_load((fixtures / "tiny.donw1").c_str(), &m) == FF_OK);
  int h = 0, w = 0;
  ff_surrogate_grid(m, &h, &w);
  CHECK(h == 4);
  CHECK(w == 6);

  std::ifstream in(fixtures / "tiny_expected.json");
  const auto ex = nlohmann::json::parse(in);
  const auto log_k = ex["log_k"].get<std::vector<double>>();
  const auto phi = ex["phi"].get<std::vector<double>>();
  const auto scalars = ex["scalars"].get<std::vector<double>>();
  std::vector<double> q;
  for (const auto& row : ex["queries"])
    for (double v : row) q.push_back(v);
  const std::size_t n = q.size() / 3;
  std::vector<double> p(n), f(n);
  REQUIRE(ff_surrogate_predict(m, log_k.data(), phi.data(), scalars.data(), q.data(), n, p.data(), f.data()) == FF_OK);
  const auto want_p = ex["p"].get<std::vector<double>>();
  const auto want_f = ex["f_out"].get<std::vector<double>>();
  for (std::size_t k = 0; k < n; ++k) {
    CHECK(std::abs(f[k] - want_f[k]) <= 1e-6);
    CHECK(std::abs(p[k] - want_p[k]) <= 1e-6 * std::max(1.0, std::abs(want_p[k])));
  }
  ff_surrogate_free(m);

  const auto dir = work("surrogate");
  std::ofstream(dir / "junk.donw1") << "DONW1 but not really";
  CHECK(ff_surrogate_load((dir / "junk.donw1").c_str(), &m) != FF_OK);
}
