#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <map>

#include "frontflow/config.hpp"
#include "frontflow/error.hpp"
#include "frontflow/pipeline.hpp"

using namespace frontflow;

namespace {

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::Generic;
}

EnvLookup fake_env(std::map<std::string, std::string> vars) {
  return [vars](const std::string& name) -> std::optional<std::string> {
    const auto it = vars.find(name);
    if (it == vars.end()) return std::nullopt;
    return it->second;
  };
}

std::filesystem::path write_file(const char* name, const std::string& text) {
  const auto d = std::filesystem::temp_directory_path() / "ff_config_test";
  std::filesystem::create_directories(d);
  std::ofstream(d / name) << text;
  return d / name;
}

}  // namespace

TEST_SUITE("config") {
  TEST_CASE("defaults") {
    const auto c = parse_run_config("");
    CHECK(c.seed == 1);
    CHECK(c.mesh_nx == 41);
    CHECK(c.ensemble_size == 500);
    CHECK(c.rho == 0.65);
    CHECK(c.mode == InversionMode::Full);
    CHECK(c.observation.sensors.size() == 23);
    CHECK(c.observation.times.size() == 34);
    CHECK(c.observation.sigma0 == 0.025);
    CHECK(c.observation.floor == 100.0);
    CHECK(c.observation.floor_mode == FloorMode::Deviation);
    CHECK(c.forward.horizon == 110.0);
    CHECK(c.prior.discretisation.grid.nx == 40);
    CHECK(c.prior.scalars[static_cast<int>(ScalarId::Mu)].mid() == doctest::Approx(0.1025));
    CHECK(c.eki_options().seed == c.stage_seed("eki"));
    CHECK(c.stage_seed("eki") != c.stage_seed("data"));
    CHECK(parse_run_config(default_config_json()).resolved_json == c.resolved_json);
  }

  TEST_CASE("file values and validation") {
    const auto c = parse_run_config(R"({"seed": 7, "eki": {"J": 20, "mode": "surrogate"}, "mesh": {"nx": 11}})");
    CHECK(c.seed == 7);
    CHECK(c.ensemble_size == 20);
    CHECK(c.mode == InversionMode::Surrogate);
    CHECK(c.mesh_nx == 11);
    CHECK(c.mesh_ny == 41);

    const auto r = parse_run_config(R"({"prior": {"scalars": {"mu": [0.09, 0.11]}}, "observation": {"times": [5, 10]}})");
    CHECK(r.prior.scalars[static_cast<int>(ScalarId::Mu)].lo == 0.09);
    CHECK(r.observation.times == std::vector<double>{5, 10});

    CHECK(code_of([] { parse_run_config(R"({"eki": {"jay": 3}})"); }) == ErrorCode::Config);
    CHECK(code_of([] { parse_run_config(R"({"colour": 3})"); }) == ErrorCode::Config);
    CHECK(code_of([] { parse_run_config(R"({"eki": {"J": "many"}})"); }) == ErrorCode::Config);
    CHECK(code_of([] { parse_run_config(R"({"eki": {"rho": 1.5}})"); }) == ErrorCode::Config);
    CHECK(code_of([] { parse_run_config(R"({"mesh": {"nx": 1}})"); }) == ErrorCode::Config);
    CHECK(code_of([] { parse_run_config(R"({"seed": -1})"); }) == ErrorCode::Config);
    CHECK(code_of([] { parse_run_config("{not json"); }) == ErrorCode::Config);
  }

  TEST_CASE("precedence: flags over environment over file") {
    const auto file = write_file("p.json", R"({"seed": 3, "eki": {"J": 40, "rho": 0.5}})");
    const auto env = fake_env({{"FRONTFLOW_SEED", "4"}, {"FRONTFLOW_EKI_J", "50"}});
    const auto c = load_run_config(file, {{"seed", "5"}}, env);
    CHECK(c.seed == 5);
    CHECK(c.ensemble_size == 50);
    CHECK(c.rho == 0.5);

    const auto only_file = load_run_config(file, {}, fake_env({}));
    CHECK(only_file.seed == 3);
    CHECK(code_of([&] { load_run_config(file, {{"eki.bogus", "1"}}, fake_env({})); }) == ErrorCode::Config);
    CHECK(code_of([&] { load_run_config(file, {{"eki.J", "abc"}}, fake_env({})); }) == ErrorCode::Config);
    CHECK(load_run_config(file, {{"eki.mode", "surrogate"}}, fake_env({})).mode == InversionMode::Surrogate);
  }

  TEST_CASE("empty or missing files") {
    CHECK(code_of([] { load_run_config(write_file("empty.json", "  \n"), {}, fake_env({})); }) == ErrorCode::Config);
    CHECK(code_of([] { load_run_config(std::filesystem::path("/nonexistent/ff.json"), {}, fake_env({})); }) ==
          ErrorCode::Config);
    CHECK(load_run_config(std::nullopt, {}, fake_env({})).seed == 1);
  }

  TEST_CASE("exit codes") {
    CHECK(exit_code_for(ErrorCode::Config) == 2);
    CHECK(exit_code_for(ErrorCode::Numerical) == 3);
    CHECK(exit_code_for(ErrorCode::NonConvergence) == 4);
    CHECK(exit_code_for(ErrorCode::Io) == 1);
    CHECK(exit_code_for(ErrorCode::Parse) == 1);
  }
}
