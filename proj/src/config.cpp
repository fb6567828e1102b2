#include "frontflow/config.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <thread>

#include <json.hpp>

#include "frontflow/error.hpp"
#include "frontflow/rng.hpp"
#include "io_util.hpp"

namespace frontflow {

using nlohmann::json;

namespace {

json defaults_document() {
  json scalars = json::object(), fields = json::object(), baselines = json::object();
  for (int i = 0; i < kScalarCount; ++i) scalars[std::string(scalar_name(i))] = nullptr;
  for (int i = 0; i < kFieldCount; ++i) fields[std::string(field_name(static_cast<FieldId>(i)))] = nullptr;
  for (int i = 0; i < 3; ++i) baselines[std::string(baseline_name(i))] = nullptr;
  return {
      {"seed", 1},
      {"workers", 0},
      {"mesh", {{"file", nullptr}, {"nx", 41}, {"ny", 41}, {"domain", {0.3, 0.3}}}},
      {"prior",
       {{"grid", 40},
        {"boundary_points", 40},
        {"level_threshold", 1.0},
        {"scalars", scalars},
        {"fields", fields},
        {"baselines", baselines}}},
      {"observation",
       {{"layout", "m23"}, {"times", 34}, {"sigma0", 0.025}, {"floor", 100.0}, {"floor_mode", "deviation"}}},
      {"eki",
       {{"J", 500},
        {"rho", 0.65},
        {"max_iterations", 100},
        {"damping_norm", "gamma_half"},
        {"mode", "full"},
        {"weights", nullptr},
        {"stats", nullptr}}},
      {"simulate", {{"T", 110.0}, {"p0", 0.0}, {"average", "arithmetic"}}},
      {"truth", {{"kind", "benchmark"}, {"grid", 120}}},
  };
}

[[noreturn]] void config_error(const std::string& what) { fail(ErrorCode::Config, "config: " + what); }

bool compatible(const json& def, const json& v) {
  if (def.is_null()) return true;
  if (def.is_number_integer() || def.is_number_unsigned()) return v.is_number_integer() || v.is_number_unsigned();
  if (def.is_number()) return v.is_number();
  if (def.is_string()) return v.is_string();
  if (def.is_boolean()) return v.is_boolean();
  if (def.is_array()) return v.is_array();
  if (def.is_object()) return v.is_object();
  return false;
}

// Merges `patch` into `doc`, rejecting keys that the defaults do not know.
void merge_checked(json& doc, const json& patch, const std::string& path) {
  if (!patch.is_object()) config_error((path.empty() ? "document" : "'" + path + "'") + " must be an object");
  for (const auto& [key, value] : patch.items()) {
    const std::string where = path.empty() ? key : path + "." + key;
    if (!doc.contains(key)) config_error("unknown key '" + where + "'");
    auto& slot = doc[key];
    if (slot.is_object() && value.is_object()) {
      merge_checked(slot, value, where);
      continue;
    }
    const bool times_list = where == "observation.times" && value.is_array();
    if (!value.is_null() && !times_list && !compatible(slot, value)) config_error("wrong type for '" + where + "'");
    slot = value;
  }
}

json parse_leaf(const json& def, const std::string& text, const std::string& where) {
  if (def.is_string() || def.is_null()) {
    if (def.is_null() && !text.empty() && (text.front() == '{' || text.front() == '[')) {
      try {
        return json::parse(text);
      } catch (const json::parse_error&) {
        config_error("cannot parse value for '" + where + "'");
      }
    }
    return text;
  }
  try {
    json v = json::parse(text);
    if (where == "observation.times" && v.is_array()) return v;
    if (!compatible(def, v)) config_error("wrong type for '" + where + "': '" + text + "'");
    return v;
  } catch (const json::parse_error&) {
    config_error("cannot parse value for '" + where + "': '" + text + "'");
  }
}

json* find_path(json& doc, const std::string& dotted) {
  json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = dotted.find('.', start);
    const std::string key = dotted.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (!node->is_object() || !node->contains(key)) return nullptr;
    node = &(*node)[key];
    if (dot == std::string::npos) return node;
    start = dot + 1;
  }
}

void collect_leaves(const json& node, const std::string& path, std::vector<std::string>& out) {
  if (node.is_object() && !node.empty()) {
    for (const auto& [k, v] : node.items()) collect_leaves(v, path.empty() ? k : path + "." + k, out);
  } else {
    out.push_back(path);
  }
}

std::string env_name(const std::string& dotted) {
  std::string s = "FRONTFLOW_";
  for (char c : dotted) s += c == '.' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return s;
}

Range range_from(const json& v, const std::string& where) {
  if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number())
    config_error("'" + where + "' must be [lo, hi]");
  return {v[0].get<double>(), v[1].get<double>()};
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

RunConfig from_document(const json& d) {
  RunConfig c;
  auto num = [&](const json& v, const std::string& where) {
    if (!v.is_number()) config_error("'" + where + "' must be a number");
    return v.get<double>();
  };
  auto integer = [&](const json& v, const std::string& where, long long lo) {
    if (!v.is_number_integer() && !v.is_number_unsigned()) config_error("'" + where + "' must be an integer");
    const auto x = v.get<long long>();
    if (x < lo) config_error("'" + where + "' must be >= " + std::to_string(lo));
    return x;
  };
  auto path_or_null = [&](const json& v, const std::string& where) -> std::optional<std::filesystem::path> {
    if (v.is_null()) return std::nullopt;
    if (!v.is_string() || v.get<std::string>().empty()) config_error("'" + where + "' must be a path or null");
    return std::filesystem::path(v.get<std::string>());
  };

  const auto seed = d.at("seed");
  if (!seed.is_number_unsigned() && !(seed.is_number_integer() && seed.get<long long>() >= 0))
    config_error("'seed' must be a non-negative integer");
  c.seed = seed.get<std::uint64_t>();
  c.workers = static_cast<int>(integer(d.at("workers"), "workers", 0));

  const auto& m = d.at("mesh");
  c.mesh_file = path_or_null(m.at("file"), "mesh.file");
  c.mesh_nx = static_cast<int>(integer(m.at("nx"), "mesh.nx", 2));
  c.mesh_ny = static_cast<int>(integer(m.at("ny"), "mesh.ny", 2));
  const auto& dom = m.at("domain");
  if (!dom.is_array() || dom.size() != 2) config_error("'mesh.domain' must be [Dx, Dy]");
  c.domain = {num(dom[0], "mesh.domain"), num(dom[1], "mesh.domain")};
  if (!(c.domain.x > 0.0 && c.domain.y > 0.0)) config_error("'mesh.domain' must be positive");

  const auto& p = d.at("prior");
  c.prior = PriorSpec::defaults(c.domain, static_cast<int>(integer(p.at("grid"), "prior.grid", 1)),
                                static_cast<int>(integer(p.at("boundary_points"), "prior.boundary_points", 2)));
  c.prior.level_threshold = num(p.at("level_threshold"), "prior.level_threshold");
  for (int i = 0; i < kScalarCount; ++i) {
    const std::string name(scalar_name(i));
    const auto& v = p.at("scalars").at(name);
    if (!v.is_null()) c.prior.scalars[i] = range_from(v, "prior.scalars." + name);
  }
  for (int i = 0; i < kFieldCount; ++i) {
    const std::string name(field_name(static_cast<FieldId>(i)));
    const auto& v = p.at("fields").at(name);
    if (v.is_null()) continue;
    const std::string where = "prior.fields." + name;
    if (!v.is_object()) config_error("'" + where + "' must be an object");
    auto& f = c.prior.fields[i];
    for (const auto& [k, x] : v.items()) {
      if (k == "sigma")
        f.sigma = num(x, where + ".sigma");
      else if (k == "ell")
        f.ell = num(x, where + ".ell");
      else if (k == "nu")
        f.nu = num(x, where + ".nu");
      else if (k == "mean")
        f.mean = num(x, where + ".mean");
      else
        config_error("unknown key '" + where + "." + k + "'");
    }
  }
  for (int i = 0; i < 3; ++i) {
    const std::string name(baseline_name(i));
    const auto& v = p.at("baselines").at(name);
    if (!v.is_null()) c.prior.baselines[i] = range_from(v, "prior.baselines." + name);
  }
  try {
    c.prior.validate();
  } catch (const Error& e) {
    config_error(e.what());
  }

  const auto& s = d.at("simulate");
  c.forward.horizon = num(s.at("T"), "simulate.T");
  if (!(c.forward.horizon > 0.0)) config_error("'simulate.T' must be positive");
  c.forward.p0 = num(s.at("p0"), "simulate.p0");
  const auto avg = lower(s.at("average").get<std::string>());
  if (avg == "arithmetic")
    c.forward.average = ConductivityAverage::Arithmetic;
  else if (avg == "harmonic")
    c.forward.average = ConductivityAverage::Harmonic;
  else
    config_error("'simulate.average' must be arithmetic or harmonic");

  const auto& o = d.at("observation");
  c.layout = o.at("layout").get<std::string>();
  if (c.layout == "m23")
    c.observation.sensors = layout_m23(c.domain);
  else if (c.layout == "grid100")
    c.observation.sensors = layout_grid100(c.domain);
  else {
    const auto layout = read_layout_csv(c.layout);
    c.observation.sensors = layout.positions;
    c.observation.sensor_ids = layout.ids;
  }
  const auto& times = o.at("times");
  if (times.is_array()) {
    for (const auto& t : times) c.observation.times.push_back(num(t, "observation.times"));
  } else {
    c.observation.times = uniform_times(static_cast<int>(integer(times, "observation.times", 1)), c.forward.horizon);
  }
  c.observation.sigma0 = num(o.at("sigma0"), "observation.sigma0");
  c.observation.floor = num(o.at("floor"), "observation.floor");
  const auto fm = lower(o.at("floor_mode").get<std::string>());
  if (fm == "deviation")
    c.observation.floor_mode = FloorMode::Deviation;
  else if (fm == "value")
    c.observation.floor_mode = FloorMode::Value;
  else
    config_error("'observation.floor_mode' must be deviation or value");
  try {
    c.observation.validate(c.forward.horizon);
  } catch (const Error& e) {
    config_error(e.what());
  }
  c.forward.times = c.observation.times;

  const auto& e = d.at("eki");
  c.ensemble_size = static_cast<int>(integer(e.at("J"), "eki.J", 2));
  c.rho = num(e.at("rho"), "eki.rho");
  if (!(c.rho > 0.0 && c.rho < 1.0)) config_error("'eki.rho' must lie in (0,1)");
  c.max_iterations = static_cast<int>(integer(e.at("max_iterations"), "eki.max_iterations", 1));
  const auto dn = lower(e.at("damping_norm").get<std::string>());
  if (dn == "gamma_half")
    c.damping_norm = DampingNorm::GammaHalf;
  else if (dn == "gamma_inverse_half")
    c.damping_norm = DampingNorm::GammaInverseHalf;
  else
    config_error("'eki.damping_norm' must be gamma_half or gamma_inverse_half");
  const auto mode = lower(e.at("mode").get<std::string>());
  if (mode == "full")
    c.mode = InversionMode::Full;
  else if (mode == "surrogate")
    c.mode = InversionMode::Surrogate;
  else
    config_error("'eki.mode' must be full or surrogate");
  c.weights = path_or_null(e.at("weights"), "eki.weights");
  c.stats = path_or_null(e.at("stats"), "eki.stats");

  const auto& t = d.at("truth");
  const auto kind = lower(t.at("kind").get<std::string>());
  if (kind == "benchmark")
    c.truth = TruthKind::Benchmark;
  else if (kind == "single_strip")
    c.truth = TruthKind::SingleStrip;
  else
    config_error("'truth.kind' must be benchmark or single_strip");
  c.truth_grid = static_cast<int>(integer(t.at("grid"), "truth.grid", 1));

  c.resolved_json = d.dump(2);
  return c;
}

RunConfig resolve(json doc, const std::vector<Override>& flags, const EnvLookup& env) {
  json defaults = defaults_document();
  auto apply = [&](const std::string& key, const std::string& value) {
    json* def = find_path(defaults, key);
    json* slot = find_path(doc, key);
    if (!def || !slot) config_error("unknown key '" + key + "'");
    *slot = parse_leaf(*def, value, key);
  };
  if (env) {
    std::vector<std::string> leaves;
    collect_leaves(defaults, "", leaves);
    for (const auto& key : leaves)
      if (const auto value = env(env_name(key))) apply(key, *value);
  }
  for (const auto& [key, value] : flags) apply(key, value);
  return from_document(doc);
}

}  // namespace

int RunConfig::resolved_workers() const { return workers > 0 ? workers : std::max(1u, std::thread::hardware_concurrency()); }

Mesh RunConfig::build_mesh() const {
  if (mesh_file) return load_mesh(*mesh_file);
  return generate_structured_mesh(mesh_nx, mesh_ny, domain);
}

EkiOptions RunConfig::eki_options() const {
  EkiOptions o;
  o.rho = rho;
  o.seed = stage_seed("eki");
  o.max_iterations = max_iterations;
  o.damping_norm = damping_norm;
  o.workers = resolved_workers();
  return o;
}

std::uint64_t RunConfig::stage_seed(const std::string& stage) const { return substream_key(seed, stage); }

EnvLookup process_environment() {
  return [](const std::string& name) -> std::optional<std::string> {
    if (const char* v = std::getenv(name.c_str())) return std::string(v);
    return std::nullopt;
  };
}

RunConfig parse_run_config(const std::string& json_text, const std::vector<Override>& flags, const EnvLookup& env) {
  json doc = defaults_document();
  if (!json_text.empty()) {
    json patch;
    try {
      patch = json::parse(json_text);
    } catch (const json::parse_error& e) {
      config_error(std::string("invalid JSON: ") + e.what());
    }
    merge_checked(doc, patch, "");
  }
  return resolve(std::move(doc), flags, env);
}

RunConfig load_run_config(const std::optional<std::filesystem::path>& file, const std::vector<Override>& flags,
                          const EnvLookup& env) {
  std::string text;
  if (file) {
    try {
      text = detail::read_all_text(*file);
    } catch (const Error& e) {
      config_error(e.what());
    }
    if (detail::trim(text).empty()) config_error("'" + file->string() + "' is empty");
  }
  return parse_run_config(text, flags, env);
}

std::string default_config_json() { return defaults_document().dump(2); }

}  // namespace frontflow
