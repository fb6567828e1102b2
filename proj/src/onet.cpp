#include "frontflow/onet.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <json.hpp>
#include <unsupported/Eigen/SpecialFunctions>

#include "frontflow/error.hpp"
#include "frontflow/rng.hpp"
#include "io_util.hpp"

namespace frontflow {

namespace {

using MatF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using VecF = Eigen::VectorXf;

constexpr std::string_view kMagic = "DONW1";
constexpr std::uint8_t kDtypeF32 = 1;

std::string shape_str(const std::vector<std::int64_t>& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
  return out + "]";
}

}  // namespace

int SurrogateConfig::bottleneck_h() const { return grid_h >> std::max(0, pool_count()); }
int SurrogateConfig::bottleneck_w() const { return grid_w >> std::max(0, pool_count()); }

void SurrogateConfig::validate() const {
  auto bad = [](const std::string& what) { fail(ErrorCode::Validation, "surrogate config: " + what); };
  if (grid_h < 1 || grid_w < 1) bad("grid must be at least 1x1");
  if (channels.size() < 2) bad("channel ladder needs an input and at least one block");
  if (channels.front() != 4) bad("field branch takes 4 input channels (log K, phi, x, y)");
  for (int c : channels)
    if (c < 1) bad("channel counts must be positive");
  if (bottleneck_h() < 1 || bottleneck_w() < 1) bad("grid too small for " + std::to_string(pool_count()) + " poolings");
  if (scalar_hidden.empty()) bad("scalar MLP needs at least one hidden layer");
  for (int h : scalar_hidden)
    if (h < 1) bad("scalar MLP widths must be positive");
  if (n_out < 2 || n_out % 2 != 0) bad("N_out must be even and positive, got " + std::to_string(n_out));
  if (trunk_layers < 1) bad("trunk needs L >= 1");
  if (n_freq < 1) bad("N_freq must be >= 1");
  if (!(delta > 0.0 && delta < 1.0)) bad("delta must lie in (0,1)");
  if (!(bn_eps > 0.0)) bad("batch-norm epsilon must be positive");
  for (double s : coord_scale)
    if (!(s > 0.0)) bad("coordinate scales must be positive");
  for (int c = 0; c < 2; ++c)
    if (!(field_max[c] > field_min[c])) bad("field max must exceed field min");
  for (double s : scalar_sd)
    if (!(s > 0.0)) bad("scalar SDs must be positive");
  if (!(p_sd > 0.0)) bad("pressure SD must be positive");
}

SurrogateConfig SurrogateConfig::desk() { return {}; }

SurrogateConfig SurrogateConfig::paper() {
  SurrogateConfig c;
  c.grid_h = c.grid_w = 120;
  c.channels = {4, 64, 128, 256, 512};
  c.scalar_hidden = {128, 128, 128};
  c.n_out = 400;
  return c;
}

std::size_t Tensor::numel() const {
  std::size_t n = 1;
  for (auto d : shape) n *= static_cast<std::size_t>(d);
  return n;
}

std::vector<std::pair<std::string, std::vector<std::int64_t>>> expected_tensors(const SurrogateConfig& c) {
  std::vector<std::pair<std::string, std::vector<std::int64_t>>> out;
  for (std::size_t b = 0; b + 1 < c.channels.size(); ++b) {
    const std::int64_t cin = c.channels[b], cout = c.channels[b + 1];
    for (int k = 1; k <= 2; ++k) {
      const std::string p = "branch.field.block" + std::to_string(b) + ".";
      out.push_back({p + "conv" + std::to_string(k) + ".weight", {cout, k == 1 ? cin : cout, 3, 3}});
      out.push_back({p + "conv" + std::to_string(k) + ".bias", {cout}});
      for (const char* s : {"weight", "bias", "running_mean", "running_var"})
        out.push_back({p + "bn" + std::to_string(k) + "." + s, {cout}});
    }
  }
  const std::int64_t flat = std::int64_t{c.channels.back()} * c.bottleneck_h() * c.bottleneck_w();
  out.push_back({"branch.field.linear.weight", {c.n_out, flat}});
  out.push_back({"branch.field.linear.bias", {c.n_out}});
  std::int64_t width = 5;
  for (std::size_t i = 0; i <= c.scalar_hidden.size(); ++i) {
    const std::int64_t next = i < c.scalar_hidden.size() ? c.scalar_hidden[i] : c.n_out;
    out.push_back({"branch.scalar.layer" + std::to_string(i) + ".weight", {next, width}});
    out.push_back({"branch.scalar.layer" + std::to_string(i) + ".bias", {next}});
    width = next;
  }
  out.push_back({"trunk.enc.weight", {c.n_out, c.trunk_input_dim()}});
  out.push_back({"trunk.enc.bias", {c.n_out}});
  for (int l = 0; l < c.trunk_layers; ++l) {
    out.push_back({"trunk.gate" + std::to_string(l) + ".a", {c.n_out}});
    out.push_back({"trunk.gate" + std::to_string(l) + ".b", {c.n_out}});
    if (l + 1 < c.trunk_layers) {
      out.push_back({"trunk.layer" + std::to_string(l + 1) + ".weight", {c.n_out, c.n_out}});
      out.push_back({"trunk.layer" + std::to_string(l + 1) + ".bias", {c.n_out}});
    }
  }
  out.push_back({"trunk.head_p.weight", {c.n_out / 2}});
  out.push_back({"trunk.head_p.bias", {1}});
  out.push_back({"trunk.head_f.weight", {c.n_out / 2}});
  out.push_back({"trunk.head_f.bias", {1}});
  return out;
}

// Inference-ready layout: batch norm folded into the convolutions.
struct WeightBundle {
  struct Conv {
    MatF w;  // cout x (cin * 9)
    VecF b;
  };
  struct Dense {
    MatF w;
    VecF b;
  };
  std::vector<std::array<Conv, 2>> blocks;
  Dense field_linear;
  std::vector<Dense> scalar_layers;
  Dense enc;
  std::vector<VecF> gate_a, gate_b;
  std::vector<Dense> layers;  // layers[l] maps h^(l) to z^(l+1)
  VecF head_p, head_f;
  float head_p_b = 0.0f, head_f_b = 0.0f;
};

namespace {

MatF to_mat(const Tensor& t, Eigen::Index rows, Eigen::Index cols) {
  return Eigen::Map<const MatF>(t.data.data(), rows, cols);
}

VecF to_vec(const Tensor& t) { return Eigen::Map<const VecF>(t.data.data(), static_cast<Eigen::Index>(t.data.size())); }

std::unique_ptr<WeightBundle> prepare(const SurrogateConfig& c, const TensorMap& t) {
  auto w = std::make_unique<WeightBundle>();
  auto get = [&](const std::string& name) -> const Tensor& { return t.at(name); };
  for (std::size_t b = 0; b + 1 < c.channels.size(); ++b) {
    std::array<WeightBundle::Conv, 2> block;
    for (int k = 0; k < 2; ++k) {
      const std::string p = "branch.field.block" + std::to_string(b) + ".";
      const std::string cv = p + "conv" + std::to_string(k + 1), bn = p + "bn" + std::to_string(k + 1);
      const auto& wt = get(cv + ".weight");
      const auto cout = static_cast<Eigen::Index>(wt.shape[0]);
      const auto cols = static_cast<Eigen::Index>(wt.shape[1] * 9);
      MatF kernel = to_mat(wt, cout, cols);
      VecF bias = to_vec(get(cv + ".bias"));
      const auto& gamma = get(bn + ".weight").data;
      const auto& beta = get(bn + ".bias").data;
      const auto& mean = get(bn + ".running_mean").data;
      const auto& var = get(bn + ".running_var").data;
      for (Eigen::Index o = 0; o < cout; ++o) {
        require(var[o] > 0.0f, ErrorCode::Validation, bn + ".running_var must be positive");
        const double scale = gamma[o] / std::sqrt(static_cast<double>(var[o]) + c.bn_eps);
        kernel.row(o) *= static_cast<float>(scale);
        bias[o] = static_cast<float>(beta[o] + scale * (bias[o] - mean[o]));
      }
      block[k] = {std::move(kernel), std::move(bias)};
    }
    w->blocks.push_back(std::move(block));
  }
  auto dense = [&](const std::string& p) {
    const auto& wt = get(p + ".weight");
    return WeightBundle::Dense{to_mat(wt, wt.shape[0], wt.shape[1]), to_vec(get(p + ".bias"))};
  };
  w->field_linear = dense("branch.field.linear");
  for (std::size_t i = 0; i <= c.scalar_hidden.size(); ++i) w->scalar_layers.push_back(dense("branch.scalar.layer" + std::to_string(i)));
  w->enc = dense("trunk.enc");
  for (int l = 0; l < c.trunk_layers; ++l) {
    w->gate_a.push_back(to_vec(get("trunk.gate" + std::to_string(l) + ".a")));
    w->gate_b.push_back(to_vec(get("trunk.gate" + std::to_string(l) + ".b")));
    if (l + 1 < c.trunk_layers) w->layers.push_back(dense("trunk.layer" + std::to_string(l + 1)));
  }
  w->head_p = to_vec(get("trunk.head_p.weight"));
  w->head_f = to_vec(get("trunk.head_f.weight"));
  w->head_p_b = get("trunk.head_p.bias").data[0];
  w->head_f_b = get("trunk.head_f.bias").data[0];
  return w;
}

void check_tensors(const SurrogateConfig& c, const TensorMap& t) {
  const auto expected = expected_tensors(c);
  for (const auto& [name, shape] : expected) {
    const auto it = t.find(name);
    require(it != t.end(), ErrorCode::ShapeMismatch, "surrogate weights lack tensor '" + name + "'");
    require(it->second.shape == shape, ErrorCode::ShapeMismatch,
            "tensor '" + name + "' has shape " + shape_str(it->second.shape) + ", expected " + shape_str(shape));
    require(it->second.data.size() == it->second.numel(), ErrorCode::ShapeMismatch, "tensor '" + name + "' data size mismatch");
    for (float v : it->second.data) require(std::isfinite(v), ErrorCode::Validation, "tensor '" + name + "' is not finite");
  }
  require(t.size() == expected.size(), ErrorCode::ShapeMismatch,
          "surrogate weights have " + std::to_string(t.size()) + " tensors, expected " + std::to_string(expected.size()));
}

// 3x3, stride 1, zero padding 1. in: cin x (h*w) row-major.
MatF conv3x3(const MatF& in, int h, int w, const WeightBundle::Conv& conv) {
  const auto cin = in.rows();
  MatF col = MatF::Zero(cin * 9, static_cast<Eigen::Index>(h) * w);
  for (Eigen::Index c = 0; c < cin; ++c)
    for (int ky = 0; ky < 3; ++ky)
      for (int kx = 0; kx < 3; ++kx) {
        float* dst = col.row(c * 9 + ky * 3 + kx).data();
        const float* src = in.row(c).data();
        for (int y = 0; y < h; ++y) {
          const int sy = y + ky - 1;
          if (sy < 0 || sy >= h) continue;
          const int x0 = std::max(0, 1 - kx), x1 = std::min(w, w + 1 - kx);
          for (int x = x0; x < x1; ++x) dst[y * w + x] = src[sy * w + x + kx - 1];
        }
      }
  MatF out = conv.w * col;
  out.colwise() += conv.b;
  return out.cwiseMax(0.0f);
}

MatF maxpool2(const MatF& in, int h, int w) {
  const int oh = h / 2, ow = w / 2;
  MatF out(in.rows(), static_cast<Eigen::Index>(oh) * ow);
  for (Eigen::Index c = 0; c < in.rows(); ++c) {
    const float* src = in.row(c).data();
    float* dst = out.row(c).data();
    for (int y = 0; y < oh; ++y)
      for (int x = 0; x < ow; ++x) {
        const float* p = src + (2 * y) * w + 2 * x;
        dst[y * ow + x] = std::max(std::max(p[0], p[1]), std::max(p[w], p[w + 1]));
      }
  }
  return out;
}

void gelu_inplace(MatF& m, GeluForm form) {
  auto x = m.array();
  if (form == GeluForm::Exact) {
    x = 0.5f * x * (1.0f + (x * static_cast<float>(std::numbers::sqrt2 / 2.0)).erf());
  } else {
    const float k = static_cast<float>(std::sqrt(2.0 / std::numbers::pi));
    x = 0.5f * x * (1.0f + (k * (x + 0.044715f * x.cube())).tanh());
  }
}

void require_finite(std::span<const double> v, const char* what) {
  for (double x : v) require(std::isfinite(x), ErrorCode::Numerical, std::string("non-finite ") + what);
}

}  // namespace

Surrogate::Surrogate(SurrogateConfig config, TensorMap tensors) : config_(std::move(config)), tensors_(std::move(tensors)) {
  config_.validate();
  check_tensors(config_, tensors_);
  w_ = prepare(config_, tensors_);
}

Surrogate::~Surrogate() = default;
Surrogate::Surrogate(Surrogate&&) noexcept = default;
Surrogate& Surrogate::operator=(Surrogate&&) noexcept = default;

std::vector<double> Surrogate::field_branch(std::span<const double> log_k, std::span<const double> phi) const {
  const auto& c = config_;
  const std::size_t n = static_cast<std::size_t>(c.grid_h) * static_cast<std::size_t>(c.grid_w);
  require(log_k.size() == n && phi.size() == n, ErrorCode::ShapeMismatch,
          "field branch expects " + std::to_string(c.grid_h) + "x" + std::to_string(c.grid_w) + " grids");
  require_finite(log_k, "log K input");
  require_finite(phi, "phi input");
  MatF x(4, static_cast<Eigen::Index>(n));
  for (int j = 0; j < c.grid_h; ++j)
    for (int i = 0; i < c.grid_w; ++i) {
      const auto k = static_cast<std::size_t>(j) * c.grid_w + i;
      const auto col = static_cast<Eigen::Index>(k);
      x(0, col) = static_cast<float>((log_k[k] - c.field_min[0]) / (c.field_max[0] - c.field_min[0]));
      x(1, col) = static_cast<float>((phi[k] - c.field_min[1]) / (c.field_max[1] - c.field_min[1]));
      x(2, col) = static_cast<float>((i + 0.5) / c.grid_w);
      x(3, col) = static_cast<float>((j + 0.5) / c.grid_h);
    }
  int h = c.grid_h, w = c.grid_w;
  for (std::size_t b = 0; b < w_->blocks.size(); ++b) {
    x = conv3x3(x, h, w, w_->blocks[b][0]);
    x = conv3x3(x, h, w, w_->blocks[b][1]);
    if (b + 1 < w_->blocks.size()) {
      x = maxpool2(x, h, w);
      h /= 2;
      w /= 2;
    }
  }
  const Eigen::Map<const VecF> flat(x.data(), x.size());
  const VecF out = w_->field_linear.w * flat + w_->field_linear.b;
  return {out.data(), out.data() + out.size()};
}

std::vector<double> Surrogate::scalar_branch(std::span<const double, 5> scalars) const {
  require_finite(scalars, "scalar input");
  VecF x(5);
  for (int i = 0; i < 5; ++i) x[i] = static_cast<float>((scalars[i] - config_.scalar_mean[i]) / config_.scalar_sd[i]);
  for (std::size_t l = 0; l < w_->scalar_layers.size(); ++l) {
    x = w_->scalar_layers[l].w * x + w_->scalar_layers[l].b;
    if (l + 1 < w_->scalar_layers.size()) x = x.cwiseMax(0.0f);
  }
  return {x.data(), x.data() + x.size()};
}

std::vector<double> Surrogate::branch_forward(std::span<const double> log_k, std::span<const double> phi,
                                              std::span<const double, 5> scalars) const {
  auto g = field_branch(log_k, phi);
  const auto s = scalar_branch(scalars);
  for (std::size_t k = 0; k < g.size(); ++k) g[k] *= s[k];
  return g;
}

std::vector<Surrogate::RawOutput> Surrogate::trunk_forward(std::span<const std::array<double, 3>> queries,
                                                           std::span<const double> gate) const {
  const auto& c = config_;
  require(gate.size() == static_cast<std::size_t>(c.n_out), ErrorCode::ShapeMismatch, "gate vector must have N_out entries");
  require_finite(gate, "gate vector");
  const auto q = static_cast<Eigen::Index>(queries.size());
  const int dim = c.trunk_input_dim();
  MatF zt(dim, q);
  for (Eigen::Index k = 0; k < q; ++k) {
    const auto& p = queries[static_cast<std::size_t>(k)];
    double z[3];
    for (int d = 0; d < 3; ++d) {
      require(std::isfinite(p[d]), ErrorCode::Numerical, "non-finite query coordinate");
      z[d] = p[d] / c.coord_scale[d];
      zt(d, k) = static_cast<float>(z[d]);
    }
    for (int f = 0; f < c.n_freq; ++f) {
      const double omega = 2.0 * std::numbers::pi * std::ldexp(1.0, f);
      for (int d = 0; d < 3; ++d) {
        zt(3 + 6 * f + d, k) = static_cast<float>(std::sin(omega * z[d]));
        zt(3 + 6 * f + 3 + d, k) = static_cast<float>(std::cos(omega * z[d]));
      }
    }
  }
  VecF g(c.n_out);
  for (int i = 0; i < c.n_out; ++i) g[i] = static_cast<float>(gate[static_cast<std::size_t>(i)]);

  MatF z = w_->enc.w * zt;
  z.colwise() += w_->enc.b;
  for (int l = 0; l < c.trunk_layers; ++l) {
    const VecF gl = w_->gate_a[static_cast<std::size_t>(l)].cwiseProduct(g) + w_->gate_b[static_cast<std::size_t>(l)];
    z = gl.asDiagonal() * z;
    gelu_inplace(z, c.gelu);
    if (l + 1 < c.trunk_layers) {
      const auto& layer = w_->layers[static_cast<std::size_t>(l)];
      MatF next = layer.w * z;
      next.colwise() += layer.b;
      z = std::move(next);
    }
  }
  const int half = c.n_out / 2;
  std::vector<RawOutput> out(queries.size());
  for (Eigen::Index k = 0; k < q; ++k) {
    const float p = w_->head_p.dot(z.col(k).head(half)) + w_->head_p_b;
    const float a = w_->head_f.dot(z.col(k).tail(half)) + w_->head_f_b;
    const double f = 1.0 / (1.0 + std::exp(-static_cast<double>(a)));
    require(std::isfinite(p) && std::isfinite(f), ErrorCode::Numerical, "non-finite trunk output");
    out[static_cast<std::size_t>(k)] = {p, f};
  }
  return out;
}

std::vector<Surrogate::Prediction> Surrogate::predict(std::span<const double> log_k, std::span<const double> phi,
                                                      std::span<const double, 5> scalars,
                                                      std::span<const std::array<double, 3>> queries) const {
  const auto g = branch_forward(log_k, phi, scalars);
  const auto raw = trunk_forward(queries, g);
  std::vector<Prediction> out(raw.size());
  for (std::size_t k = 0; k < raw.size(); ++k)
    out[k] = {raw[k].f_out > config_.delta ? config_.p_mean + config_.p_sd * raw[k].p_out : 0.0, raw[k].f_out};
  return out;
}

namespace {

nlohmann::json config_json(const SurrogateConfig& c) {
  return {{"grid", {c.grid_h, c.grid_w}},
          {"channels", c.channels},
          {"scalar_hidden", c.scalar_hidden},
          {"n_out", c.n_out},
          {"trunk_layers", c.trunk_layers},
          {"n_freq", c.n_freq},
          {"delta", c.delta},
          {"gelu", c.gelu == GeluForm::Exact ? "exact" : "tanh"},
          {"bn_eps", c.bn_eps},
          {"coord_scale", c.coord_scale},
          {"field_min", c.field_min},
          {"field_max", c.field_max},
          {"scalar_mean", c.scalar_mean},
          {"scalar_sd", c.scalar_sd},
          {"p_mean", c.p_mean},
          {"p_sd", c.p_sd}};
}

SurrogateConfig config_from_json(const nlohmann::json& j) {
  SurrogateConfig c;
  try {
    const auto grid = j.at("grid").get<std::array<int, 2>>();
    c.grid_h = grid[0];
    c.grid_w = grid[1];
    c.channels = j.at("channels").get<std::vector<int>>();
    c.scalar_hidden = j.at("scalar_hidden").get<std::vector<int>>();
    c.n_out = j.at("n_out").get<int>();
    c.trunk_layers = j.at("trunk_layers").get<int>();
    c.n_freq = j.at("n_freq").get<int>();
    c.delta = j.at("delta").get<double>();
    const auto gelu = j.at("gelu").get<std::string>();
    if (gelu == "exact")
      c.gelu = GeluForm::Exact;
    else if (gelu == "tanh")
      c.gelu = GeluForm::Tanh;
    else
      fail(ErrorCode::Format, "unknown GELU form '" + gelu + "'");
    c.bn_eps = j.at("bn_eps").get<double>();
    c.coord_scale = j.at("coord_scale").get<std::array<double, 3>>();
    c.field_min = j.at("field_min").get<std::array<double, 2>>();
    c.field_max = j.at("field_max").get<std::array<double, 2>>();
    c.scalar_mean = j.at("scalar_mean").get<std::array<double, 5>>();
    c.scalar_sd = j.at("scalar_sd").get<std::array<double, 5>>();
    c.p_mean = j.at("p_mean").get<double>();
    c.p_sd = j.at("p_sd").get<double>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::Format, std::string("DONW1 config: ") + e.what());
  }
  return c;
}

}  // namespace

std::vector<unsigned char> encode_surrogate(const SurrogateConfig& config, const TensorMap& tensors) {
  config.validate();
  check_tensors(config, tensors);
  detail::ByteWriter w;
  w.put_bytes(kMagic);
  const std::string js = config_json(config).dump();
  w.put(static_cast<std::uint32_t>(js.size()));
  w.put_bytes(js);
  for (const auto& [name, shape] : expected_tensors(config)) {
    const auto& t = tensors.at(name);
    w.put(static_cast<std::uint16_t>(name.size()));
    w.put_bytes(name);
    w.put(kDtypeF32);
    w.put(static_cast<std::uint8_t>(shape.size()));
    for (auto d : shape) w.put(static_cast<std::uint64_t>(d));
    w.put_array(t.data.data(), t.data.size());
  }
  w.put(detail::checksum64(w.bytes().data(), w.bytes().size()));
  return std::move(w.bytes());
}

Surrogate decode_surrogate(std::span<const unsigned char> bytes, const std::string& ctx) {
  require(bytes.size() >= kMagic.size() + 8 && std::equal(kMagic.begin(), kMagic.end(), bytes.begin()), ErrorCode::Format,
          ctx + ": not a DONW1 file");
  const std::size_t body = bytes.size() - 8;
  std::uint64_t stored;
  std::memcpy(&stored, bytes.data() + body, 8);
  require(stored == detail::checksum64(bytes.data(), body), ErrorCode::Checksum, ctx + ": checksum mismatch");
  detail::ByteReader r(bytes.data(), body, ctx);
  r.get_string(kMagic.size());
  const auto len = r.get<std::uint32_t>();
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(r.get_string(len));
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorCode::Format, ctx + ": bad config JSON: " + e.what());
  }
  SurrogateConfig config = config_from_json(j);
  config.validate();
  TensorMap tensors;
  while (r.remaining() > 0) {
    const auto nlen = r.get<std::uint16_t>();
    std::string name = r.get_string(nlen);
    require(r.get<std::uint8_t>() == kDtypeF32, ErrorCode::Format, ctx + ": tensor '" + name + "' is not f32");
    const auto ndim = r.get<std::uint8_t>();
    Tensor t;
    for (int d = 0; d < ndim; ++d) t.shape.push_back(static_cast<std::int64_t>(r.get<std::uint64_t>()));
    const std::size_t n = t.numel();
    require(n <= r.remaining() / sizeof(float), ErrorCode::Format, ctx + ": tensor '" + name + "' runs past the end");
    t.data.resize(n);
    r.get_array(t.data.data(), n);
    require(tensors.emplace(std::move(name), std::move(t)).second, ErrorCode::Format, ctx + ": duplicate tensor");
  }
  return Surrogate(std::move(config), std::move(tensors));
}

Surrogate load_surrogate(const std::filesystem::path& path) {
  const auto bytes = detail::read_all_bytes(path);
  return decode_surrogate(bytes, path.string());
}

void save_surrogate(const std::filesystem::path& path, const SurrogateConfig& config, const TensorMap& tensors) {
  detail::write_bytes(path, encode_surrogate(config, tensors));
}

TensorMap random_tensors(const SurrogateConfig& config, std::uint64_t seed) {
  config.validate();
  TensorMap out;
  for (const auto& [name, shape] : expected_tensors(config)) {
    Tensor t;
    t.shape = shape;
    t.data.resize(t.numel());
    auto rs = RandomStream::named(seed, name);
    if (name.ends_with(".running_var") || (name.find(".bn") != std::string::npos && name.ends_with(".weight"))) {
      for (auto& v : t.data) v = 1.0f;
    } else if (name.ends_with(".running_mean") || name.ends_with(".bias") || name.ends_with(".b")) {
      for (auto& v : t.data) v = static_cast<float>(0.01 * rs.normal());
    } else if (name.ends_with(".a")) {
      for (auto& v : t.data) v = static_cast<float>(1.0 + 0.1 * rs.normal());
    } else {
      const std::size_t fan_in = shape.size() == 1 ? shape[0] : t.numel() / static_cast<std::size_t>(shape[0]);
      const double sd = std::sqrt(2.0 / static_cast<double>(fan_in));
      for (auto& v : t.data) v = static_cast<float>(sd * rs.normal());
    }
    out.emplace(name, std::move(t));
  }
  return out;
}

std::array<double, 5> branch_scalars(const ParameterVector& u) {
  return {u.scalar(ScalarId::Mu), u.scalar(ScalarId::PInlet), u.scalar(ScalarId::Lambda), u.scalar(ScalarId::Beta),
          u.scalar(ScalarId::Chi)};
}

SurrogateForwardMap::SurrogateForwardMap(std::shared_ptr<const Surrogate> model, const PriorSpec& prior,
                                         std::vector<Vec2> sensors, std::vector<double> times)
    : model_(std::move(model)), prior_(prior), sensors_(std::move(sensors)), times_(std::move(times)) {
  require(model_ != nullptr, ErrorCode::InvalidArgument, "surrogate forward map needs a model");
  require(!sensors_.empty() && !times_.empty(), ErrorCode::InvalidArgument, "surrogate forward map needs sensors and times");
  grid_ = RegularGrid{model_->config().grid_w, model_->config().grid_h, prior_.discretisation.grid.domain};
  for (double t : times_)
    for (const auto& s : sensors_) queries_.push_back({s.x, s.y, t});
}

std::vector<double> SurrogateForwardMap::evaluate(const ParameterVector& u) const {
  const auto fields = realise_fields(u, prior_, grid_);
  const auto scalars = branch_scalars(u);
  const auto pred = model_->predict(fields.log_k, fields.phi, scalars, queries_);
  std::vector<double> out(pred.size());
  for (std::size_t k = 0; k < pred.size(); ++k) out[k] = pred[k].p;
  return out;
}

}  // namespace frontflow
