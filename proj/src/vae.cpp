#include "polyvae/vae.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "polyvae/errors.hpp"

namespace polyvae {

namespace {

// Keeps decode() strictly inside (0, 1) even when the logit saturates.
constexpr double kProbFloor = 1e-15;

void check_size(std::size_t got, std::size_t want, const char* what) {
  if (got != want) {
    throw DimensionMismatch(std::string(what) + " has length " + std::to_string(got) + ", expected " +
                            std::to_string(want));
  }
}

double sigmoid(double a) {
  if (a >= 0) {
    return 1.0 / (1.0 + std::exp(-a));
  }
  const double e = std::exp(a);
  return e / (1.0 + e);
}

// out[c] += scale * m[r, c] for a row-major rows x cols matrix row r.
void axpy_row(std::span<const double> m, std::size_t cols, std::size_t r, double scale, std::span<double> out) {
  const double* row = m.data() + r * cols;
  for (std::size_t c = 0; c < cols; ++c) {
    out[c] += scale * row[c];
  }
}

double dot_row(std::span<const double> m, std::size_t cols, std::size_t r, std::span<const double> v) {
  const double* row = m.data() + r * cols;
  double s = 0;
  for (std::size_t c = 0; c < cols; ++c) {
    s += row[c] * v[c];
  }
  return s;
}

template <typename T>
std::vector<double> hidden_layer(const ModelParameters& params, std::span<const T> x) {
  const auto& d = params.dims();
  check_size(x.size(), d.input, "input window");
  std::vector<double> h(params.b1().begin(), params.b1().end());
  for (std::size_t i = 0; i < d.input; ++i) {
    if (x[i] != T{0}) {
      axpy_row(params.w1(), d.hidden, i, static_cast<double>(x[i]), h);
    }
  }
  for (auto& v : h) {
    v = std::tanh(v);
  }
  return h;
}

LatentCode latent_heads(const ModelParameters& params, std::span<const double> h) {
  const auto& d = params.dims();
  LatentCode code{std::vector<double>(params.b_mu().begin(), params.b_mu().end()),
                  std::vector<double>(params.b_logvar().begin(), params.b_logvar().end())};
  for (std::size_t j = 0; j < d.hidden; ++j) {
    if (h[j] != 0.0) {
      axpy_row(params.w_mu(), d.latent, j, h[j], code.mu);
      axpy_row(params.w_logvar(), d.latent, j, h[j], code.logvar);
    }
  }
  return code;
}

struct DecoderState {
  std::vector<double> g;
  std::vector<double> probs;
};

DecoderState decoder_forward(const ModelParameters& params, std::span<const double> z) {
  const auto& d = params.dims();
  check_size(z.size(), d.latent, "latent vector");
  DecoderState s;
  s.g.assign(params.c1().begin(), params.c1().end());
  for (std::size_t k = 0; k < d.latent; ++k) {
    axpy_row(params.v1(), d.hidden, k, z[k], s.g);
  }
  for (auto& v : s.g) {
    v = std::tanh(v);
  }
  std::vector<double> logits(params.c_out().begin(), params.c_out().end());
  for (std::size_t j = 0; j < d.hidden; ++j) {
    if (s.g[j] != 0.0) {
      axpy_row(params.v_out(), d.input, j, s.g[j], logits);
    }
  }
  s.probs.resize(d.input);
  for (std::size_t i = 0; i < d.input; ++i) {
    s.probs[i] = std::clamp(sigmoid(logits[i]), kProbFloor, 1.0 - kProbFloor);
  }
  return s;
}

template <typename T>
double bce_impl(std::span<const double> probs, std::span<const T> y) {
  check_size(y.size(), probs.size(), "target");
  double total = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double p = std::clamp(probs[i], kBceEpsilon, 1.0 - kBceEpsilon);
    const double t = static_cast<double>(y[i]);
    total -= t * std::log(p) + (1.0 - t) * std::log1p(-p);
  }
  return total;
}

template <typename T>
std::pair<LossBreakdown, ForwardCache> elbo_impl(const ModelParameters& params, std::span<const T> x,
                                                 std::span<const T> y, double beta, std::span<const double> noise) {
  const auto& d = params.dims();
  check_size(y.size(), d.input, "target window");
  check_size(noise.size(), d.latent, "noise");
  if (!(beta >= 0)) {
    throw DataError("beta must be non-negative");
  }
  ForwardCache cache;
  cache.dims = d;
  cache.h = hidden_layer(params, x);
  cache.x.assign(x.begin(), x.end());
  cache.code = latent_heads(params, cache.h);
  cache.noise.assign(noise.begin(), noise.end());
  cache.z = reparameterize(cache.code, noise);
  auto dec = decoder_forward(params, cache.z);
  cache.g = std::move(dec.g);
  cache.probs = std::move(dec.probs);

  LossBreakdown loss;
  loss.beta = beta;
  loss.recon_bce = bce_impl(std::span<const double>(cache.probs), y);
  loss.kl = kl_divergence(cache.code);
  loss.total = loss.recon_bce + beta * loss.kl;
  return {loss, std::move(cache)};
}

template <typename T>
void gradients_impl(const ModelParameters& params, std::span<const T> y, double beta, const ForwardCache& cache,
                    Gradients& grads, double scale) {
  const auto& d = params.dims();
  if (!(cache.dims == d) || !(grads.dims() == d) || cache.x.size() != d.input || cache.probs.size() != d.input ||
      cache.z.size() != d.latent || cache.h.size() != d.hidden) {
    throw StaleCache("forward cache does not match the parameter shapes");
  }
  check_size(y.size(), d.input, "target window");

  // Output logits: d(BCE)/da = p - y.
  std::vector<double> d_logit(d.input);
  for (std::size_t i = 0; i < d.input; ++i) {
    d_logit[i] = scale * (cache.probs[i] - static_cast<double>(y[i]));
  }
  auto g_vout = grads.tensor(TensorId::kVOut);
  auto g_cout = grads.tensor(TensorId::kCOut);
  for (std::size_t i = 0; i < d.input; ++i) {
    g_cout[i] += d_logit[i];
  }
  std::vector<double> d_g_pre(d.hidden);
  for (std::size_t j = 0; j < d.hidden; ++j) {
    if (cache.g[j] != 0.0) {
      double* row = g_vout.data() + j * d.input;
      for (std::size_t i = 0; i < d.input; ++i) {
        row[i] += cache.g[j] * d_logit[i];
      }
    }
    d_g_pre[j] = dot_row(params.v_out(), d.input, j, d_logit) * (1.0 - cache.g[j] * cache.g[j]);
  }

  auto g_v1 = grads.tensor(TensorId::kV1);
  auto g_c1 = grads.tensor(TensorId::kC1);
  std::vector<double> d_z(d.latent);
  for (std::size_t j = 0; j < d.hidden; ++j) {
    g_c1[j] += d_g_pre[j];
  }
  for (std::size_t k = 0; k < d.latent; ++k) {
    double* row = g_v1.data() + k * d.hidden;
    for (std::size_t j = 0; j < d.hidden; ++j) {
      row[j] += cache.z[k] * d_g_pre[j];
    }
    d_z[k] = dot_row(params.v1(), d.hidden, k, d_g_pre);
  }

  // Reparameterization plus the analytic KL terms.
  std::vector<double> d_mu(d.latent);
  std::vector<double> d_logvar(d.latent);
  for (std::size_t k = 0; k < d.latent; ++k) {
    const double mu = cache.code.mu[k];
    const double lv = cache.code.logvar[k];
    const double sigma = std::exp(0.5 * lv);
    d_mu[k] = d_z[k] + scale * beta * mu;
    d_logvar[k] = d_z[k] * cache.noise[k] * 0.5 * sigma + scale * beta * 0.5 * std::expm1(lv);
  }

  auto g_wmu = grads.tensor(TensorId::kWMu);
  auto g_bmu = grads.tensor(TensorId::kBMu);
  auto g_wlv = grads.tensor(TensorId::kWLogvar);
  auto g_blv = grads.tensor(TensorId::kBLogvar);
  for (std::size_t k = 0; k < d.latent; ++k) {
    g_bmu[k] += d_mu[k];
    g_blv[k] += d_logvar[k];
  }
  std::vector<double> d_h_pre(d.hidden);
  for (std::size_t j = 0; j < d.hidden; ++j) {
    const double h = cache.h[j];
    double* row_mu = g_wmu.data() + j * d.latent;
    double* row_lv = g_wlv.data() + j * d.latent;
    for (std::size_t k = 0; k < d.latent; ++k) {
      row_mu[k] += h * d_mu[k];
      row_lv[k] += h * d_logvar[k];
    }
    const double d_h = dot_row(params.w_mu(), d.latent, j, d_mu) + dot_row(params.w_logvar(), d.latent, j, d_logvar);
    d_h_pre[j] = d_h * (1.0 - h * h);
  }

  auto g_w1 = grads.tensor(TensorId::kW1);
  auto g_b1 = grads.tensor(TensorId::kB1);
  for (std::size_t j = 0; j < d.hidden; ++j) {
    g_b1[j] += d_h_pre[j];
  }
  for (std::size_t i = 0; i < d.input; ++i) {
    const double xi = cache.x[i];
    if (xi != 0.0) {
      double* row = g_w1.data() + i * d.hidden;
      for (std::size_t j = 0; j < d.hidden; ++j) {
        row[j] += xi * d_h_pre[j];
      }
    }
  }
}

}  // namespace

void ModelDims::validate() const {
  if (input < 1 || hidden < 1 || latent < 1) {
    throw DataError("model dimensions must all be >= 1");
  }
}

std::size_t ModelDims::param_count() const {
  std::size_t n = 0;
  for (const auto& t : tensor_layout(*this)) {
    n += t.size();
  }
  return n;
}

std::array<TensorInfo, kTensorCount> tensor_layout(const ModelDims& d) {
  std::array<TensorInfo, kTensorCount> layout = {{
      {TensorId::kW1, "W1", d.input, d.hidden, 0, false},
      {TensorId::kB1, "b1", d.hidden, 1, 0, true},
      {TensorId::kWMu, "W_mu", d.hidden, d.latent, 0, false},
      {TensorId::kBMu, "b_mu", d.latent, 1, 0, true},
      {TensorId::kWLogvar, "W_logvar", d.hidden, d.latent, 0, false},
      {TensorId::kBLogvar, "b_logvar", d.latent, 1, 0, true},
      {TensorId::kV1, "V1", d.latent, d.hidden, 0, false},
      {TensorId::kC1, "c1", d.hidden, 1, 0, true},
      {TensorId::kVOut, "V_out", d.hidden, d.input, 0, false},
      {TensorId::kCOut, "c_out", d.input, 1, 0, true},
  }};
  std::size_t offset = 0;
  for (auto& t : layout) {
    t.offset = offset;
    offset += t.size();
  }
  return layout;
}

ModelParameters::ModelParameters(const ModelDims& dims) : dims_(dims), layout_(tensor_layout(dims)) {
  dims.validate();
  data_.assign(dims.param_count(), 0.0);
}

std::span<double> ModelParameters::tensor(TensorId id) {
  const auto& t = layout_[static_cast<std::size_t>(id)];
  return std::span<double>(data_).subspan(t.offset, t.size());
}

std::span<const double> ModelParameters::tensor(TensorId id) const {
  const auto& t = layout_[static_cast<std::size_t>(id)];
  return std::span<const double>(data_).subspan(t.offset, t.size());
}

bool ModelParameters::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void ModelParameters::set_zero() { std::fill(data_.begin(), data_.end(), 0.0); }

std::vector<double> LatentCode::sigma() const {
  std::vector<double> s(logvar.size());
  for (std::size_t k = 0; k < s.size(); ++k) {
    s[k] = std::exp(0.5 * logvar[k]);
  }
  return s;
}

ModelParameters init_params(const ModelDims& dims, std::uint64_t seed) {
  ModelParameters params(dims);
  std::mt19937_64 rng(seed);
  for (const auto& t : tensor_layout(dims)) {
    if (t.bias) {
      continue;
    }
    const double limit = std::sqrt(6.0 / static_cast<double>(t.rows + t.cols));
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (auto& w : params.tensor(t.id)) {
      w = dist(rng);
    }
  }
  return params;
}

LatentCode encode(const ModelParameters& params, std::span<const double> x) {
  return latent_heads(params, hidden_layer(params, x));
}

LatentCode encode(const ModelParameters& params, std::span<const std::uint8_t> x) {
  return latent_heads(params, hidden_layer(params, x));
}

std::vector<double> reparameterize(const LatentCode& code, std::span<const double> noise) {
  check_size(code.logvar.size(), code.mu.size(), "logvar");
  check_size(noise.size(), code.mu.size(), "noise");
  std::vector<double> z(code.mu.size());
  for (std::size_t k = 0; k < z.size(); ++k) {
    z[k] = code.mu[k] + std::exp(0.5 * code.logvar[k]) * noise[k];
  }
  return z;
}

std::vector<double> decode(const ModelParameters& params, std::span<const double> z) {
  return decoder_forward(params, z).probs;
}

double kl_divergence(const LatentCode& code) {
  double kl = 0;
  for (std::size_t k = 0; k < code.mu.size(); ++k) {
    const double lv = code.logvar[k];
    // expm1(lv) - lv >= 0 without the cancellation of exp(lv) - lv - 1.
    kl += code.mu[k] * code.mu[k] + std::max(0.0, std::expm1(lv) - lv);
  }
  return 0.5 * kl;
}

double bce(std::span<const double> probs, std::span<const double> y) { return bce_impl(probs, y); }

double bce(std::span<const double> probs, std::span<const std::uint8_t> y) { return bce_impl(probs, y); }

std::pair<LossBreakdown, ForwardCache> elbo_loss(const ModelParameters& params, std::span<const double> x,
                                                 std::span<const double> y, double beta,
                                                 std::span<const double> noise) {
  return elbo_impl(params, x, y, beta, noise);
}

std::pair<LossBreakdown, ForwardCache> elbo_loss(const ModelParameters& params, std::span<const std::uint8_t> x,
                                                 std::span<const std::uint8_t> y, double beta,
                                                 std::span<const double> noise) {
  return elbo_impl(params, x, y, beta, noise);
}

void accumulate_gradients(const ModelParameters& params, std::span<const double> y, double beta,
                          const ForwardCache& cache, Gradients& grads, double scale) {
  gradients_impl(params, y, beta, cache, grads, scale);
}

void accumulate_gradients(const ModelParameters& params, std::span<const std::uint8_t> y, double beta,
                          const ForwardCache& cache, Gradients& grads, double scale) {
  gradients_impl(params, y, beta, cache, grads, scale);
}

Gradients backward(const ModelParameters& params, std::span<const double> y, double beta,
                   const ForwardCache& cache) {
  Gradients grads(params.dims());
  gradients_impl(params, y, beta, cache, grads, 1.0);
  return grads;
}

}  // namespace polyvae
