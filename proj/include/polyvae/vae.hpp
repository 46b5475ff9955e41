#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

namespace polyvae {

/// Layer widths: input D, hidden H, latent Z. Encoder and decoder are
/// symmetric one-hidden-layer MLPs.
struct ModelDims {
  std::size_t input = 1;
  std::size_t hidden = 1;
  std::size_t latent = 1;

  void validate() const;
  std::size_t param_count() const;
  friend bool operator==(const ModelDims&, const ModelDims&) = default;
};

enum class TensorId { kW1, kB1, kWMu, kBMu, kWLogvar, kBLogvar, kV1, kC1, kVOut, kCOut };

inline constexpr std::size_t kTensorCount = 10;

struct TensorInfo {
  TensorId id;
  std::string_view name;
  std::size_t rows;
  std::size_t cols;  // 1 for bias vectors
  std::size_t offset;
  bool bias;

  std::size_t size() const { return rows * cols; }
};

/// Storage order of the tensors inside the flat parameter vector (and on
/// disk): W1, b1, W_mu, b_mu, W_logvar, b_logvar, V1, c1, V_out, c_out. Each
/// matrix is row-major with rows = fan-in.
std::array<TensorInfo, kTensorCount> tensor_layout(const ModelDims& dims);

/// Encoder weights (W1, b1, W_mu, b_mu, W_logvar, b_logvar) and decoder weights
/// (V1, c1, V_out, c_out) in one contiguous buffer. Also used for gradients.
class ModelParameters {
 public:
  ModelParameters() = default;
  /// All zeros.
  explicit ModelParameters(const ModelDims& dims);

  const ModelDims& dims() const { return dims_; }
  std::span<double> flat() { return data_; }
  std::span<const double> flat() const { return data_; }

  std::span<double> tensor(TensorId id);
  std::span<const double> tensor(TensorId id) const;

  std::span<const double> w1() const { return tensor(TensorId::kW1); }
  std::span<const double> b1() const { return tensor(TensorId::kB1); }
  std::span<const double> w_mu() const { return tensor(TensorId::kWMu); }
  std::span<const double> b_mu() const { return tensor(TensorId::kBMu); }
  std::span<const double> w_logvar() const { return tensor(TensorId::kWLogvar); }
  std::span<const double> b_logvar() const { return tensor(TensorId::kBLogvar); }
  std::span<const double> v1() const { return tensor(TensorId::kV1); }
  std::span<const double> c1() const { return tensor(TensorId::kC1); }
  std::span<const double> v_out() const { return tensor(TensorId::kVOut); }
  std::span<const double> c_out() const { return tensor(TensorId::kCOut); }

  bool all_finite() const;
  void set_zero();

  friend bool operator==(const ModelParameters& a, const ModelParameters& b) {
    return a.dims_ == b.dims_ && a.data_ == b.data_;
  }

 private:
  ModelDims dims_{};
  std::array<TensorInfo, kTensorCount> layout_{};
  std::vector<double> data_;
};

using Gradients = ModelParameters;

/// Gaussian posterior q(z|x): mean and log-variance per latent dimension.
struct LatentCode {
  std::vector<double> mu;
  std::vector<double> logvar;

  std::vector<double> sigma() const;
};

struct LossBreakdown {
  double total = 0;
  double recon_bce = 0;
  double kl = 0;
  double beta = 0;
};

/// Intermediate activations of one elbo_loss evaluation, consumed by backward().
struct ForwardCache {
  ModelDims dims{};
  std::vector<double> x;
  std::vector<double> h;
  LatentCode code;
  std::vector<double> noise;
  std::vector<double> z;
  std::vector<double> g;
  std::vector<double> probs;
};

inline constexpr double kBceEpsilon = 1e-7;

/// Glorot-uniform weights, zero biases. Deterministic in `seed`.
ModelParameters init_params(const ModelDims& dims, std::uint64_t seed);

LatentCode encode(const ModelParameters& params, std::span<const double> x);
LatentCode encode(const ModelParameters& params, std::span<const std::uint8_t> x);

/// z = mu + exp(logvar / 2) * noise.
std::vector<double> reparameterize(const LatentCode& code, std::span<const double> noise);

/// Bernoulli means, each strictly inside (0, 1).
std::vector<double> decode(const ModelParameters& params, std::span<const double> z);

/// KL(q(z|x) || N(0, I)).
double kl_divergence(const LatentCode& code);

/// Summed binary cross-entropy with probabilities clamped to [eps, 1 - eps].
double bce(std::span<const double> probs, std::span<const double> y);
double bce(std::span<const double> probs, std::span<const std::uint8_t> y);

/// Negative ELBO with one Monte-Carlo sample: BCE(decode(z), y) + beta * KL.
/// `y` is the target window, which need not equal the input `x`.
std::pair<LossBreakdown, ForwardCache> elbo_loss(const ModelParameters& params, std::span<const double> x,
                                                 std::span<const double> y, double beta,
                                                 std::span<const double> noise);
std::pair<LossBreakdown, ForwardCache> elbo_loss(const ModelParameters& params, std::span<const std::uint8_t> x,
                                                 std::span<const std::uint8_t> y, double beta,
                                                 std::span<const double> noise);

/// Adds scale * d(total)/d(params) for the evaluation recorded in `cache` to
/// `grads`. Throws StaleCache if the cache or gradient shapes do not match.
void accumulate_gradients(const ModelParameters& params, std::span<const double> y, double beta,
                          const ForwardCache& cache, Gradients& grads, double scale = 1.0);
void accumulate_gradients(const ModelParameters& params, std::span<const std::uint8_t> y, double beta,
                          const ForwardCache& cache, Gradients& grads, double scale = 1.0);

Gradients backward(const ModelParameters& params, std::span<const double> y, double beta,
                   const ForwardCache& cache);

}  // namespace polyvae
