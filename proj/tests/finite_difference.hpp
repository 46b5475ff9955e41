#pragma once

// Central finite differences of the negative ELBO, independent of backward().

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "polyvae/vae.hpp"

namespace oracle {

inline std::vector<double> elbo_gradient_fd(polyvae::ModelParameters params, std::span<const double> x,
                                            std::span<const double> y, double beta, std::span<const double> noise,
                                            double step = 1e-4) {
  std::vector<double> grad(params.flat().size());
  auto flat = params.flat();
  for (std::size_t i = 0; i < flat.size(); ++i) {
    const double saved = flat[i];
    flat[i] = saved + step;
    const double up = polyvae::elbo_loss(params, x, y, beta, noise).first.total;
    flat[i] = saved - step;
    const double down = polyvae::elbo_loss(params, x, y, beta, noise).first.total;
    flat[i] = saved;
    grad[i] = (up - down) / (2 * step);
  }
  return grad;
}

struct Instance {
  polyvae::ModelParameters params;
  std::vector<double> x;
  std::vector<double> y;
  std::vector<double> noise;
  double beta;
};

/// Random model with non-zero biases plus random binary x, y and Gaussian noise.
inline Instance random_instance(const polyvae::ModelDims& dims, std::uint64_t seed, double beta = 0.5) {
  Instance inst{polyvae::init_params(dims, seed), {}, {}, {}, beta};
  std::mt19937_64 rng(seed ^ 0x9E3779B97F4A7C15ULL);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (const auto& t : polyvae::tensor_layout(dims)) {
    if (t.bias) {
      for (auto& b : inst.params.tensor(t.id)) b = 0.3 * normal(rng);
    }
  }
  std::bernoulli_distribution bit(0.5);
  for (std::size_t i = 0; i < dims.input; ++i) {
    inst.x.push_back(bit(rng) ? 1.0 : 0.0);
    inst.y.push_back(bit(rng) ? 1.0 : 0.0);
  }
  for (std::size_t k = 0; k < dims.latent; ++k) inst.noise.push_back(normal(rng));
  return inst;
}

inline double relative_error(double a, double b, double floor = 1e-6) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

}  // namespace oracle
