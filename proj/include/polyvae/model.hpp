#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "polyvae/pianoroll.hpp"
#include "polyvae/vae.hpp"
#include "polyvae/windows.hpp"

namespace polyvae {

/// Trained parameters together with the window geometry they were trained on.
struct Model {
  PitchBand band;
  WindowSpec window;
  ModelParameters params;

  std::size_t input_dim() const { return static_cast<std::size_t>(band.size()) * window.width_cols(); }
  std::size_t latent_dim() const { return params.dims().latent; }

  /// Throws DimensionMismatch if the parameter input width disagrees with
  /// band x window.
  void validate() const;
};

ModelDims dims_for(PitchBand band, const WindowSpec& window, std::size_t hidden, std::size_t latent);

/// Decoder output for z = mu(window), the deterministic inference path.
std::vector<double> predict(const Model& model, std::span<const std::uint8_t> window);

}  // namespace polyvae
