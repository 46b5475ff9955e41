#include "polyvae/model.hpp"

#include <string>

#include "polyvae/errors.hpp"

namespace polyvae {

void Model::validate() const {
  window.validate();
  if (params.dims().input != input_dim()) {
    throw DimensionMismatch("model input width " + std::to_string(params.dims().input) + " != " +
                            std::to_string(band.size()) + " pitches x " + std::to_string(window.width_cols()) +
                            " columns");
  }
}

ModelDims dims_for(PitchBand band, const WindowSpec& window, std::size_t hidden, std::size_t latent) {
  return {static_cast<std::size_t>(band.size()) * window.width_cols(), hidden, latent};
}

std::vector<double> predict(const Model& model, std::span<const std::uint8_t> window) {
  return decode(model.params, encode(model.params, window).mu);
}

}  // namespace polyvae
