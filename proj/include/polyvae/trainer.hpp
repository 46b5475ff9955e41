#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "polyvae/model.hpp"
#include "polyvae/pianoroll.hpp"
#include "polyvae/vae.hpp"
#include "polyvae/windows.hpp"

namespace polyvae {

struct Song {
  std::string id;
  PianoRoll roll;
};

struct TrainingConfig {
  WindowSpec window = WindowSpec::for_seconds(9);
  ModelDims dims{};
  double beta = 0.5;
  double learning_rate = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t batch_size = 64;
  std::size_t max_steps = 2000;
  std::uint64_t seed = 0;
  double test_fraction = 0.2;
  /// Stop after this many test evaluations without improvement; 0 disables.
  std::size_t early_stop_patience = 0;
  /// Worker threads for per-example gradients. Ignored (1) when deterministic.
  std::size_t threads = 1;
  bool deterministic = true;

  void validate() const;
};

struct SplitDataset {
  std::vector<WindowPair> train_pairs;
  std::vector<WindowPair> test_pairs;
  std::vector<std::string> train_songs;
  std::vector<std::string> test_songs;
  /// Songs too short to yield a single window pair.
  std::vector<std::string> skipped_songs;
};

/// Holds out whole compositions: songs are shuffled with `seed` and the
/// shortest tail whose column count reaches test_fraction of the total becomes
/// the test side. Each side keeps at least one song. Throws TooFewSongs when
/// fewer than two songs are long enough to window.
SplitDataset split_by_song(const std::vector<Song>& songs, const WindowSpec& window, double test_fraction,
                           std::uint64_t seed);

/// Splits by the given song ids instead of shuffling.
SplitDataset split_by_ids(const std::vector<Song>& songs, const WindowSpec& window,
                          const std::vector<std::string>& test_ids);

struct StepRecord {
  std::size_t step = 0;
  double total = 0;
  double recon_bce = 0;
  double kl = 0;
};

struct EvalRecord {
  std::size_t step = 0;
  double test_loss = 0;
};

struct TrainingHistory {
  std::vector<StepRecord> steps;
  std::vector<EvalRecord> test_evals;
  bool stopped_early = false;
};

void write_history_csv(std::ostream& out, const TrainingHistory& history);

class Adam {
 public:
  Adam(std::size_t n_params, double learning_rate, double beta1, double beta2, double eps);
  void step(std::span<double> params, std::span<const double> grads);
  std::size_t steps_taken() const { return t_; }

 private:
  double lr_;
  double beta1_;
  double beta2_;
  double eps_;
  std::size_t t_ = 0;
  std::vector<double> m_;
  std::vector<double> v_;
};

struct TrainResult {
  ModelParameters params;
  TrainingHistory history;
};

using ProgressFn = std::function<void(const StepRecord&)>;

/// Minibatch Adam on the mean negative ELBO of (input, target) pairs. Noise
/// and batch order come from one RNG stream seeded by config.seed. Throws
/// NonFiniteLoss if a batch loss is NaN or infinite.
TrainResult train(const TrainingConfig& config, const SplitDataset& dataset, const ProgressFn& progress = {});

/// Mean loss over pairs with zero noise (z = mu).
double mean_eval_loss(const ModelParameters& params, const std::vector<WindowPair>& pairs, double beta);

}  // namespace polyvae
