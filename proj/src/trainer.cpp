#include "polyvae/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>
#include <random>
#include <set>
#include <thread>

#include "polyvae/errors.hpp"

namespace polyvae {

namespace {

constexpr std::uint64_t kStreamSalt = 0xD1B54A32D192ED03ULL;

struct BatchLoss {
  double total = 0;
  double recon = 0;
  double kl = 0;
};

BatchLoss accumulate_range(const ModelParameters& params, const std::vector<WindowPair>& pairs,
                           std::span<const std::size_t> batch, std::span<const double> noise, std::size_t first,
                           std::size_t last, double beta, double scale, Gradients& grads) {
  const std::size_t z = params.dims().latent;
  BatchLoss sum;
  for (std::size_t b = first; b < last; ++b) {
    const WindowPair& pair = pairs[batch[b]];
    const auto [loss, cache] = elbo_loss(params, pair.input, pair.target, beta, noise.subspan(b * z, z));
    accumulate_gradients(params, std::span<const std::uint8_t>(pair.target), beta, cache, grads, scale);
    sum.total += loss.total;
    sum.recon += loss.recon_bce;
    sum.kl += loss.kl;
  }
  return sum;
}

std::vector<WindowPair> windows_for(const std::vector<const Song*>& songs, const WindowSpec& window) {
  std::vector<WindowPair> pairs;
  for (const Song* s : songs) {
    auto w = make_windows(s->roll, window, s->id);
    pairs.insert(pairs.end(), std::make_move_iterator(w.begin()), std::make_move_iterator(w.end()));
  }
  return pairs;
}

}  // namespace

void TrainingConfig::validate() const {
  window.validate();
  dims.validate();
  if (!(test_fraction > 0 && test_fraction < 1)) {
    throw DataError("test_fraction must lie in (0, 1)");
  }
  if (!(learning_rate > 0)) {
    throw DataError("learning_rate must be positive");
  }
  if (batch_size < 1) {
    throw DataError("batch_size must be >= 1");
  }
  if (!(beta >= 0)) {
    throw DataError("beta must be non-negative");
  }
}

SplitDataset split_by_song(const std::vector<Song>& songs, const WindowSpec& window, double test_fraction,
                           std::uint64_t seed) {
  if (!(test_fraction > 0 && test_fraction < 1)) {
    throw DataError("test_fraction must lie in (0, 1)");
  }
  SplitDataset out;
  std::vector<const Song*> usable;
  for (const auto& s : songs) {
    if (s.roll.n_cols() >= window.width_cols() + window.stride()) {
      usable.push_back(&s);
    } else {
      out.skipped_songs.push_back(s.id);
    }
  }
  if (usable.size() < 2) {
    throw TooFewSongs("need at least 2 songs long enough for a window pair, have " + std::to_string(usable.size()));
  }
  std::mt19937_64 rng(seed);
  std::shuffle(usable.begin(), usable.end(), rng);

  double total = 0;
  for (const Song* s : usable) {
    total += static_cast<double>(s->roll.n_cols());
  }
  std::size_t n_test = 0;
  double held = 0;
  while (n_test < usable.size() - 1 && (n_test == 0 || held < test_fraction * total)) {
    held += static_cast<double>(usable[usable.size() - 1 - n_test]->roll.n_cols());
    ++n_test;
  }
  const auto cut = usable.begin() + static_cast<std::ptrdiff_t>(usable.size() - n_test);
  const std::vector<const Song*> train_side(usable.begin(), cut);
  const std::vector<const Song*> test_side(cut, usable.end());
  for (const Song* s : train_side) out.train_songs.push_back(s->id);
  for (const Song* s : test_side) out.test_songs.push_back(s->id);
  out.train_pairs = windows_for(train_side, window);
  out.test_pairs = windows_for(test_side, window);
  return out;
}

SplitDataset split_by_ids(const std::vector<Song>& songs, const WindowSpec& window,
                          const std::vector<std::string>& test_ids) {
  const std::set<std::string> held(test_ids.begin(), test_ids.end());
  SplitDataset out;
  std::vector<const Song*> train_side;
  std::vector<const Song*> test_side;
  for (const auto& s : songs) {
    if (s.roll.n_cols() < window.width_cols() + window.stride()) {
      out.skipped_songs.push_back(s.id);
    } else if (held.count(s.id)) {
      test_side.push_back(&s);
      out.test_songs.push_back(s.id);
    } else {
      train_side.push_back(&s);
      out.train_songs.push_back(s.id);
    }
  }
  out.train_pairs = windows_for(train_side, window);
  out.test_pairs = windows_for(test_side, window);
  return out;
}

void write_history_csv(std::ostream& out, const TrainingHistory& history) {
  out << "step,total,recon_bce,kl\n";
  out.precision(10);
  for (const auto& r : history.steps) {
    out << r.step << ',' << r.total << ',' << r.recon_bce << ',' << r.kl << '\n';
  }
}

Adam::Adam(std::size_t n_params, double learning_rate, double beta1, double beta2, double eps)
    : lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(eps), m_(n_params, 0.0), v_(n_params, 0.0) {}

void Adam::step(std::span<double> params, std::span<const double> grads) {
  if (params.size() != m_.size() || grads.size() != m_.size()) {
    throw DimensionMismatch("optimizer state does not match parameter count");
  }
  ++t_;
  const double correction1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double correction2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g * g;
    const double m_hat = m_[i] / correction1;
    const double v_hat = v_[i] / correction2;
    params[i] -= lr_ * m_hat / (std::sqrt(v_hat) + eps_);
  }
}

double mean_eval_loss(const ModelParameters& params, const std::vector<WindowPair>& pairs, double beta) {
  if (pairs.empty()) {
    return 0.0;
  }
  const std::vector<double> zero(params.dims().latent, 0.0);
  double sum = 0;
  for (const auto& pair : pairs) {
    sum += elbo_loss(params, pair.input, pair.target, beta, zero).first.total;
  }
  return sum / static_cast<double>(pairs.size());
}

TrainResult train(const TrainingConfig& config, const SplitDataset& dataset, const ProgressFn& progress) {
  config.validate();
  if (dataset.train_pairs.empty()) {
    throw DataError("training side of the dataset is empty");
  }
  const auto& pairs = dataset.train_pairs;
  if (pairs.front().input.size() != config.dims.input) {
    throw DimensionMismatch("window pairs have " + std::to_string(pairs.front().input.size()) +
                            " cells, model input is " + std::to_string(config.dims.input));
  }

  TrainResult result{init_params(config.dims, config.seed), {}};
  ModelParameters& params = result.params;
  Adam adam(params.flat().size(), config.learning_rate, config.adam_beta1, config.adam_beta2, config.adam_eps);
  std::mt19937_64 rng(config.seed ^ kStreamSalt);
  std::normal_distribution<double> normal(0.0, 1.0);

  const std::size_t batch_size = config.batch_size;
  const std::size_t latent = config.dims.latent;
  const std::size_t threads = config.deterministic ? 1 : std::max<std::size_t>(1, config.threads);
  const std::size_t steps_per_epoch = std::max<std::size_t>(1, (pairs.size() + batch_size - 1) / batch_size);

  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::size_t cursor = 0;

  std::vector<std::size_t> batch(batch_size);
  std::vector<double> noise(batch_size * latent);
  Gradients grads(config.dims);
  std::vector<Gradients> partials(threads > 1 ? threads : 0, Gradients(config.dims));
  double best_test = std::numeric_limits<double>::infinity();
  std::size_t evals_since_best = 0;

  for (std::size_t step = 0; step < config.max_steps; ++step) {
    for (auto& idx : batch) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      idx = order[cursor++];
    }
    for (auto& n : noise) {
      n = normal(rng);
    }

    const double scale = 1.0 / static_cast<double>(batch_size);
    grads.set_zero();
    BatchLoss loss;
    if (threads == 1) {
      loss = accumulate_range(params, pairs, batch, noise, 0, batch_size, config.beta, scale, grads);
    } else {
      // Static partition, reduced in worker order: deterministic for a fixed thread count.
      std::vector<BatchLoss> losses(threads);
      {
        std::vector<std::jthread> workers;
        const std::size_t chunk = (batch_size + threads - 1) / threads;
        for (std::size_t w = 0; w < threads; ++w) {
          partials[w].set_zero();
          const std::size_t first = std::min(batch_size, w * chunk);
          const std::size_t last = std::min(batch_size, first + chunk);
          workers.emplace_back([&, w, first, last] {
            losses[w] = accumulate_range(params, pairs, batch, noise, first, last, config.beta, scale, partials[w]);
          });
        }
      }
      for (std::size_t w = 0; w < threads; ++w) {
        auto dst = grads.flat();
        auto src = partials[w].flat();
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
        loss.total += losses[w].total;
        loss.recon += losses[w].recon;
        loss.kl += losses[w].kl;
      }
    }

    const StepRecord record{step, loss.total * scale, loss.recon * scale, loss.kl * scale};
    if (!std::isfinite(record.total)) {
      throw NonFiniteLoss("non-finite loss at step " + std::to_string(step) + " (total=" +
                          std::to_string(record.total) + ", recon=" + std::to_string(record.recon_bce) +
                          ", kl=" + std::to_string(record.kl) + ")");
    }
    result.history.steps.push_back(record);
    if (progress) {
      progress(record);
    }
    adam.step(params.flat(), grads.flat());

    if (!dataset.test_pairs.empty() && (step + 1) % steps_per_epoch == 0) {
      const double test_loss = mean_eval_loss(params, dataset.test_pairs, config.beta);
      result.history.test_evals.push_back({step + 1, test_loss});
      if (test_loss < best_test) {
        best_test = test_loss;
        evals_since_best = 0;
      } else if (config.early_stop_patience > 0 && ++evals_since_best >= config.early_stop_patience) {
        result.history.stopped_early = true;
        break;
      }
    }
  }
  if (!params.all_finite()) {
    throw NonFiniteLoss("parameters became non-finite during training");
  }
  return result;
}

}  // namespace polyvae
