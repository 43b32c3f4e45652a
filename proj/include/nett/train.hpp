#pragma once
/*
 * Mini-batch SGD with momentum on the per-pixel mean loss
 *     E = mean_n d(net(x_n), r_n),   d = mean squared or mean absolute error.
 * Update: v <- momentum * v - lr * g;  w <- w + v.
 * The shuffle for epoch e comes from SeededRng(seed).split(e).
 */

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "nett/error.hpp"
#include "nett/io.hpp"
#include "nett/net.hpp"
#include "nett/train_set.hpp"

namespace nett {

enum class Loss { mse, mae };

struct TrainConfig {
  int epochs = 30;
  std::size_t batch_size = 8;
  double learning_rate = 0.01;
  double momentum = 0.9;
  std::uint64_t seed = 1;
  Loss loss = Loss::mse;

  void validate() const {
    if (epochs <= 0) throw InvalidArgument("TrainConfig: epochs must be positive");
    if (batch_size == 0) throw InvalidArgument("TrainConfig: batch_size must be positive");
    if (!(learning_rate > 0.0)) throw InvalidArgument("TrainConfig: learning_rate must be positive");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw InvalidArgument("TrainConfig: momentum must be in [0,1)");
  }
};

struct TrainResult {
  std::vector<double> epoch_loss;  ///< mean sample loss seen during each epoch
};

/// Loss value and dL/d(output) for one sample.
inline double sample_loss(const Image& out, const Image& target, Loss loss, Image* grad) {
  out.require_same(target);
  const double inv = 1.0 / static_cast<double>(out.size());
  if (grad) *grad = out.zeros_like();
  double total = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double d = out[i] - target[i];
    if (loss == Loss::mse) {
      total += d * d;
      if (grad) (*grad)[i] = 2.0 * d * inv;
    } else {
      total += std::abs(d);
      if (grad) (*grad)[i] = (d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0)) * inv;
    }
  }
  return total * inv;
}

/// Trains `net` in place.
inline TrainResult train(Network& net, const TrainSet& data, const TrainConfig& cfg) {
  cfg.validate();
  if (data.empty()) throw InvalidArgument("train: empty training set");
  const std::size_t n = data.size();
  std::vector<double> velocity(net.parameter_count(), 0.0);
  std::vector<std::size_t> order(n);
  const SeededRng master(cfg.seed);
  TrainResult result;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    SeededRng rng = master.split(static_cast<std::uint64_t>(epoch));
    rng.shuffle(order);
    double epoch_total = 0.0;
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t stop = std::min(n, start + cfg.batch_size);
      std::vector<double> grad(net.parameter_count(), 0.0);
      for (std::size_t k = start; k < stop; ++k) {
        const TrainPair& pair = data.pairs[order[k]];
        const ForwardCache cache = net.forward(pair.input);
        Image g;
        epoch_total += sample_loss(cache.output(), pair.target, cfg.loss, &g);
        const Gradients grads = net.backward(cache, &g, nullptr, true);
        for (std::size_t p = 0; p < grad.size(); ++p) grad[p] += grads.params[p];
      }
      const double inv_batch = 1.0 / static_cast<double>(stop - start);
      auto params = net.params();
      for (std::size_t p = 0; p < grad.size(); ++p) {
        velocity[p] = cfg.momentum * velocity[p] - cfg.learning_rate * grad[p] * inv_batch;
        params[p] += velocity[p];
      }
    }
    const double mean = epoch_total / static_cast<double>(n);
    if (!std::isfinite(mean))
      throw NumericError("training diverged at epoch " + std::to_string(epoch));
    for (double v : net.params())
      if (!std::isfinite(v)) throw NumericError("training diverged at epoch " + std::to_string(epoch));
    result.epoch_loss.push_back(mean);
  }
  return result;
}

inline void save_loss_csv(const std::filesystem::path& path, const TrainResult& r) {
  std::ofstream os(path);
  if (!os) throw FormatError("cannot open for writing: " + path.string());
  os.precision(17);
  os << "epoch,mean_loss\n";
  for (std::size_t e = 0; e < r.epoch_loss.size(); ++e) os << e << ',' << r.epoch_loss[e] << '\n';
}

inline TrainConfig train_config_from(const KeyValues& kv, TrainConfig base = {}) {
  base.epochs = static_cast<int>(kv.get_int("epochs", base.epochs));
  base.batch_size = static_cast<std::size_t>(kv.get_int("batch_size", static_cast<long long>(base.batch_size)));
  base.learning_rate = kv.get_double("learning_rate", base.learning_rate);
  base.momentum = kv.get_double("momentum", base.momentum);
  base.seed = static_cast<std::uint64_t>(kv.get_int("train_seed", static_cast<long long>(base.seed)));
  if (kv.has("loss")) {
    const auto& l = kv.get("loss");
    if (l == "mse")
      base.loss = Loss::mse;
    else if (l == "mae")
      base.loss = Loss::mae;
    else
      throw FormatError("unknown loss '" + l + "'");
  }
  base.validate();
  return base;
}

}  // namespace nett
