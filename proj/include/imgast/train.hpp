// Backpropagation and SGD-with-momentum training for NetworkDefinition.
// The same gradient path serves supervised controller training and the
// Q-network updates.
#pragma once

#include "imgast/net.hpp"

#include <cstdint>
#include <stdexcept>
#include <vector>

namespace imgast {

class TrainingError : public std::runtime_error {
public:
  TrainingError(const std::string& what, int epoch) : std::runtime_error(what), epoch_(epoch) {}
  int epoch() const { return epoch_; }

private:
  int epoch_;
};

struct LayerGradient {
  Eigen::MatrixXd weights;
  Eigen::VectorXd bias;
};

/// Per-layer parameter gradient, same shapes as the network's dense layers.
struct NetworkGradient {
  std::vector<LayerGradient> layers;

  static NetworkGradient zeros_like(const NetworkDefinition& net);
  void set_zero();
  void scale(double s);
};

/// Activations kept for the backward pass.
struct ForwardCache {
  std::vector<Eigen::VectorXd> inputs;  // input to each layer
  std::vector<Eigen::VectorXd> pre;     // pre-activation of each layer
  Eigen::VectorXd output;
};

ForwardCache forward_cached(const NetworkDefinition& net, std::span<const double> x);

/// grad += d(loss)/d(params) given d(loss)/d(output) for one sample.
void accumulate_gradient(const NetworkDefinition& net, const ForwardCache& cache,
                         const Eigen::VectorXd& output_grad, NetworkGradient& grad);

/// SGD with momentum. Convolution gradients are tied across positions before
/// the update so weight sharing is preserved.
class SgdMomentum {
public:
  SgdMomentum(const NetworkDefinition& net, double learning_rate, double momentum);
  void step(NetworkDefinition& net, const NetworkGradient& grad);
  void set_learning_rate(double lr) { learning_rate_ = lr; }
  double learning_rate() const { return learning_rate_; }

private:
  double learning_rate_;
  double momentum_;
  NetworkGradient velocity_;
};

/// Replace a convolution layer's dense gradient by its shared-weight projection.
void tie_convolution_gradient(const LayerSpec& layer, LayerGradient& grad);

struct TrainingSample {
  std::vector<double> input;
  std::vector<double> target;
};

struct TrainConfig {
  double learning_rate = 0.01;
  double momentum = 0.9;
  int batch_size = 32;
  int epochs = 800;
  std::uint64_t seed = 7;
  double validation_fraction = 0.2;
  /// Targets are divided by these during training; the scale is folded back
  /// into the final layer so outputs keep their physical units.
  std::vector<double> target_scale;
  /// Learning rate is multiplied by this every `decay_every` epochs.
  double lr_decay = 0.5;
  int decay_every = 300;
};

struct TrainReport {
  std::vector<double> epoch_loss;
  std::vector<double> train_rmse;       // per output, physical units
  std::vector<double> validation_rmse;  // per output, physical units
  std::size_t train_count = 0;
  std::size_t validation_count = 0;
};

struct TrainResult {
  NetworkDefinition net;
  TrainReport report;
};

/// Fit `init` to the samples by minibatch SGD on mean squared error.
TrainResult train(const NetworkDefinition& init, const std::vector<TrainingSample>& data, const TrainConfig& cfg);

/// Per-output RMSE of `net` on `data`.
std::vector<double> rmse(const NetworkDefinition& net, const std::vector<TrainingSample>& data);

}  // namespace imgast
