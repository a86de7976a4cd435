#include "imgast/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace imgast {

NetworkGradient NetworkGradient::zeros_like(const NetworkDefinition& net) {
  NetworkGradient g;
  for (const auto& l : net.layers) {
    g.layers.push_back({Eigen::MatrixXd::Zero(l.weights.rows(), l.weights.cols()), Eigen::VectorXd::Zero(l.bias.size())});
  }
  return g;
}

void NetworkGradient::set_zero() {
  for (auto& l : layers) {
    l.weights.setZero();
    l.bias.setZero();
  }
}

void NetworkGradient::scale(double s) {
  for (auto& l : layers) {
    l.weights *= s;
    l.bias *= s;
  }
}

ForwardCache forward_cached(const NetworkDefinition& net, std::span<const double> x) {
  if (static_cast<int>(x.size()) != net.input_dim()) throw NetworkError("input shape mismatch");
  ForwardCache c;
  Eigen::VectorXd h = Eigen::Map<const Eigen::VectorXd>(x.data(), static_cast<Eigen::Index>(x.size()));
  for (const auto& l : net.layers) {
    c.inputs.push_back(h);
    Eigen::VectorXd z = l.weights * h + l.bias;
    c.pre.push_back(z);
    h = l.is_relu() ? Eigen::VectorXd(z.cwiseMax(0.0)) : z;
  }
  c.output = std::move(h);
  return c;
}

void accumulate_gradient(const NetworkDefinition& net, const ForwardCache& cache, const Eigen::VectorXd& output_grad,
                         NetworkGradient& grad) {
  Eigen::VectorXd delta = output_grad;
  for (int i = static_cast<int>(net.layers.size()) - 1; i >= 0; --i) {
    const auto& l = net.layers[static_cast<std::size_t>(i)];
    if (l.is_relu()) {
      const auto& z = cache.pre[static_cast<std::size_t>(i)];
      for (int k = 0; k < delta.size(); ++k) {
        if (z(k) <= 0.0) delta(k) = 0.0;
      }
    }
    auto& g = grad.layers[static_cast<std::size_t>(i)];
    g.weights.noalias() += delta * cache.inputs[static_cast<std::size_t>(i)].transpose();
    g.bias += delta;
    if (i > 0) delta = l.weights.transpose() * delta;
  }
}

void tie_convolution_gradient(const LayerSpec& layer, LayerGradient& grad) {
  if (layer.kind != LayerKind::Convolution) return;
  const auto& s = layer.conv.value();
  Eigen::MatrixXd kernel_grad = Eigen::MatrixXd::Zero(s.filters, s.kernel_size());
  Eigen::VectorXd bias_grad = Eigen::VectorXd::Zero(s.filters);
  for (int f = 0; f < s.filters; ++f) {
    for (int pr = 0; pr < s.out_rows(); ++pr) {
      for (int pc = 0; pc < s.out_cols(); ++pc) {
        const int o = f * s.positions() + pr * s.out_cols() + pc;
        bias_grad(f) += grad.bias(o);
        for (int kr = 0; kr < s.kernel_rows; ++kr) {
          for (int kc = 0; kc < s.kernel_cols; ++kc) {
            kernel_grad(f, kr * s.kernel_cols + kc) += grad.weights(o, (pr * s.stride + kr) * s.in_cols + pc * s.stride + kc);
          }
        }
      }
    }
  }
  const LayerSpec tied = make_convolution(s, kernel_grad, bias_grad, layer.activation);
  grad.weights = tied.weights;
  grad.bias = tied.bias;
}

SgdMomentum::SgdMomentum(const NetworkDefinition& net, double learning_rate, double momentum)
    : learning_rate_(learning_rate), momentum_(momentum), velocity_(NetworkGradient::zeros_like(net)) {}

void SgdMomentum::step(NetworkDefinition& net, const NetworkGradient& grad) {
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    auto& l = net.layers[i];
    LayerGradient g = grad.layers[i];
    tie_convolution_gradient(l, g);
    auto& v = velocity_.layers[i];
    v.weights = momentum_ * v.weights - learning_rate_ * g.weights;
    v.bias = momentum_ * v.bias - learning_rate_ * g.bias;
    l.weights += v.weights;
    l.bias += v.bias;
  }
}

std::vector<double> rmse(const NetworkDefinition& net, const std::vector<TrainingSample>& data) {
  std::vector<double> sq(static_cast<std::size_t>(net.output_dim()), 0.0);
  for (const auto& s : data) {
    const Eigen::VectorXd y = forward(net, s.input);
    for (std::size_t k = 0; k < sq.size(); ++k) {
      const double e = y(static_cast<Eigen::Index>(k)) - s.target[k];
      sq[k] += e * e;
    }
  }
  for (auto& v : sq) v = data.empty() ? 0.0 : std::sqrt(v / static_cast<double>(data.size()));
  return sq;
}

TrainResult train(const NetworkDefinition& init, const std::vector<TrainingSample>& data, const TrainConfig& cfg) {
  if (data.empty()) throw TrainingError("empty training set", 0);
  if (cfg.learning_rate <= 0 || cfg.batch_size <= 0 || cfg.epochs < 0 || cfg.momentum < 0 || cfg.momentum >= 1) {
    throw TrainingError("invalid training configuration", 0);
  }
  init.validate();
  const auto out_dim = static_cast<std::size_t>(init.output_dim());
  std::vector<double> scale = cfg.target_scale.empty() ? std::vector<double>(out_dim, 1.0) : cfg.target_scale;
  if (scale.size() != out_dim) throw TrainingError("target_scale size does not match output dim", 0);
  for (const auto& s : data) {
    if (s.target.size() != out_dim) throw TrainingError("sample target size does not match output dim", 0);
  }

  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  auto n_val = static_cast<std::size_t>(std::floor(cfg.validation_fraction * static_cast<double>(data.size())));
  if (n_val >= data.size()) n_val = 0;
  std::vector<TrainingSample> validation;
  std::vector<TrainingSample> training;
  for (std::size_t i = 0; i < order.size(); ++i) {
    TrainingSample s = data[order[i]];
    (i < n_val ? validation : training).push_back(std::move(s));
  }
  std::vector<Eigen::VectorXd> scaled_targets;
  for (const auto& s : training) {
    Eigen::VectorXd t(static_cast<Eigen::Index>(out_dim));
    for (std::size_t k = 0; k < out_dim; ++k) t(static_cast<Eigen::Index>(k)) = s.target[k] / scale[k];
    scaled_targets.push_back(std::move(t));
  }

  TrainResult result{init, {}};
  NetworkDefinition& net = result.net;
  SgdMomentum opt(net, cfg.learning_rate, cfg.momentum);
  NetworkGradient grad = NetworkGradient::zeros_like(net);
  std::vector<std::size_t> idx(training.size());
  std::iota(idx.begin(), idx.end(), 0);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (cfg.decay_every > 0 && epoch > 0 && epoch % cfg.decay_every == 0) {
      opt.set_learning_rate(opt.learning_rate() * cfg.lr_decay);
    }
    std::shuffle(idx.begin(), idx.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < idx.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(idx.size(), start + static_cast<std::size_t>(cfg.batch_size));
      const double norm = 1.0 / static_cast<double>((end - start) * out_dim);
      grad.set_zero();
      for (std::size_t b = start; b < end; ++b) {
        const auto& s = training[idx[b]];
        const ForwardCache c = forward_cached(net, s.input);
        const Eigen::VectorXd err = c.output - scaled_targets[idx[b]];
        epoch_loss += err.squaredNorm();
        accumulate_gradient(net, c, 2.0 * norm * err, grad);
      }
      opt.step(net, grad);
    }
    epoch_loss /= static_cast<double>(training.size() * out_dim);
    if (!std::isfinite(epoch_loss)) throw TrainingError("loss diverged at epoch " + std::to_string(epoch), epoch);
    result.report.epoch_loss.push_back(epoch_loss);
  }

  auto& head = net.layers.back();
  for (std::size_t k = 0; k < out_dim; ++k) {
    head.weights.row(static_cast<Eigen::Index>(k)) *= scale[k];
    head.bias(static_cast<Eigen::Index>(k)) *= scale[k];
  }
  for (const auto& l : net.layers) {
    if (!l.weights.allFinite() || !l.bias.allFinite()) throw TrainingError("non-finite weights after training", cfg.epochs);
  }
  result.report.train_rmse = rmse(net, training);
  result.report.validation_rmse = rmse(net, validation);
  result.report.train_count = training.size();
  result.report.validation_count = validation.size();
  return result;
}

}  // namespace imgast
