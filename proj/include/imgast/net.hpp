// Piecewise-linear controller networks: definition, evaluation, control-law
// folding and the structured-text weight file.
#pragma once

#include <Eigen/Dense>

#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace imgast {

class NetworkError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Malformed weight file. The message names the offending field.
class ParseError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

enum class LayerKind { FullyConnected, Convolution };
enum class Activation { Relu, Identity };

/// Single-channel 2-D convolution geometry (valid padding).
struct ConvShape {
  int in_rows = 0;
  int in_cols = 0;
  int kernel_rows = 0;
  int kernel_cols = 0;
  int filters = 0;
  int stride = 1;

  int out_rows() const { return (in_rows - kernel_rows) / stride + 1; }
  int out_cols() const { return (in_cols - kernel_cols) / stride + 1; }
  int positions() const { return out_rows() * out_cols(); }
  int kernel_size() const { return kernel_rows * kernel_cols; }

  bool operator==(const ConvShape&) const = default;
};

/// One affine layer followed by an activation. Convolutions are held in their
/// equivalent dense form; `conv` records the sharing structure. Output unit
/// o of a convolution is filter * positions + (out_row * out_cols + out_col).
struct LayerSpec {
  LayerKind kind = LayerKind::FullyConnected;
  Activation activation = Activation::Identity;
  Eigen::MatrixXd weights;  // out_dim x in_dim
  Eigen::VectorXd bias;     // out_dim
  std::optional<ConvShape> conv;

  int in_dim() const { return static_cast<int>(weights.cols()); }
  int out_dim() const { return static_cast<int>(weights.rows()); }
  bool is_relu() const { return activation == Activation::Relu; }
};

struct NetworkDefinition {
  int input_rows = 8;
  int input_cols = 16;
  std::vector<LayerSpec> layers;

  int input_dim() const { return input_rows * input_cols; }
  int output_dim() const;
  int relu_count() const;

  /// Throws NetworkError when dims do not chain, a weight is non-finite or a
  /// convolution's dense form does not match its declared geometry.
  void validate() const;
};

struct ControlGains {
  double k_d = 0.015;      // per meter
  double k_theta = 0.008;  // per degree
};

LayerSpec make_dense(Eigen::MatrixXd weights, Eigen::VectorXd bias, Activation act);

/// Build a convolution layer from per-filter kernels (filters x kernel_size,
/// row-major within the kernel) and per-filter biases.
LayerSpec make_convolution(const ConvShape& shape, const Eigen::MatrixXd& kernels,
                           const Eigen::VectorXd& filter_bias, Activation act);

/// Kernel and bias recovered from the dense form (position 0 of each filter).
Eigen::MatrixXd convolution_kernels(const LayerSpec& layer);
Eigen::VectorXd convolution_filter_bias(const LayerSpec& layer);

/// conv(8x8, 8 filters, stride 8) -> FC(8) -> FC(8) -> linear(2), He-initialised.
NetworkDefinition canonical_controller(unsigned long long seed);

Eigen::VectorXd forward(const NetworkDefinition& net, std::span<const double> x);
double forward_scalar(const NetworkDefinition& net, std::span<const double> x);

/// Fold r = k_d * out[0] + k_theta * out[1] into the final linear layer.
NetworkDefinition compose_control_head(const NetworkDefinition& net, const ControlGains& gains);

/// Same network with every output multiplied by -1.
NetworkDefinition negate_output(const NetworkDefinition& net);

nlohmann::json to_json(const NetworkDefinition& net);
NetworkDefinition network_from_json(const nlohmann::json& doc);

void save_weights(const NetworkDefinition& net, const std::filesystem::path& path);
NetworkDefinition load_weights(const std::filesystem::path& path);

bool same_weights(const NetworkDefinition& a, const NetworkDefinition& b);

}  // namespace imgast
