#include "imgast/net.hpp"

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

namespace imgast {

namespace {

const char* kind_name(LayerKind k) {
  return k == LayerKind::Convolution ? "convolution" : "fully_connected";
}

const char* activation_name(Activation a) { return a == Activation::Relu ? "relu" : "identity"; }

Eigen::MatrixXd expand_convolution(const ConvShape& s, const Eigen::MatrixXd& kernels) {
  Eigen::MatrixXd dense = Eigen::MatrixXd::Zero(s.filters * s.positions(), s.in_rows * s.in_cols);
  for (int f = 0; f < s.filters; ++f) {
    for (int pr = 0; pr < s.out_rows(); ++pr) {
      for (int pc = 0; pc < s.out_cols(); ++pc) {
        const int o = f * s.positions() + pr * s.out_cols() + pc;
        for (int kr = 0; kr < s.kernel_rows; ++kr) {
          for (int kc = 0; kc < s.kernel_cols; ++kc) {
            const int i = (pr * s.stride + kr) * s.in_cols + (pc * s.stride + kc);
            dense(o, i) = kernels(f, kr * s.kernel_cols + kc);
          }
        }
      }
    }
  }
  return dense;
}

}  // namespace

int NetworkDefinition::output_dim() const {
  return layers.empty() ? input_dim() : layers.back().out_dim();
}

int NetworkDefinition::relu_count() const {
  int n = 0;
  for (const auto& l : layers) {
    if (l.is_relu()) n += l.out_dim();
  }
  return n;
}

void NetworkDefinition::validate() const {
  if (input_rows <= 0 || input_cols <= 0) throw NetworkError("input shape must be positive");
  int prev = input_dim();
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    const std::string where = "layer " + std::to_string(i);
    if (l.in_dim() != prev) {
      throw NetworkError(where + ": in_dim " + std::to_string(l.in_dim()) + " does not match previous output " +
                         std::to_string(prev));
    }
    if (l.bias.size() != l.out_dim()) throw NetworkError(where + ": bias size does not match out_dim");
    if (!l.weights.allFinite() || !l.bias.allFinite()) throw NetworkError(where + ": non-finite weight");
    if (l.kind == LayerKind::Convolution) {
      if (!l.conv) throw NetworkError(where + ": convolution without geometry");
      const auto& s = *l.conv;
      if (s.in_rows * s.in_cols != l.in_dim() || s.filters * s.positions() != l.out_dim()) {
        throw NetworkError(where + ": convolution geometry does not match dims");
      }
      const Eigen::MatrixXd rebuilt = expand_convolution(s, convolution_kernels(l));
      if (rebuilt != l.weights) throw NetworkError(where + ": dense form breaks convolution weight sharing");
      const Eigen::VectorXd fb = convolution_filter_bias(l);
      for (int o = 0; o < l.out_dim(); ++o) {
        if (l.bias(o) != fb(o / s.positions())) throw NetworkError(where + ": convolution bias not shared");
      }
    }
    prev = l.out_dim();
  }
}

LayerSpec make_dense(Eigen::MatrixXd weights, Eigen::VectorXd bias, Activation act) {
  LayerSpec l;
  l.kind = LayerKind::FullyConnected;
  l.activation = act;
  l.weights = std::move(weights);
  l.bias = std::move(bias);
  return l;
}

LayerSpec make_convolution(const ConvShape& shape, const Eigen::MatrixXd& kernels,
                           const Eigen::VectorXd& filter_bias, Activation act) {
  if (kernels.rows() != shape.filters || kernels.cols() != shape.kernel_size() ||
      filter_bias.size() != shape.filters) {
    throw NetworkError("convolution kernel/bias shape mismatch");
  }
  if (shape.stride <= 0 || shape.kernel_rows > shape.in_rows || shape.kernel_cols > shape.in_cols) {
    throw NetworkError("invalid convolution geometry");
  }
  LayerSpec l;
  l.kind = LayerKind::Convolution;
  l.activation = act;
  l.conv = shape;
  l.weights = expand_convolution(shape, kernels);
  l.bias.resize(shape.filters * shape.positions());
  for (int o = 0; o < l.bias.size(); ++o) l.bias(o) = filter_bias(o / shape.positions());
  return l;
}

Eigen::MatrixXd convolution_kernels(const LayerSpec& layer) {
  const auto& s = layer.conv.value();
  Eigen::MatrixXd k(s.filters, s.kernel_size());
  for (int f = 0; f < s.filters; ++f) {
    const int o = f * s.positions();
    for (int kr = 0; kr < s.kernel_rows; ++kr) {
      for (int kc = 0; kc < s.kernel_cols; ++kc) k(f, kr * s.kernel_cols + kc) = layer.weights(o, kr * s.in_cols + kc);
    }
  }
  return k;
}

Eigen::VectorXd convolution_filter_bias(const LayerSpec& layer) {
  const auto& s = layer.conv.value();
  Eigen::VectorXd b(s.filters);
  for (int f = 0; f < s.filters; ++f) b(f) = layer.bias(f * s.positions());
  return b;
}

NetworkDefinition canonical_controller(unsigned long long seed) {
  std::mt19937_64 rng(seed);
  auto he = [&rng](int rows, int cols, int fan_in) {
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
    Eigen::MatrixXd m(rows, cols);
    for (int r = 0; r < rows; ++r) {
      for (int c = 0; c < cols; ++c) m(r, c) = dist(rng);
    }
    return m;
  };
  NetworkDefinition net;
  net.input_rows = 8;
  net.input_cols = 16;
  const ConvShape conv{8, 16, 8, 8, 8, 8};
  net.layers.push_back(make_convolution(conv, he(8, 64, 64), Eigen::VectorXd::Zero(8), Activation::Relu));
  net.layers.push_back(make_dense(he(8, 16, 16), Eigen::VectorXd::Zero(8), Activation::Relu));
  net.layers.push_back(make_dense(he(8, 8, 8), Eigen::VectorXd::Zero(8), Activation::Relu));
  net.layers.push_back(make_dense(he(2, 8, 8) * 0.5, Eigen::VectorXd::Zero(2), Activation::Identity));
  return net;
}

Eigen::VectorXd forward(const NetworkDefinition& net, std::span<const double> x) {
  if (static_cast<int>(x.size()) != net.input_dim()) {
    throw NetworkError("input has " + std::to_string(x.size()) + " values, network expects " +
                       std::to_string(net.input_dim()));
  }
  Eigen::VectorXd h = Eigen::Map<const Eigen::VectorXd>(x.data(), static_cast<Eigen::Index>(x.size()));
  for (const auto& l : net.layers) {
    Eigen::VectorXd z = l.weights * h + l.bias;
    if (l.is_relu()) z = z.cwiseMax(0.0);
    h = std::move(z);
  }
  return h;
}

double forward_scalar(const NetworkDefinition& net, std::span<const double> x) {
  const Eigen::VectorXd y = forward(net, x);
  if (y.size() != 1) throw NetworkError("expected a scalar-output network");
  return y(0);
}

NetworkDefinition compose_control_head(const NetworkDefinition& net, const ControlGains& gains) {
  if (net.layers.empty() || net.output_dim() != 2) throw NetworkError("control head needs a 2-output network");
  const auto& last = net.layers.back();
  if (last.is_relu()) throw NetworkError("control head needs a linear final layer");
  NetworkDefinition out = net;
  auto& head = out.layers.back();
  Eigen::MatrixXd w = gains.k_d * last.weights.row(0) + gains.k_theta * last.weights.row(1);
  Eigen::VectorXd b(1);
  b(0) = gains.k_d * last.bias(0) + gains.k_theta * last.bias(1);
  head.weights = std::move(w);
  head.bias = std::move(b);
  return out;
}

NetworkDefinition negate_output(const NetworkDefinition& net) {
  if (net.layers.empty() || net.layers.back().is_relu()) throw NetworkError("negation needs a linear final layer");
  NetworkDefinition out = net;
  out.layers.back().weights *= -1.0;
  out.layers.back().bias *= -1.0;
  return out;
}

nlohmann::json to_json(const NetworkDefinition& net) {
  nlohmann::json doc;
  doc["format_version"] = 1;
  doc["input_shape"] = {net.input_rows, net.input_cols};
  auto layers = nlohmann::json::array();
  for (const auto& l : net.layers) {
    nlohmann::json j;
    j["kind"] = kind_name(l.kind);
    j["in_dim"] = l.in_dim();
    j["out_dim"] = l.out_dim();
    j["activation"] = activation_name(l.activation);
    std::vector<double> w;
    std::vector<double> b;
    if (l.kind == LayerKind::Convolution) {
      const auto& s = *l.conv;
      j["kernel"] = {s.kernel_rows, s.kernel_cols};
      j["filters"] = s.filters;
      j["stride"] = s.stride;
      const Eigen::MatrixXd k = convolution_kernels(l);
      for (int r = 0; r < k.rows(); ++r) {
        for (int c = 0; c < k.cols(); ++c) w.push_back(k(r, c));
      }
      const Eigen::VectorXd fb = convolution_filter_bias(l);
      b.assign(fb.data(), fb.data() + fb.size());
    } else {
      for (int r = 0; r < l.weights.rows(); ++r) {
        for (int c = 0; c < l.weights.cols(); ++c) w.push_back(l.weights(r, c));
      }
      b.assign(l.bias.data(), l.bias.data() + l.bias.size());
    }
    j["weights"] = w;
    j["bias"] = b;
    layers.push_back(std::move(j));
  }
  doc["layers"] = std::move(layers);
  return doc;
}

namespace {

template <typename T>
T field(const nlohmann::json& obj, const std::string& key, const std::string& where) {
  if (!obj.is_object() || !obj.contains(key)) throw ParseError(where + key + ": missing");
  try {
    return obj.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ParseError(where + key + ": wrong type");
  }
}

std::vector<double> real_list(const nlohmann::json& obj, const std::string& key, std::size_t expected,
                              const std::string& where) {
  auto v = field<std::vector<double>>(obj, key, where);
  if (v.size() != expected) {
    throw ParseError(where + key + ": expected " + std::to_string(expected) + " values, got " +
                     std::to_string(v.size()));
  }
  for (double d : v) {
    if (!std::isfinite(d)) throw ParseError(where + key + ": non-finite value");
  }
  return v;
}

}  // namespace

NetworkDefinition network_from_json(const nlohmann::json& doc) {
  if (field<int>(doc, "format_version", "") != 1) throw ParseError("format_version: unsupported");
  const auto shape = field<std::vector<int>>(doc, "input_shape", "");
  if (shape.size() != 2 || shape[0] <= 0 || shape[1] <= 0) throw ParseError("input_shape: expected two positive dims");
  NetworkDefinition net;
  net.input_rows = shape[0];
  net.input_cols = shape[1];
  if (!doc.contains("layers") || !doc["layers"].is_array()) throw ParseError("layers: missing");
  int prev = net.input_dim();
  for (std::size_t i = 0; i < doc["layers"].size(); ++i) {
    const auto& j = doc["layers"][i];
    const std::string where = "layers[" + std::to_string(i) + "].";
    const auto kind = field<std::string>(j, "kind", where);
    const auto act_name = field<std::string>(j, "activation", where);
    const int in_dim = field<int>(j, "in_dim", where);
    const int out_dim = field<int>(j, "out_dim", where);
    if (in_dim != prev) throw ParseError(where + "in_dim: " + std::to_string(in_dim) + " does not chain from " + std::to_string(prev));
    if (out_dim <= 0) throw ParseError(where + "out_dim: must be positive");
    Activation act;
    if (act_name == "relu") {
      act = Activation::Relu;
    } else if (act_name == "identity") {
      act = Activation::Identity;
    } else {
      throw ParseError(where + "activation: unknown '" + act_name + "'");
    }
    if (kind == "convolution") {
      const auto k = field<std::vector<int>>(j, "kernel", where);
      if (k.size() != 2) throw ParseError(where + "kernel: expected [rows, cols]");
      if (i != 0) throw ParseError(where + "kind: convolution only supported as the first layer");
      ConvShape s;
      s.in_rows = net.input_rows;
      s.in_cols = net.input_cols;
      s.kernel_rows = k[0];
      s.kernel_cols = k[1];
      s.filters = field<int>(j, "filters", where);
      s.stride = field<int>(j, "stride", where);
      if (s.kernel_rows <= 0 || s.kernel_cols <= 0 || s.filters <= 0 || s.stride <= 0 ||
          s.kernel_rows > s.in_rows || s.kernel_cols > s.in_cols) {
        throw ParseError(where + "kernel: invalid geometry");
      }
      if (s.filters * s.positions() != out_dim) throw ParseError(where + "out_dim: does not match convolution geometry");
      const auto w = real_list(j, "weights", static_cast<std::size_t>(s.filters * s.kernel_size()), where);
      const auto b = real_list(j, "bias", static_cast<std::size_t>(s.filters), where);
      Eigen::MatrixXd kernels(s.filters, s.kernel_size());
      for (int r = 0; r < s.filters; ++r) {
        for (int c = 0; c < s.kernel_size(); ++c) kernels(r, c) = w[static_cast<std::size_t>(r * s.kernel_size() + c)];
      }
      net.layers.push_back(make_convolution(s, kernels, Eigen::Map<const Eigen::VectorXd>(b.data(), s.filters), act));
    } else if (kind == "fully_connected") {
      const auto w = real_list(j, "weights", static_cast<std::size_t>(in_dim) * out_dim, where);
      const auto b = real_list(j, "bias", static_cast<std::size_t>(out_dim), where);
      Eigen::MatrixXd m(out_dim, in_dim);
      for (int r = 0; r < out_dim; ++r) {
        for (int c = 0; c < in_dim; ++c) m(r, c) = w[static_cast<std::size_t>(r) * in_dim + c];
      }
      net.layers.push_back(make_dense(std::move(m), Eigen::Map<const Eigen::VectorXd>(b.data(), out_dim), act));
    } else {
      throw ParseError(where + "kind: unknown '" + kind + "'");
    }
    prev = out_dim;
  }
  return net;
}

void save_weights(const NetworkDefinition& net, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << to_json(net).dump(1) << '\n';
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

NetworkDefinition load_weights(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("document: ") + e.what());
  }
  return network_from_json(doc);
}

bool same_weights(const NetworkDefinition& a, const NetworkDefinition& b) {
  if (a.input_rows != b.input_rows || a.input_cols != b.input_cols || a.layers.size() != b.layers.size()) return false;
  for (std::size_t i = 0; i < a.layers.size(); ++i) {
    const auto& x = a.layers[i];
    const auto& y = b.layers[i];
    if (x.kind != y.kind || x.activation != y.activation || x.conv != y.conv) return false;
    if (x.weights.rows() != y.weights.rows() || x.weights.cols() != y.weights.cols()) return false;
    if (x.weights != y.weights || x.bias != y.bias) return false;
  }
  return true;
}

}  // namespace imgast
