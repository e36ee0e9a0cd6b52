#include "predilect/nn.hpp"

#include <cmath>

namespace predilect::nn {

std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::relu:
      return "relu";
    case Activation::tanh:
      return "tanh";
    case Activation::identity:
      return "identity";
  }
  return "identity";
}

Activation parse_activation(std::string_view text) {
  if (text == "relu") return Activation::relu;
  if (text == "tanh") return Activation::tanh;
  if (text == "identity") return Activation::identity;
  throw Error("unknown activation '" + std::string(text) + "'");
}

std::vector<LayerSpec> mlp_specs(int input_dim, const std::vector<int>& hidden,
                                 int output_dim, Activation hidden_activation,
                                 Activation output_activation) {
  std::vector<LayerSpec> specs;
  int in = input_dim;
  for (int h : hidden) {
    specs.push_back({in, h, hidden_activation});
    in = h;
  }
  specs.push_back({in, output_dim, output_activation});
  return specs;
}

int MlpParameters::input_dim() const {
  return layers.empty() ? 0 : static_cast<int>(layers.front().weight.cols());
}

int MlpParameters::output_dim() const {
  return layers.empty() ? 0 : static_cast<int>(layers.back().weight.rows());
}

std::size_t MlpParameters::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.weight.size() + l.bias.size();
  return n;
}

std::vector<LayerSpec> MlpParameters::specs() const {
  std::vector<LayerSpec> out;
  for (const auto& l : layers) {
    out.push_back({static_cast<int>(l.weight.cols()),
                   static_cast<int>(l.weight.rows()), l.activation});
  }
  return out;
}

MlpParameters MlpParameters::zeros_like() const {
  MlpParameters z;
  for (const auto& l : layers) {
    z.layers.push_back({Eigen::MatrixXd::Zero(l.weight.rows(), l.weight.cols()),
                        Eigen::VectorXd::Zero(l.bias.size()), l.activation});
  }
  return z;
}

bool MlpParameters::operator==(const MlpParameters& other) const {
  if (layers.size() != other.layers.size()) return false;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& a = layers[i];
    const auto& b = other.layers[i];
    if (a.activation != b.activation || a.weight.rows() != b.weight.rows() ||
        a.weight.cols() != b.weight.cols() || a.weight != b.weight ||
        a.bias != b.bias) {
      return false;
    }
  }
  return true;
}

MlpParameters init_params(const std::vector<LayerSpec>& specs, Rng& rng) {
  if (specs.empty()) throw Error("init_params: empty network");
  MlpParameters params;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const auto& s = specs[i];
    if (s.input_dim <= 0 || s.output_dim <= 0) {
      throw Error("init_params: layer " + std::to_string(i) +
                  " has a non-positive dimension");
    }
    if (i > 0 && specs[i - 1].output_dim != s.input_dim) {
      throw Error("init_params: layer " + std::to_string(i) +
                  " input does not match previous output");
    }
    const double bound = std::sqrt(6.0 / s.input_dim);
    Layer layer{Eigen::MatrixXd(s.output_dim, s.input_dim),
                Eigen::VectorXd::Zero(s.output_dim), s.activation};
    // Row-major fill order keeps draws independent of Eigen's storage order.
    for (int r = 0; r < s.output_dim; ++r) {
      for (int c = 0; c < s.input_dim; ++c) {
        layer.weight(r, c) = rng.uniform(-bound, bound);
      }
    }
    params.layers.push_back(std::move(layer));
  }
  return params;
}

namespace {

void apply_activation(Eigen::MatrixXd& z, Activation a) {
  switch (a) {
    case Activation::relu:
      z = z.cwiseMax(0.0);
      break;
    case Activation::tanh:
      z = z.array().tanh().matrix();
      break;
    case Activation::identity:
      break;
  }
}

// grad <- grad * activation'(pre) expressed through the post-activation value.
void apply_activation_derivative(Eigen::MatrixXd& grad,
                                 const Eigen::MatrixXd& out, Activation a) {
  switch (a) {
    case Activation::relu:
      grad = (out.array() > 0.0).select(grad, 0.0);
      break;
    case Activation::tanh:
      grad.array() *= 1.0 - out.array().square();
      break;
    case Activation::identity:
      break;
  }
}

}  // namespace

Eigen::MatrixXd forward_batch(const MlpParameters& params,
                              const Eigen::MatrixXd& inputs,
                              ForwardCache* cache) {
  if (params.layers.empty()) throw Error("forward: empty network");
  if (inputs.rows() != params.input_dim()) {
    throw Error("forward: input dim " + std::to_string(inputs.rows()) +
                " != " + std::to_string(params.input_dim()));
  }
  if (cache) {
    cache->inputs.clear();
    cache->outputs.clear();
  }
  Eigen::MatrixXd x = inputs;
  for (const auto& layer : params.layers) {
    Eigen::MatrixXd z = layer.weight * x;
    z.colwise() += layer.bias;
    apply_activation(z, layer.activation);
    if (cache) {
      cache->inputs.push_back(std::move(x));
      cache->outputs.push_back(z);
    }
    x = std::move(z);
  }
  return x;
}

Eigen::VectorXd forward(const MlpParameters& params,
                        std::span<const double> input, ForwardCache* cache) {
  Eigen::MatrixXd x =
      Eigen::Map<const Eigen::VectorXd>(input.data(),
                                        static_cast<Eigen::Index>(input.size()));
  return forward_batch(params, x, cache).col(0);
}

namespace {

template <typename OnLayer>
Eigen::MatrixXd backprop(const MlpParameters& params, const ForwardCache& cache,
                         const Eigen::MatrixXd& output_grads, OnLayer&& on_layer) {
  const std::size_t n = params.layers.size();
  if (cache.inputs.size() != n || cache.outputs.size() != n) {
    throw Error("backward: cache does not match network");
  }
  if (output_grads.rows() != params.output_dim() ||
      output_grads.cols() != cache.outputs.back().cols()) {
    throw Error("backward: output gradient shape mismatch");
  }
  Eigen::MatrixXd g = output_grads;
  for (std::size_t k = n; k-- > 0;) {
    const auto& layer = params.layers[k];
    apply_activation_derivative(g, cache.outputs[k], layer.activation);
    on_layer(k, g);
    g = layer.weight.transpose() * g;
  }
  return g;
}

}  // namespace

MlpParameters backward(const MlpParameters& params, const ForwardCache& cache,
                       const Eigen::MatrixXd& output_grads) {
  MlpParameters grads;
  grads.layers.resize(params.layers.size());
  backprop(params, cache, output_grads,
           [&](std::size_t k, const Eigen::MatrixXd& g) {
             grads.layers[k].weight.noalias() = g * cache.inputs[k].transpose();
             grads.layers[k].bias = g.rowwise().sum();
             grads.layers[k].activation = params.layers[k].activation;
           });
  return grads;
}

Eigen::MatrixXd input_gradient(const MlpParameters& params,
                               const ForwardCache& cache,
                               const Eigen::MatrixXd& output_grads) {
  return backprop(params, cache, output_grads,
                  [](std::size_t, const Eigen::MatrixXd&) {});
}

void add_scaled(MlpParameters& dst, const MlpParameters& src, double scale) {
  if (dst.layers.size() != src.layers.size()) {
    throw Error("add_scaled: layer count mismatch");
  }
  for (std::size_t i = 0; i < dst.layers.size(); ++i) {
    dst.layers[i].weight += scale * src.layers[i].weight;
    dst.layers[i].bias += scale * src.layers[i].bias;
  }
}

void scale(MlpParameters& params, double factor) {
  for (auto& l : params.layers) {
    l.weight *= factor;
    l.bias *= factor;
  }
}

double squared_norm(const MlpParameters& params) {
  double s = 0.0;
  for (const auto& l : params.layers) {
    s += l.weight.squaredNorm() + l.bias.squaredNorm();
  }
  return s;
}

AdamState make_adam_state(const MlpParameters& params, AdamConfig config) {
  return AdamState{config, params.zeros_like(), params.zeros_like(), 0};
}

namespace {

template <typename P, typename G, typename M, typename V>
void adam_kernel(P&& p, const G& g, M&& m, V&& v, const AdamConfig& c,
                 long step) {
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(step));
  m = c.beta1 * m + (1.0 - c.beta1) * g;
  v = c.beta2 * v + (1.0 - c.beta2) * g.cwiseProduct(g);
  const double step_size = c.learning_rate / bc1;
  p.array() -= step_size * m.array() /
               ((v.array() / bc2).sqrt() + c.epsilon);
}

}  // namespace

void adam_step(MlpParameters& params, const MlpParameters& grads,
               AdamState& state) {
  if (grads.layers.size() != params.layers.size() ||
      state.first_moment.layers.size() != params.layers.size()) {
    throw Error("adam_step: shape mismatch");
  }
  for (std::size_t i = 0; i < grads.layers.size(); ++i) {
    const auto& g = grads.layers[i];
    const auto& p = params.layers[i];
    if (g.weight.rows() != p.weight.rows() ||
        g.weight.cols() != p.weight.cols() || g.bias.size() != p.bias.size()) {
      throw Error("adam_step: gradient shape mismatch at layer " +
                  std::to_string(i));
    }
    if (!g.weight.allFinite() || !g.bias.allFinite()) {
      throw Error("adam_step: non-finite gradient in layer " +
                  std::to_string(i));
    }
  }
  ++state.step;
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    auto& p = params.layers[i];
    const auto& g = grads.layers[i];
    auto& m = state.first_moment.layers[i];
    auto& v = state.second_moment.layers[i];
    adam_kernel(p.weight, g.weight, m.weight, v.weight, state.config,
                state.step);
    adam_kernel(p.bias, g.bias, m.bias, v.bias, state.config, state.step);
  }
}

void adam_update(Eigen::Ref<Eigen::VectorXd> param,
                 const Eigen::Ref<const Eigen::VectorXd>& grad,
                 Eigen::Ref<Eigen::VectorXd> first_moment,
                 Eigen::Ref<Eigen::VectorXd> second_moment,
                 const AdamConfig& config, long step) {
  if (!grad.allFinite()) throw Error("adam_update: non-finite gradient");
  adam_kernel(param, grad, first_moment, second_moment, config, step);
}

nlohmann::json params_to_json(const MlpParameters& params) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : params.layers) {
    std::vector<double> w;
    w.reserve(static_cast<std::size_t>(l.weight.size()));
    for (Eigen::Index r = 0; r < l.weight.rows(); ++r) {
      for (Eigen::Index c = 0; c < l.weight.cols(); ++c) w.push_back(l.weight(r, c));
    }
    layers.push_back({{"input_dim", l.weight.cols()},
                      {"output_dim", l.weight.rows()},
                      {"activation", std::string(to_string(l.activation))},
                      {"weight", std::move(w)},
                      {"bias", std::vector<double>(l.bias.data(),
                                                   l.bias.data() + l.bias.size())}});
  }
  return {{"format", "predilect.mlp"},
          {"version", kCheckpointVersion},
          {"layers", std::move(layers)}};
}

MlpParameters params_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "predilect.mlp") {
    throw Error("checkpoint: not an MLP checkpoint");
  }
  if (j.value("version", -1) != kCheckpointVersion) {
    throw Error("checkpoint: unsupported version " +
                std::to_string(j.value("version", -1)));
  }
  MlpParameters params;
  for (const auto& lj : j.at("layers")) {
    const int in = lj.at("input_dim").get<int>();
    const int out = lj.at("output_dim").get<int>();
    const auto w = lj.at("weight").get<std::vector<double>>();
    const auto b = lj.at("bias").get<std::vector<double>>();
    if (static_cast<int>(w.size()) != in * out || static_cast<int>(b.size()) != out) {
      throw Error("checkpoint: layer shape does not match its arrays");
    }
    Layer layer{Eigen::MatrixXd(out, in), Eigen::VectorXd(out),
                parse_activation(lj.at("activation").get<std::string>())};
    for (int r = 0; r < out; ++r) {
      for (int c = 0; c < in; ++c) layer.weight(r, c) = w[static_cast<std::size_t>(r * in + c)];
      layer.bias(r) = b[static_cast<std::size_t>(r)];
    }
    params.layers.push_back(std::move(layer));
  }
  if (params.layers.empty()) throw Error("checkpoint: empty network");
  return params;
}

nlohmann::json adam_to_json(const AdamState& s) {
  return {{"learning_rate", s.config.learning_rate},
          {"beta1", s.config.beta1},
          {"beta2", s.config.beta2},
          {"epsilon", s.config.epsilon},
          {"step", s.step},
          {"first_moment", params_to_json(s.first_moment)},
          {"second_moment", params_to_json(s.second_moment)}};
}

AdamState adam_from_json(const nlohmann::json& j) {
  AdamState s;
  s.config = {j.at("learning_rate").get<double>(), j.at("beta1").get<double>(),
              j.at("beta2").get<double>(), j.at("epsilon").get<double>()};
  s.step = j.at("step").get<long>();
  s.first_moment = params_from_json(j.at("first_moment"));
  s.second_moment = params_from_json(j.at("second_moment"));
  return s;
}

}  // namespace predilect::nn
