// Multilayer perceptron with exact reverse-mode gradients and Adam.
//
// Batches are column-major: an input batch is an (input_dim x batch) matrix,
// one sample per column. Everything is double precision.
#ifndef PREDILECT_NN_HPP_
#define PREDILECT_NN_HPP_

#include <Eigen/Dense>
#include <json.hpp>
#include <span>
#include <string>
#include <vector>

#include "predilect/core.hpp"
#include "predilect/rng.hpp"

namespace predilect::nn {

enum class Activation { relu, tanh, identity };

std::string_view to_string(Activation a);
Activation parse_activation(std::string_view text);

struct LayerSpec {
  int input_dim = 0;
  int output_dim = 0;
  Activation activation = Activation::identity;
};

// input -> hidden... -> output, with one activation for hidden layers and
// another for the output layer.
std::vector<LayerSpec> mlp_specs(int input_dim, const std::vector<int>& hidden,
                                 int output_dim, Activation hidden_activation,
                                 Activation output_activation);

struct Layer {
  Eigen::MatrixXd weight;  // output_dim x input_dim
  Eigen::VectorXd bias;
  Activation activation = Activation::identity;
};

struct MlpParameters {
  std::vector<Layer> layers;

  int input_dim() const;
  int output_dim() const;
  std::size_t parameter_count() const;
  std::vector<LayerSpec> specs() const;
  MlpParameters zeros_like() const;

  bool operator==(const MlpParameters& other) const;
};

// Weights ~ U(-b, b) with b = sqrt(6 / fan_in), so Var = 2 / fan_in.
// Biases start at zero. Throws on an empty or inconsistent spec list.
MlpParameters init_params(const std::vector<LayerSpec>& specs, Rng& rng);

struct ForwardCache {
  std::vector<Eigen::MatrixXd> inputs;   // input to each layer
  std::vector<Eigen::MatrixXd> outputs;  // post-activation output
};

Eigen::MatrixXd forward_batch(const MlpParameters& params,
                              const Eigen::MatrixXd& inputs,
                              ForwardCache* cache = nullptr);

Eigen::VectorXd forward(const MlpParameters& params,
                        std::span<const double> input,
                        ForwardCache* cache = nullptr);

// Vector-Jacobian product: gradients of sum_k <output_grads[:,k], y_k> with
// respect to every parameter, summed over the batch.
MlpParameters backward(const MlpParameters& params, const ForwardCache& cache,
                       const Eigen::MatrixXd& output_grads);

// Gradient of the same quantity with respect to the inputs.
Eigen::MatrixXd input_gradient(const MlpParameters& params,
                               const ForwardCache& cache,
                               const Eigen::MatrixXd& output_grads);

void add_scaled(MlpParameters& dst, const MlpParameters& src, double scale);
void scale(MlpParameters& params, double factor);
double squared_norm(const MlpParameters& params);

struct AdamConfig {
  double learning_rate = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  AdamConfig config;
  MlpParameters first_moment;
  MlpParameters second_moment;
  long step = 0;
};

AdamState make_adam_state(const MlpParameters& params, AdamConfig config);

// In-place Adam update with bias correction. Throws, naming the layer, on a
// non-finite gradient; params and state are untouched in that case.
void adam_step(MlpParameters& params, const MlpParameters& grads,
               AdamState& state);

// Single-block Adam update for parameters kept outside an MLP. `step` is
// the already-incremented step count.
void adam_update(Eigen::Ref<Eigen::VectorXd> param,
                 const Eigen::Ref<const Eigen::VectorXd>& grad,
                 Eigen::Ref<Eigen::VectorXd> first_moment,
                 Eigen::Ref<Eigen::VectorXd> second_moment,
                 const AdamConfig& config, long step);

inline constexpr int kCheckpointVersion = 1;

nlohmann::json params_to_json(const MlpParameters& params);
MlpParameters params_from_json(const nlohmann::json& j);
nlohmann::json adam_to_json(const AdamState& state);
AdamState adam_from_json(const nlohmann::json& j);

}  // namespace predilect::nn

#endif  // PREDILECT_NN_HPP_
