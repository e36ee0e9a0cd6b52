#include <doctest.h>

#include <cmath>

#include "finite_diff.hpp"
#include "predilect/nn.hpp"

using namespace predilect;
using namespace predilect::nn;

namespace {

// Straight-line forward pass, written without Eigen expressions, used as an
// independent oracle for forward().
std::vector<double> reference_forward(const MlpParameters& p,
                                      std::vector<double> x) {
  for (const auto& layer : p.layers) {
    std::vector<double> y(static_cast<std::size_t>(layer.weight.rows()));
    for (Eigen::Index r = 0; r < layer.weight.rows(); ++r) {
      double acc = layer.bias[r];
      for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) {
        acc += layer.weight(r, c) * x[static_cast<std::size_t>(c)];
      }
      switch (layer.activation) {
        case Activation::relu:
          acc = acc > 0 ? acc : 0;
          break;
        case Activation::tanh:
          acc = std::tanh(acc);
          break;
        case Activation::identity:
          break;
      }
      y[static_cast<std::size_t>(r)] = acc;
    }
    x = std::move(y);
  }
  return x;
}

std::vector<double> random_vector(Rng& rng, int n) {
  std::vector<double> v(static_cast<std::size_t>(n));
  for (auto& x : v) x = rng.normal();
  return v;
}

}  // namespace

TEST_CASE("init_params rejects an empty network") {
  Rng rng = seeded_rng(1, "init");
  CHECK_THROWS_AS(init_params({}, rng), Error);
  CHECK_THROWS_AS(init_params({{3, 4, Activation::relu}, {5, 1, Activation::tanh}}, rng),
                  Error);
}

TEST_CASE("init_params is deterministic for a fixed seed") {
  auto specs = mlp_specs(6, {16, 16}, 1, Activation::relu, Activation::tanh);
  Rng a = seeded_rng(42, "init");
  Rng b = seeded_rng(42, "init");
  CHECK(init_params(specs, a) == init_params(specs, b));
}

TEST_CASE("init weight variance is 2/fan_in within 10%") {
  Rng rng = seeded_rng(3, "var");
  const int fan_in = 100;
  auto p = init_params({{fan_in, 100, Activation::relu}}, rng);  // 10k draws
  const auto& w = p.layers[0].weight;
  const double mean = w.mean();
  const double var = (w.array() - mean).square().sum() / (w.size() - 1);
  CHECK(std::abs(var - 2.0 / fan_in) / (2.0 / fan_in) < 0.10);
  CHECK(p.layers[0].bias.isZero());
}

TEST_CASE("identity layer with identity weights is the identity map") {
  MlpParameters p;
  p.layers.push_back({Eigen::MatrixXd::Identity(3, 3), Eigen::VectorXd::Zero(3),
                      Activation::identity});
  const std::vector<double> x{0.5, -2.0, 7.0};
  auto y = forward(p, x);
  for (int i = 0; i < 3; ++i) CHECK(y[i] == x[static_cast<std::size_t>(i)]);
}

TEST_CASE("tanh output layer stays inside (-1, 1)") {
  Rng rng = seeded_rng(4, "tanh");
  auto p = init_params(mlp_specs(4, {32, 32}, 3, Activation::relu, Activation::tanh), rng);
  for (int i = 0; i < 200; ++i) {
    auto x = random_vector(rng, 4);
    for (auto& v : x) v *= 5;
    auto y = forward(p, x);
    CHECK((y.array().abs() < 1.0).all());
  }
}

TEST_CASE("forward matches the straight-line reference") {
  Rng rng = seeded_rng(5, "ref");
  for (auto act : {Activation::relu, Activation::tanh}) {
    auto p = init_params(mlp_specs(5, {7, 9}, 2, act, Activation::tanh), rng);
    for (int i = 0; i < 50; ++i) {
      auto x = random_vector(rng, 5);
      auto y = forward(p, x);
      auto ref = reference_forward(p, x);
      for (int k = 0; k < 2; ++k) CHECK(y[k] == doctest::Approx(ref[static_cast<std::size_t>(k)]).epsilon(1e-13));
    }
  }
}

TEST_CASE("forward rejects a dimension mismatch") {
  Rng rng = seeded_rng(6, "dim");
  auto p = init_params(mlp_specs(3, {4}, 1, Activation::relu, Activation::tanh), rng);
  CHECK_THROWS_AS(forward(p, std::vector<double>{1.0, 2.0}), Error);
}

TEST_CASE("backward with zero output gradient is all zero") {
  Rng rng = seeded_rng(7, "zero");
  auto p = init_params(mlp_specs(3, {8, 8}, 2, Activation::relu, Activation::tanh), rng);
  ForwardCache cache;
  forward_batch(p, Eigen::MatrixXd::Random(3, 5), &cache);
  auto g = backward(p, cache, Eigen::MatrixXd::Zero(2, 5));
  CHECK(squared_norm(g) == 0.0);
}

TEST_CASE("backward is linear in the output gradient") {
  Rng rng = seeded_rng(8, "lin");
  auto p = init_params(mlp_specs(3, {8, 8}, 2, Activation::relu, Activation::tanh), rng);
  ForwardCache cache;
  Eigen::MatrixXd x = Eigen::MatrixXd::Random(3, 4);
  forward_batch(p, x, &cache);
  Eigen::MatrixXd g1 = Eigen::MatrixXd::Random(2, 4);
  Eigen::MatrixXd g2 = Eigen::MatrixXd::Random(2, 4);
  auto sum = backward(p, cache, g1 + g2);
  auto parts = backward(p, cache, g1);
  add_scaled(parts, backward(p, cache, g2), 1.0);
  add_scaled(parts, sum, -1.0);
  CHECK(std::sqrt(squared_norm(parts)) < 1e-12 * (1 + std::sqrt(squared_norm(sum))));
}

TEST_CASE("backward shape mismatch throws") {
  Rng rng = seeded_rng(9, "shape");
  auto p = init_params(mlp_specs(3, {4}, 2, Activation::relu, Activation::tanh), rng);
  ForwardCache cache;
  forward_batch(p, Eigen::MatrixXd::Random(3, 2), &cache);
  CHECK_THROWS_AS(backward(p, cache, Eigen::MatrixXd::Zero(1, 2)), Error);
}

// Every architecture the library uses: reward (256,256,256) and policy/value
// (128,128). Each draw checks a random subset of entries of the big nets and
// every entry of a small one.
TEST_CASE("gradients match central finite differences") {
  struct Arch {
    int in;
    std::vector<int> hidden;
    int out;
    Activation out_act;
    int draws;
    int samples;
  };
  const Arch archs[] = {
      {6, {256, 256, 256}, 1, Activation::tanh, 100, 12},
      {9, {128, 128}, 3, Activation::tanh, 100, 12},
      {9, {128, 128}, 1, Activation::identity, 100, 12},
      {4, {5, 6}, 2, Activation::tanh, 20, 0},
  };
  Rng rng = seeded_rng(10, "fd");
  for (const auto& a : archs) {
    auto p = init_params(mlp_specs(a.in, a.hidden, a.out, Activation::relu, a.out_act), rng);
    double worst = 0.0;
    for (int d = 0; d < a.draws; ++d) {
      Eigen::MatrixXd x(a.in, 1);
      for (int i = 0; i < a.in; ++i) x(i, 0) = 0.5 * rng.normal();
      Eigen::MatrixXd g(a.out, 1);
      for (int i = 0; i < a.out; ++i) g(i, 0) = rng.normal();
      ForwardCache cache;
      forward_batch(p, x, &cache);
      auto grads = backward(p, cache, g);
      auto loss = [&] { return (forward_batch(p, x).array() * g.array()).sum(); };
      worst = std::max(worst, predilect::testing::max_fd_error(p, grads, loss, rng, a.samples));
    }
    CAPTURE(a.hidden.size());
    CHECK(worst <= 1e-4);
  }
}

TEST_CASE("input_gradient matches finite differences") {
  Rng rng = seeded_rng(11, "inp");
  auto p = init_params(mlp_specs(3, {6}, 1, Activation::tanh, Activation::tanh), rng);
  Eigen::MatrixXd x = Eigen::MatrixXd::Random(3, 1);
  ForwardCache cache;
  forward_batch(p, x, &cache);
  auto gx = input_gradient(p, cache, Eigen::MatrixXd::Ones(1, 1));
  for (int i = 0; i < 3; ++i) {
    Eigen::MatrixXd up = x, down = x;
    up(i, 0) += 1e-6;
    down(i, 0) -= 1e-6;
    const double fd = (forward_batch(p, up)(0, 0) - forward_batch(p, down)(0, 0)) / 2e-6;
    CHECK(gx(i, 0) == doctest::Approx(fd).epsilon(1e-6));
  }
}

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
  Rng rng = seeded_rng(12, "adam0");
  auto p = init_params(mlp_specs(2, {3}, 1, Activation::relu, Activation::tanh), rng);
  const auto before = p;
  auto state = make_adam_state(p, {});
  adam_step(p, p.zeros_like(), state);
  CHECK(p == before);
  CHECK(state.step == 1);
}

TEST_CASE("adam: one step on x^2 from x=1 decreases x") {
  MlpParameters p;
  p.layers.push_back({Eigen::MatrixXd::Constant(1, 1, 1.0), Eigen::VectorXd::Zero(1),
                      Activation::identity});
  auto state = make_adam_state(p, {0.1});
  auto g = p.zeros_like();
  g.layers[0].weight(0, 0) = 2.0 * p.layers[0].weight(0, 0);
  adam_step(p, g, state);
  CHECK(p.layers[0].weight(0, 0) < 1.0);
}

TEST_CASE("adam: 200 steps on a two-variable quadratic converge") {
  // f(a, b) = (a - 3)^2 + 10 (b + 1)^2 held in a 1x2 weight matrix.
  MlpParameters p;
  p.layers.push_back({Eigen::MatrixXd::Zero(1, 2), Eigen::VectorXd::Zero(1),
                      Activation::identity});
  auto f = [&] {
    const double a = p.layers[0].weight(0, 0), b = p.layers[0].weight(0, 1);
    return (a - 3) * (a - 3) + 10 * (b + 1) * (b + 1);
  };
  const double initial = f();
  auto state = make_adam_state(p, {0.1});
  for (int i = 0; i < 200; ++i) {
    auto g = p.zeros_like();
    g.layers[0].weight(0, 0) = 2 * (p.layers[0].weight(0, 0) - 3);
    g.layers[0].weight(0, 1) = 20 * (p.layers[0].weight(0, 1) + 1);
    adam_step(p, g, state);
  }
  CHECK(f() < 1e-3 * initial);
}

TEST_CASE("adam: non-finite gradient names the layer and changes nothing") {
  Rng rng = seeded_rng(13, "nan");
  auto p = init_params(mlp_specs(2, {3}, 1, Activation::relu, Activation::tanh), rng);
  const auto before = p;
  auto state = make_adam_state(p, {});
  auto g = p.zeros_like();
  g.layers[1].bias[0] = std::nan("");
  try {
    adam_step(p, g, state);
    FAIL("expected error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("layer 1") != std::string::npos);
  }
  CHECK(p == before);
  CHECK(state.step == 0);
}

TEST_CASE("training is bit-reproducible for a fixed seed") {
  auto run = [] {
    Rng rng = seeded_rng(14, "train");
    auto p = init_params(mlp_specs(3, {16}, 1, Activation::relu, Activation::tanh), rng);
    auto state = make_adam_state(p, {1e-2});
    for (int i = 0; i < 20; ++i) {
      Eigen::MatrixXd x(3, 8);
      for (Eigen::Index k = 0; k < x.size(); ++k) x.data()[k] = rng.normal();
      ForwardCache cache;
      Eigen::MatrixXd y = forward_batch(p, x, &cache);
      adam_step(p, backward(p, cache, y), state);
    }
    return p;
  };
  CHECK(run() == run());
}

TEST_CASE("checkpoint JSON round-trips exactly") {
  Rng rng = seeded_rng(15, "ckpt");
  auto p = init_params(mlp_specs(4, {5, 6}, 2, Activation::relu, Activation::tanh), rng);
  auto j = params_to_json(p);
  CHECK(params_from_json(nlohmann::json::parse(j.dump())) == p);
  j["version"] = 7;
  CHECK_THROWS_AS(params_from_json(j), Error);

  auto state = make_adam_state(p, {});
  adam_step(p, p, state);
  auto s2 = adam_from_json(nlohmann::json::parse(adam_to_json(state).dump()));
  CHECK(s2.step == state.step);
  CHECK(s2.first_moment == state.first_moment);
  CHECK(s2.second_moment == state.second_moment);
}
