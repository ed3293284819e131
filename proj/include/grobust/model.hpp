#pragma once

// Differentiable core: fixed-architecture classifiers (multinomial logistic
// regression and tanh MLPs), their losses and analytic gradients, and the
// momentum SGD step shared by every trainer.

#include <cstddef>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

namespace grobust {

class Rng;

struct Architecture {
  std::size_t input_dim = 0;
  std::vector<std::size_t> hidden;  // empty: logistic regression
  std::size_t num_labels = 2;

  // Per-layer weights plus biases.
  std::size_t param_count() const;

  bool operator==(const Architecture&) const = default;
};

// Hidden layers always use tanh: smooth everywhere, so finite differences
// are well defined at every sampled point.
enum class Activation { tanh };

// Parameters are laid out layer by layer; each layer stores its weight
// matrix row-major (out x in) followed by its bias vector.
struct Model {
  Architecture arch;
  Activation activation = Activation::tanh;
  std::vector<double> params;

  bool operator==(const Model&) const = default;
};

Model zero_model(const Architecture& arch);

// Per-layer uniform in [-s, s], s = 1/sqrt(fan_in); biases included.
Model init_model(const Architecture& arch, Rng& rng);

// Probabilities are clamped to this floor before logs and powers.
inline constexpr double kProbFloor = 1e-12;

enum class LossKind { cross_entropy, generalized_cross_entropy, zero_one };

struct LossSpec {
  LossKind kind = LossKind::cross_entropy;
  double gce_q = 0.0;  // only read for generalized_cross_entropy

  static LossSpec cross_entropy() { return {}; }
  static LossSpec gce(double q);
  static LossSpec zero_one() { return {LossKind::zero_one, 0.0}; }
};

struct Sample {
  std::span<const double> features;
  std::size_t label = 0;
};

std::vector<double> forward(const Model& model, std::span<const double> features);

// Lowest index wins ties.
std::size_t argmax(std::span<const double> values);

std::size_t predict(const Model& model, std::span<const double> features);

double loss(std::span<const double> probs, std::size_t label, const LossSpec& spec);

// Gradient of sum_i weights[i] * loss(x_i, y_i) with respect to params.
// The L2 penalty is applied by the optimizer, not here.
std::vector<double> grad(const Model& model, std::span<const Sample> batch,
                         std::span<const double> weights, const LossSpec& spec);

// Same as grad(), accumulating into `out` (which must be sized to the
// parameter count) and optionally writing each example's unweighted loss.
void accumulate_grad(const Model& model, std::span<const Sample> batch,
                     std::span<const double> weights, const LossSpec& spec,
                     std::span<double> out, std::span<double> losses_out = {});

struct OptimizerState {
  double learning_rate = 0.01;
  double momentum = 0.9;
  double l2 = 0.0;
  std::vector<double> velocity;

  static OptimizerState for_model(const Model& model, double learning_rate,
                                  double momentum = 0.9, double l2 = 0.0);
};

// velocity <- momentum * velocity + (grad + l2 * params)
// params   <- params - learning_rate * velocity
std::pair<Model, OptimizerState> sgd_step(Model model, std::span<const double> gradient,
                                          OptimizerState opt);

// In-place form of sgd_step for training loops.
void apply_sgd_step(std::vector<double>& params, std::span<const double> gradient,
                    OptimizerState& opt);

}  // namespace grobust
