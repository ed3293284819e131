#include "grobust/model.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "grobust/errors.hpp"
#include "grobust/rng.hpp"

namespace grobust {

namespace {

std::vector<std::size_t> layer_sizes(const Architecture& arch) {
  std::vector<std::size_t> sizes;
  sizes.reserve(arch.hidden.size() + 2);
  sizes.push_back(arch.input_dim);
  sizes.insert(sizes.end(), arch.hidden.begin(), arch.hidden.end());
  sizes.push_back(arch.num_labels);
  return sizes;
}

void check_model(const Model& model) {
  if (model.arch.num_labels < 1) throw InputError("model must have at least one label");
  if (model.params.size() != model.arch.param_count()) {
    throw InputError("parameter vector has " + std::to_string(model.params.size()) +
                     " entries, architecture needs " + std::to_string(model.arch.param_count()));
  }
}

// Activations of every layer for one input; the last entry holds logits.
struct Trace {
  std::vector<std::vector<double>> layers;
};

void run_layers(const Model& model, std::span<const double> features, Trace& trace) {
  const auto sizes = layer_sizes(model.arch);
  if (features.size() != model.arch.input_dim) {
    throw InputError("feature vector has length " + std::to_string(features.size()) +
                     ", model expects " + std::to_string(model.arch.input_dim));
  }
  trace.layers.resize(sizes.size());
  trace.layers[0].assign(features.begin(), features.end());
  std::size_t offset = 0;
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    const std::size_t in = sizes[l];
    const std::size_t out = sizes[l + 1];
    const double* w = model.params.data() + offset;
    const double* b = w + in * out;
    const auto& input = trace.layers[l];
    auto& output = trace.layers[l + 1];
    output.resize(out);
    const bool hidden = l + 2 < sizes.size();
    for (std::size_t o = 0; o < out; ++o) {
      double z = b[o];
      const double* row = w + o * in;
      for (std::size_t i = 0; i < in; ++i) z += row[i] * input[i];
      output[o] = hidden ? std::tanh(z) : z;
    }
    offset += in * out + out;
  }
}

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> probs(logits.begin(), logits.end());
  const double top = *std::max_element(probs.begin(), probs.end());
  double total = 0.0;
  for (double& p : probs) {
    p = std::exp(p - top);
    total += p;
  }
  for (double& p : probs) p /= total;
  return probs;
}

double clamp_prob(double p) { return std::clamp(p, kProbFloor, 1.0); }

}  // namespace

std::size_t Architecture::param_count() const {
  const auto sizes = layer_sizes(*this);
  std::size_t count = 0;
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) count += sizes[l] * sizes[l + 1] + sizes[l + 1];
  return count;
}

Model zero_model(const Architecture& arch) {
  return Model{arch, Activation::tanh, std::vector<double>(arch.param_count(), 0.0)};
}

Model init_model(const Architecture& arch, Rng& rng) {
  Model model = zero_model(arch);
  const auto sizes = layer_sizes(arch);
  std::size_t offset = 0;
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    const std::size_t in = sizes[l];
    const std::size_t count = in * sizes[l + 1] + sizes[l + 1];
    const double scale = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(in, 1)));
    for (std::size_t k = 0; k < count; ++k) model.params[offset + k] = rng.uniform(-scale, scale);
    offset += count;
  }
  return model;
}

LossSpec LossSpec::gce(double q) {
  if (!(q >= 0.0 && q < 1.0)) throw InputError("gce_q must lie in [0, 1)");
  return {LossKind::generalized_cross_entropy, q};
}

std::vector<double> forward(const Model& model, std::span<const double> features) {
  check_model(model);
  Trace trace;
  run_layers(model, features, trace);
  return softmax(trace.layers.back());
}

std::size_t argmax(std::span<const double> values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

std::size_t predict(const Model& model, std::span<const double> features) {
  return argmax(forward(model, features));
}

double loss(std::span<const double> probs, std::size_t label, const LossSpec& spec) {
  if (label >= probs.size()) throw InputError("label index out of range");
  switch (spec.kind) {
    case LossKind::cross_entropy:
      return -std::log(clamp_prob(probs[label]));
    case LossKind::generalized_cross_entropy: {
      const double log_p = std::log(clamp_prob(probs[label]));
      if (spec.gce_q == 0.0) return -log_p;
      // (1 - p^q) / q, written with expm1 so small q stays accurate.
      return -std::expm1(spec.gce_q * log_p) / spec.gce_q;
    }
    case LossKind::zero_one:
      return argmax(probs) == label ? 0.0 : 1.0;
  }
  return 0.0;
}

void accumulate_grad(const Model& model, std::span<const Sample> batch,
                     std::span<const double> weights, const LossSpec& spec,
                     std::span<double> out, std::span<double> losses_out) {
  check_model(model);
  if (spec.kind == LossKind::zero_one) throw UnsupportedError("zero-one loss has no gradient");
  if (weights.size() != batch.size()) throw InputError("weights and batch differ in length");
  if (out.size() != model.params.size()) throw InputError("gradient buffer has wrong length");
  if (!losses_out.empty() && losses_out.size() != batch.size()) {
    throw InputError("loss buffer and batch differ in length");
  }

  const auto sizes = layer_sizes(model.arch);
  const std::size_t num_layers = sizes.size() - 1;
  std::vector<std::size_t> offsets(num_layers);
  for (std::size_t l = 0, off = 0; l < num_layers; ++l) {
    offsets[l] = off;
    off += sizes[l] * sizes[l + 1] + sizes[l + 1];
  }

  Trace trace;
  std::vector<double> delta;
  std::vector<double> prev_delta;
  for (std::size_t n = 0; n < batch.size(); ++n) {
    const Sample& sample = batch[n];
    if (sample.label >= model.arch.num_labels) throw InputError("label index out of range");
    run_layers(model, sample.features, trace);
    const auto probs = softmax(trace.layers.back());
    const double p = probs[sample.label];
    if (!losses_out.empty()) losses_out[n] = loss(probs, sample.label, spec);

    const double w = weights[n];
    if (w == 0.0 || p < kProbFloor) continue;  // clamped region is flat

    // dL/dlogits = scale * (probs - onehot); GCE rescales cross-entropy by p^q.
    double scale = w;
    if (spec.kind == LossKind::generalized_cross_entropy && spec.gce_q != 0.0) {
      scale *= std::pow(p, spec.gce_q);
    }
    delta.assign(probs.begin(), probs.end());
    delta[sample.label] -= 1.0;
    for (double& d : delta) d *= scale;

    for (std::size_t l = num_layers; l-- > 0;) {
      const std::size_t in = sizes[l];
      const std::size_t outs = sizes[l + 1];
      const auto& input = trace.layers[l];
      double* gw = out.data() + offsets[l];
      double* gb = gw + in * outs;
      for (std::size_t o = 0; o < outs; ++o) {
        const double d = delta[o];
        double* row = gw + o * in;
        for (std::size_t i = 0; i < in; ++i) row[i] += d * input[i];
        gb[o] += d;
      }
      if (l == 0) break;
      const double* w_layer = model.params.data() + offsets[l];
      prev_delta.assign(in, 0.0);
      for (std::size_t o = 0; o < outs; ++o) {
        const double d = delta[o];
        const double* row = w_layer + o * in;
        for (std::size_t i = 0; i < in; ++i) prev_delta[i] += row[i] * d;
      }
      for (std::size_t i = 0; i < in; ++i) prev_delta[i] *= 1.0 - input[i] * input[i];
      delta.swap(prev_delta);
    }
  }
}

std::vector<double> grad(const Model& model, std::span<const Sample> batch,
                         std::span<const double> weights, const LossSpec& spec) {
  std::vector<double> out(model.params.size(), 0.0);
  accumulate_grad(model, batch, weights, spec, out);
  return out;
}

OptimizerState OptimizerState::for_model(const Model& model, double learning_rate,
                                          double momentum, double l2) {
  if (!(learning_rate > 0.0)) throw InputError("learning_rate must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw InputError("momentum must lie in [0, 1)");
  if (!(l2 >= 0.0)) throw InputError("l2 must be non-negative");
  return OptimizerState{learning_rate, momentum, l2,
                        std::vector<double>(model.params.size(), 0.0)};
}

void apply_sgd_step(std::vector<double>& params, std::span<const double> gradient,
                    OptimizerState& opt) {
  if (gradient.size() != params.size() || opt.velocity.size() != params.size()) {
    throw InputError("gradient, velocity and parameters differ in length");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    opt.velocity[i] = opt.momentum * opt.velocity[i] + (gradient[i] + opt.l2 * params[i]);
    params[i] -= opt.learning_rate * opt.velocity[i];
  }
}

std::pair<Model, OptimizerState> sgd_step(Model model, std::span<const double> gradient,
                                          OptimizerState opt) {
  apply_sgd_step(model.params, gradient, opt);
  return {std::move(model), std::move(opt)};
}

}  // namespace grobust
