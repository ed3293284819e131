#include "grobust/trainers.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "grobust/errors.hpp"
#include "grobust/rng.hpp"

namespace grobust {

// ---------------------------------------------------------------------------
// Error sets and upsampling

ErrorSet compute_error_set(const Model& model, const Dataset& train) {
  ErrorSet E;
  for (std::size_t i = 0; i < train.size(); ++i) {
    const auto& e = train.examples[i];
    if (predict(model, e.features) != e.label) E.indices.push_back(i);
  }
  return E;
}

std::vector<std::size_t> upsample_indices(std::size_t n, const ErrorSet& E, std::size_t lambda_up) {
  if (lambda_up < 1) throw InputError("lambda_up must be at least 1");
  std::vector<std::size_t> out(n);
  std::iota(out.begin(), out.end(), std::size_t{0});
  out.reserve(n + (lambda_up - 1) * E.size());
  for (std::size_t copy = 1; copy < lambda_up; ++copy) {
    for (const std::size_t i : E.indices) {
      if (i >= n) throw InputError("error set index " + std::to_string(i) + " out of range");
      out.push_back(i);
    }
  }
  return out;
}

Dataset build_upsampled(const Dataset& train, const ErrorSet& E, std::size_t lambda_up) {
  Dataset out;
  out.name = train.name;
  if (E.empty() || lambda_up == 1) {
    out = train;
    return out;
  }
  out.name += "[upsampled x" + std::to_string(lambda_up) + "]";
  for (const std::size_t i : upsample_indices(train.size(), E, lambda_up)) {
    out.examples.push_back(train.examples[i]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Closed-form pieces

std::vector<double> cvar_batch_weights(std::span<const double> losses, double alpha) {
  const std::size_t B = losses.size();
  if (B == 0) throw InputError("cvar_batch_weights: empty batch");
  if (!(alpha > 0.0 && alpha <= 1.0)) throw InputError("cvar_batch_weights: alpha must lie in (0, 1]");

  std::vector<std::size_t> order(B);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return losses[a] > losses[b]; });

  const double scaled = alpha * static_cast<double>(B);
  const double cap = 1.0 / scaled;
  // Guard against alpha * B landing a hair below an integer.
  const auto full = std::min<std::size_t>(B, static_cast<std::size_t>(std::floor(scaled * (1.0 + 1e-12))));

  std::vector<double> weights(B, 0.0);
  for (std::size_t r = 0; r < full; ++r) weights[order[r]] = cap;
  if (full < B) {
    const double rest = 1.0 - static_cast<double>(full) * cap;
    if (rest > 0.0) weights[order[full]] = rest;
  }
  return weights;
}

double lff_weight(double pB, double pD) {
  constexpr double kCeil = 1.0 - 1e-12;
  const double log_b = std::log(std::clamp(pB, kProbFloor, kCeil));
  const double log_d = std::log(std::clamp(pD, kProbFloor, kCeil));
  return log_b / (log_b + log_d);
}

std::vector<double> group_dro_update(std::span<const double> group_losses,
                                     std::span<const double> weights, double eta_q) {
  if (group_losses.size() != weights.size()) throw InputError("group_dro_update: length mismatch");
  if (weights.empty()) throw InputError("group_dro_update: no groups");
  std::vector<double> next(weights.size());
  double total = 0.0;
  for (std::size_t g = 0; g < weights.size(); ++g) {
    next[g] = weights[g] * std::exp(eta_q * group_losses[g]);
    total += next[g];
  }
  for (double& w : next) w /= total;
  return next;
}

// ---------------------------------------------------------------------------
// Shared training machinery

namespace {

constexpr std::uint64_t kFinalStage = 0;
constexpr std::uint64_t kIdentificationStage = 1;

void check_inputs(const Dataset& train, const TrainConfig& cfg) {
  cfg.validate();
  if (train.empty()) throw InputError("training set is empty");
  train.validate();
}

Architecture architecture_for(const Dataset& train, const Dataset& val, const TrainConfig& cfg) {
  return Architecture{train.feature_dim(), cfg.hidden, std::max(train.num_labels(), val.num_labels())};
}

Model initial_model(const Architecture& arch, const TrainConfig& cfg, std::uint64_t stage) {
  Rng rng(derive_seed(cfg.seed, "init", stage));
  return init_model(arch, rng);
}

// One model, its optimizer and its batch-order stream.
struct Learner {
  Model model;
  OptimizerState opt;
  Rng shuffle;
  std::vector<double> gradient;

  Learner(Model m, double lr, double momentum, double l2, std::uint64_t shuffle_seed)
      : model(std::move(m)),
        opt(OptimizerState::for_model(model, lr, momentum, l2)),
        shuffle(shuffle_seed),
        gradient(model.params.size(), 0.0) {}

  void step(std::span<const Sample> batch, std::span<const double> weights, const LossSpec& spec,
            std::span<double> losses_out = {}) {
    std::fill(gradient.begin(), gradient.end(), 0.0);
    accumulate_grad(model, batch, weights, spec, gradient, losses_out);
    apply_sgd_step(model.params, gradient, opt);
  }
};

Learner final_learner(const Architecture& arch, const TrainConfig& cfg) {
  return Learner(initial_model(arch, cfg, kFinalStage), cfg.learning_rate, cfg.momentum, cfg.l2,
                 derive_seed(cfg.seed, "shuffle", kFinalStage));
}

std::vector<std::size_t> identity_pool(std::size_t n) {
  std::vector<std::size_t> pool(n);
  std::iota(pool.begin(), pool.end(), std::size_t{0});
  return pool;
}

// Visits a seeded permutation of `pool` in consecutive batches (the last one
// may be short). `step` receives dataset indices and returns the batch's summed
// unweighted cross-entropy; the epoch mean is returned.
template <typename Step>
double run_epoch(std::span<const std::size_t> pool, std::size_t batch_size, Rng& shuffle, Step&& step) {
  std::vector<std::size_t> order(pool.begin(), pool.end());
  shuffle.shuffle(std::span<std::size_t>(order));
  double total = 0.0;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t end = std::min(order.size(), start + batch_size);
    total += step(std::span<const std::size_t>(order.data() + start, end - start));
  }
  return order.empty() ? 0.0 : total / static_cast<double>(order.size());
}

std::vector<Sample> gather(const Dataset& data, std::span<const std::size_t> idx) {
  std::vector<Sample> batch;
  batch.reserve(idx.size());
  for (const std::size_t i : idx) batch.push_back(data.examples[i].sample());
  return batch;
}

double sum(std::span<const double> values) {
  double total = 0.0;
  for (const double v : values) total += v;
  return total;
}

// Appends history and keeps the best checkpoint per validation criterion.
// Ties keep the earlier epoch.
class Tracker {
public:
  explicit Tracker(const Dataset& val) : val_(val), enabled_(!val.empty() && val.has_group_annotations()) {}

  void record(TrainResult& result, double train_loss, const Model& model) {
    EpochRecord rec;
    rec.train_loss = train_loss;
    const std::size_t epoch = result.history.size();
    if (enabled_) {
      const auto m = evaluate_groups(model, val_);
      rec.val_worst_group = m.worst_group_accuracy;
      rec.val_average = m.average_accuracy;
      if (!result.best_worst_group || m.worst_group_accuracy > best_worst_) {
        best_worst_ = m.worst_group_accuracy;
        result.best_worst_group = Checkpoint{epoch, model};
      }
      if (!result.best_average || m.average_accuracy > best_average_) {
        best_average_ = m.average_accuracy;
        result.best_average = Checkpoint{epoch, model};
      }
    }
    result.history.push_back(rec);
  }

private:
  const Dataset& val_;
  bool enabled_;
  double best_worst_ = 0.0;
  double best_average_ = 0.0;
};

std::vector<double> train_losses(const Model& model, const Dataset& train) {
  std::vector<double> out;
  out.reserve(train.size());
  const auto spec = LossSpec::cross_entropy();
  for (const auto& e : train.examples) out.push_back(loss(forward(model, e.features), e.label, spec));
  return out;
}

// Mean-normalized ERM over a multiset of dataset indices.
void erm_epochs(Learner& learner, const Dataset& data, std::span<const std::size_t> pool,
                std::size_t epochs, std::size_t batch_size, TrainResult* result, Tracker* tracker) {
  const auto spec = LossSpec::cross_entropy();
  std::vector<double> weights;
  std::vector<double> losses;
  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    const double train_loss = run_epoch(pool, batch_size, learner.shuffle, [&](std::span<const std::size_t> idx) {
      const auto batch = gather(data, idx);
      weights.assign(batch.size(), 1.0 / static_cast<double>(batch.size()));
      losses.assign(batch.size(), 0.0);
      learner.step(batch, weights, spec, losses);
      return sum(losses);
    });
    if (tracker) tracker->record(*result, train_loss, learner.model);
  }
}

// JTT stage one: plain ERM for T epochs from the identification-stage streams.
Model identification_model(const Dataset& train, const Architecture& arch, const TrainConfig& cfg) {
  Learner id(initial_model(arch, cfg, kIdentificationStage), cfg.id_learning_rate.value_or(cfg.learning_rate),
             cfg.momentum, cfg.id_l2.value_or(cfg.l2), derive_seed(cfg.seed, "shuffle", kIdentificationStage));
  const auto pool = identity_pool(train.size());
  erm_epochs(id, train, pool, cfg.T, cfg.batch_size, nullptr, nullptr);
  return id.model;
}

// JTT stage two with optional error-set refreshes every K epochs.
TrainResult stage_two(const Dataset& train, const Dataset& val, const TrainConfig& cfg,
                      const Architecture& arch, ErrorSet E, std::optional<std::size_t> K) {
  TrainResult result;
  Tracker tracker(val);
  Learner learner = final_learner(arch, cfg);
  auto pool = upsample_indices(train.size(), E, cfg.lambda_up);
  if (E.empty()) result.warnings.push_back("error set is empty; stage two reduces to ERM");

  std::vector<ErrorSet> refreshes;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    erm_epochs(learner, train, pool, 1, cfg.batch_size, &result, &tracker);
    if (K && epoch % *K == 0 && epoch < cfg.epochs) {
      E = compute_error_set(learner.model, train);
      E.source_epoch = cfg.T + epoch;
      pool = upsample_indices(train.size(), E, cfg.lambda_up);
      refreshes.push_back(E);
    }
  }
  result.model = learner.model;
  result.jtt = JttAux{Model{}, std::move(E), std::move(refreshes)};
  return result;
}

TrainResult jtt_impl(const Dataset& train, const Dataset& val, const TrainConfig& cfg,
                     std::optional<std::size_t> K) {
  check_inputs(train, cfg);
  const auto arch = architecture_for(train, val, cfg);
  Model id = identification_model(train, arch, cfg);
  ErrorSet E = compute_error_set(id, train);
  E.source_epoch = cfg.T;
  TrainResult result = stage_two(train, val, cfg, arch, E, K);
  result.jtt->identification_model = std::move(id);
  result.jtt->error_set = std::move(E);
  return result;
}

bool is_binary_grouping(const Dataset& data) {
  return std::all_of(data.examples.begin(), data.examples.end(), [](const Example& e) {
    return e.group && e.group->attribute < 2 && e.label < 2;
  });
}

}  // namespace

// ---------------------------------------------------------------------------
// Algorithms

TrainResult train_erm(const Dataset& train, const Dataset& val, const TrainConfig& cfg) {
  check_inputs(train, cfg);
  const auto arch = architecture_for(train, val, cfg);
  TrainResult result;
  Tracker tracker(val);
  Learner learner = final_learner(arch, cfg);
  const auto pool = identity_pool(train.size());
  erm_epochs(learner, train, pool, cfg.epochs, cfg.batch_size, &result, &tracker);
  result.model = std::move(learner.model);
  return result;
}

TrainResult train_jtt(const Dataset& train, const Dataset& val, const TrainConfig& cfg) {
  return jtt_impl(train, val, cfg, std::nullopt);
}

TrainResult train_jtt_dynamic(const Dataset& train, const Dataset& val, const TrainConfig& cfg) {
  return jtt_impl(train, val, cfg, cfg.K);
}

TrainResult train_jtt_stage_two(const Dataset& train, const Dataset& val, const TrainConfig& cfg,
                                const ErrorSet& E) {
  check_inputs(train, cfg);
  return stage_two(train, val, cfg, architecture_for(train, val, cfg), E, std::nullopt);
}

TrainResult train_cvar(const Dataset& train, const Dataset& val, const TrainConfig& cfg) {
  check_inputs(train, cfg);
  const auto arch = architecture_for(train, val, cfg);
  TrainResult result;
  Tracker tracker(val);
  Learner learner = final_learner(arch, cfg);
  const auto pool = identity_pool(train.size());
  const auto spec = LossSpec::cross_entropy();

  std::vector<double> losses;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double train_loss = run_epoch(pool, cfg.batch_size, learner.shuffle, [&](std::span<const std::size_t> idx) {
      const auto batch = gather(train, idx);
      losses.resize(batch.size());
      for (std::size_t k = 0; k < batch.size(); ++k) {
        losses[k] = loss(forward(learner.model, batch[k].features), batch[k].label, spec);
      }
      const auto weights = cvar_batch_weights(losses, cfg.alpha);
      learner.step(batch, weights, spec);
      return sum(losses);
    });
    tracker.record(result, train_loss, learner.model);
    if (cfg.track_cvar) result.cvar_snapshots.push_back(train_losses(learner.model, train));
  }
  result.model = std::move(learner.model);
  return result;
}

namespace detail {

TrainResult train_lff_with(const Dataset& train, const Dataset& val, const TrainConfig& cfg,
                           const LffWeightFn& weight) {
  check_inputs(train, cfg);
  const auto arch = architecture_for(train, val, cfg);
  TrainResult result;
  Tracker tracker(val);
  Learner debiased = final_learner(arch, cfg);
  // The biased model shares the initialization; it never shuffles on its own.
  Learner biased(debiased.model, cfg.learning_rate, cfg.momentum, cfg.l2, 0);
  const auto pool = identity_pool(train.size());
  const auto ce = LossSpec::cross_entropy();
  const auto gce = LossSpec::gce(cfg.gce_q);

  std::vector<double> uniform;
  std::vector<double> weights;
  std::vector<double> losses;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double train_loss = run_epoch(pool, cfg.batch_size, debiased.shuffle, [&](std::span<const std::size_t> idx) {
      const auto batch = gather(train, idx);
      const double inv = 1.0 / static_cast<double>(batch.size());
      weights.resize(batch.size());
      for (std::size_t k = 0; k < batch.size(); ++k) {
        const double pB = forward(biased.model, batch[k].features)[batch[k].label];
        const double pD = forward(debiased.model, batch[k].features)[batch[k].label];
        weights[k] = weight(pB, pD) * inv;
      }
      uniform.assign(batch.size(), inv);
      losses.assign(batch.size(), 0.0);
      biased.step(batch, uniform, gce);
      debiased.step(batch, weights, ce, losses);
      return sum(losses);
    });
    tracker.record(result, train_loss, debiased.model);
  }
  result.model = std::move(debiased.model);
  return result;
}

}  // namespace detail

TrainResult train_lff(const Dataset& train, const Dataset& val, const TrainConfig& cfg) {
  return detail::train_lff_with(train, val, cfg, lff_weight);
}

TrainResult train_group_dro(const Dataset& train, const Dataset& val, const TrainConfig& cfg) {
  check_inputs(train, cfg);
  if (!train.has_group_annotations()) throw InputError("group DRO needs training group annotations");
  const auto arch = architecture_for(train, val, cfg);
  const auto groups = train.groups();
  std::vector<std::size_t> group_of(train.size());
  for (std::size_t i = 0; i < train.size(); ++i) {
    group_of[i] = static_cast<std::size_t>(
        std::lower_bound(groups.begin(), groups.end(), *train.examples[i].group) - groups.begin());
  }

  TrainResult result;
  Tracker tracker(val);
  Learner learner = final_learner(arch, cfg);
  const auto pool = identity_pool(train.size());
  const auto spec = LossSpec::cross_entropy();
  std::vector<double> q(groups.size(), 1.0 / static_cast<double>(groups.size()));

  std::vector<double> losses;
  std::vector<double> group_loss(groups.size());
  std::vector<std::size_t> group_count(groups.size());
  std::vector<double> weights;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double train_loss = run_epoch(pool, cfg.batch_size, learner.shuffle, [&](std::span<const std::size_t> idx) {
      const auto batch = gather(train, idx);
      losses.resize(batch.size());
      std::fill(group_loss.begin(), group_loss.end(), 0.0);
      std::fill(group_count.begin(), group_count.end(), 0);
      for (std::size_t k = 0; k < batch.size(); ++k) {
        losses[k] = loss(forward(learner.model, batch[k].features), batch[k].label, spec);
        group_loss[group_of[idx[k]]] += losses[k];
        ++group_count[group_of[idx[k]]];
      }
      // Groups missing from the batch keep loss 0.
      for (std::size_t g = 0; g < groups.size(); ++g) {
        if (group_count[g] > 0) group_loss[g] /= static_cast<double>(group_count[g]);
      }
      q = group_dro_update(group_loss, q, cfg.eta_q);
      weights.resize(batch.size());
      for (std::size_t k = 0; k < batch.size(); ++k) {
        const std::size_t g = group_of[idx[k]];
        weights[k] = q[g] / static_cast<double>(group_count[g]);
      }
      learner.step(batch, weights, spec);
      return sum(losses);
    });
    tracker.record(result, train_loss, learner.model);
  }
  result.model = std::move(learner.model);
  result.group_dro = GroupDroAux{groups, q};
  return result;
}

TrainResult train_upsample_minority(const Dataset& train, const Dataset& val, const TrainConfig& cfg) {
  check_inputs(train, cfg);
  if (!train.has_group_annotations()) throw InputError("upsample-minority needs training group annotations");
  if (!is_binary_grouping(train)) throw UnsupportedError("upsample-minority needs binary attributes and labels");

  ErrorSet minority;
  for (std::size_t i = 0; i < train.size(); ++i) {
    if (train.examples[i].group->attribute != train.examples[i].label) minority.indices.push_back(i);
  }
  const auto arch = architecture_for(train, val, cfg);
  TrainResult result;
  Tracker tracker(val);
  Learner learner = final_learner(arch, cfg);
  const auto pool = upsample_indices(train.size(), minority, cfg.lambda_up);
  erm_epochs(learner, train, pool, cfg.epochs, cfg.batch_size, &result, &tracker);
  result.model = std::move(learner.model);
  return result;
}

TrainResult train(const Dataset& train_data, const Dataset& val, const TrainConfig& cfg) {
  if (uses_train_groups(cfg.algorithm)) {
    return cfg.algorithm == Algorithm::group_dro ? train_group_dro(train_data, val, cfg)
                                                 : train_upsample_minority(train_data, val, cfg);
  }
  const Dataset view = strip_group_annotations(train_data);
  switch (cfg.algorithm) {
    case Algorithm::erm: return train_erm(view, val, cfg);
    case Algorithm::jtt: return train_jtt(view, val, cfg);
    case Algorithm::jtt_dynamic: return train_jtt_dynamic(view, val, cfg);
    case Algorithm::cvar: return train_cvar(view, val, cfg);
    case Algorithm::lff: return train_lff(view, val, cfg);
    default: break;
  }
  throw UnsupportedError("unhandled algorithm");
}

}  // namespace grobust
