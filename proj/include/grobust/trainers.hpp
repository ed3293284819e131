#pragma once

// Training algorithms: ERM, JTT and its dynamic-error-set variant, CVaR DRO,
// LfF, group DRO, and upsample-minority.
//
// Seeding: every run derives its random streams from TrainConfig::seed with
// derive_seed(seed, tag, stage). The trained (final) model always uses
// stage 0 for both "init" and "shuffle"; JTT's identification model uses
// stage 1. LfF's biased model starts from a copy of the debiased model's
// initialization and shares its batch order. Reductions such as
// JTT(lambda_up = 1) == ERM therefore hold bit for bit under the same seed.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "grobust/dataset.hpp"
#include "grobust/metrics.hpp"
#include "grobust/model.hpp"

namespace grobust {

enum class Algorithm { erm, jtt, jtt_dynamic, cvar, lff, group_dro, upsample_minority };

std::string to_string(Algorithm algorithm);
Algorithm parse_algorithm(const std::string& name);

// Only group-dro and upsample-minority may see training group annotations.
bool uses_train_groups(Algorithm algorithm);

struct TrainConfig {
  Algorithm algorithm = Algorithm::erm;
  std::size_t epochs = 20;
  std::size_t batch_size = 64;
  double learning_rate = 0.01;
  double momentum = 0.9;
  double l2 = 0.0;
  std::uint64_t seed = 0;
  std::vector<std::size_t> hidden;  // hidden widths; empty = logistic

  std::size_t T = 1;                   // identification epochs (jtt, jtt-dynamic)
  std::size_t lambda_up = 1;           // upsampling factor (jtt, jtt-dynamic, upsample-minority)
  std::optional<std::size_t> K;        // epochs per error-set refresh; nullopt = infinity
  double alpha = 0.2;                  // cvar level
  double gce_q = 0.7;                  // lff
  double eta_q = 0.01;                 // group-dro adversary step size

  // Stage-one overrides for the identification model; fall back to the shared values.
  std::optional<double> id_learning_rate;
  std::optional<double> id_l2;

  bool track_cvar = false;  // record per-epoch train losses during cvar

  // Throws InputError naming the first out-of-range field.
  void validate() const;

  bool operator==(const TrainConfig&) const = default;
};

// Field-name access shared by configuration files and sweep grids.
// set_field throws InputError for unknown names or unparsable/out-of-range values.
void set_field(TrainConfig& cfg, const std::string& name, const std::string& value);
std::vector<std::pair<std::string, std::string>> config_fields(const TrainConfig& cfg);
bool is_config_field(const std::string& name);

struct ErrorSet {
  std::vector<std::size_t> indices;  // ascending
  std::size_t source_epoch = 0;

  std::size_t size() const { return indices.size(); }
  bool empty() const { return indices.empty(); }
  bool operator==(const ErrorSet&) const = default;
};

// Indices whose argmax prediction differs from the label.
ErrorSet compute_error_set(const Model& model, const Dataset& train);

// Indices of the upsampled multiset: 0..n-1, then (lambda_up - 1) passes over E.
std::vector<std::size_t> upsample_indices(std::size_t n, const ErrorSet& E, std::size_t lambda_up);

// Originals in order followed by (lambda_up - 1) copies of E's examples.
Dataset build_upsampled(const Dataset& train, const ErrorSet& E, std::size_t lambda_up);

struct EpochRecord {
  double train_loss = 0.0;  // mean unweighted cross-entropy over the epoch's visits
  std::optional<double> val_worst_group;
  std::optional<double> val_average;

  bool operator==(const EpochRecord&) const = default;
};

struct Checkpoint {
  std::size_t epoch = 0;  // 0-based index into history
  Model model;

  bool operator==(const Checkpoint&) const = default;
};

struct JttAux {
  Model identification_model;
  ErrorSet error_set;
  std::vector<ErrorSet> refreshes;  // jtt-dynamic only, in order

  bool operator==(const JttAux&) const = default;
};

struct GroupDroAux {
  std::vector<GroupId> groups;
  std::vector<double> weights;

  bool operator==(const GroupDroAux&) const = default;
};

struct TrainResult {
  Model model;  // after the last epoch
  std::vector<EpochRecord> history;
  // Best-so-far checkpoints by validation worst-group and average accuracy;
  // present when the validation set is annotated and at least one epoch ran.
  std::optional<Checkpoint> best_worst_group;
  std::optional<Checkpoint> best_average;
  std::optional<JttAux> jtt;
  std::optional<GroupDroAux> group_dro;
  std::vector<std::vector<double>> cvar_snapshots;  // per epoch, one loss per train example
  std::vector<std::string> warnings;

  bool operator==(const TrainResult&) const = default;
};

TrainResult train_erm(const Dataset& train, const Dataset& val, const TrainConfig& cfg);
TrainResult train_jtt(const Dataset& train, const Dataset& val, const TrainConfig& cfg);
TrainResult train_jtt_dynamic(const Dataset& train, const Dataset& val, const TrainConfig& cfg);
TrainResult train_cvar(const Dataset& train, const Dataset& val, const TrainConfig& cfg);
TrainResult train_lff(const Dataset& train, const Dataset& val, const TrainConfig& cfg);
TrainResult train_group_dro(const Dataset& train, const Dataset& val, const TrainConfig& cfg);
TrainResult train_upsample_minority(const Dataset& train, const Dataset& val, const TrainConfig& cfg);

// JTT stage two on a caller-supplied error set (error-set ablations).
TrainResult train_jtt_stage_two(const Dataset& train, const Dataset& val, const TrainConfig& cfg,
                                const ErrorSet& E);

// Dispatches on cfg.algorithm. Algorithms that may not see training groups
// receive a stripped copy of `train`.
TrainResult train(const Dataset& train, const Dataset& val, const TrainConfig& cfg);

// Maximizer of the batch CVaR objective over the capped simplex: cap
// 1/(alpha B) on the highest losses (ties: lower index first), the leftover
// mass on the next one. Weights sum to 1.
std::vector<double> cvar_batch_weights(std::span<const double> losses, double alpha);

// log pB / (log pB + log pD), inputs clamped into [kProbFloor, 1 - 1e-12].
double lff_weight(double pB, double pD);

// Exponentiated-gradient step w_g <- w_g exp(eta_q loss_g), renormalized.
std::vector<double> group_dro_update(std::span<const double> group_losses,
                                     std::span<const double> weights, double eta_q);

namespace detail {
// LfF with a replaceable per-example weight rule (pB, pD) -> W.
using LffWeightFn = std::function<double(double, double)>;
TrainResult train_lff_with(const Dataset& train, const Dataset& val, const TrainConfig& cfg,
                           const LffWeightFn& weight);
}  // namespace detail

}  // namespace grobust
