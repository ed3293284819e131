#pragma once

// Error-set diagnostics: precision/recall against a target group, per-group
// enrichment, CVaR top-loss set composition, and error-set manipulations.
// All functions read group annotations from the stored training set.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "grobust/dataset.hpp"
#include "grobust/metrics.hpp"
#include "grobust/trainers.hpp"

namespace grobust {

struct ErrorSetStats {
  double precision = 0.0;       // |E ∩ target| / |E|
  double recall = 0.0;          // |E ∩ target| / |target|
  double empirical_rate = 0.0;  // |target| / n
  double enrichment = 0.0;      // precision / empirical_rate
  GroupId target_group;
  std::size_t error_set_size = 0;
  std::size_t target_in_error_set = 0;
  std::size_t target_size = 0;
  bool precision_undefined = false;  // |E| = 0

  bool operator==(const ErrorSetStats&) const = default;
};

ErrorSetStats error_set_stats(const ErrorSet& E, const Dataset& train, const GroupId& target);

struct EnrichmentRow {
  GroupId group;
  std::size_t group_size = 0;
  std::size_t in_error_set = 0;
  double share = 0.0;           // fraction of E in this group
  double empirical_rate = 0.0;  // fraction of train in this group
  double enrichment = 0.0;

  bool operator==(const EnrichmentRow&) const = default;
};

struct EnrichmentTable {
  std::vector<EnrichmentRow> rows;     // enrichment descending, ties by group
  std::vector<GroupId> omitted;        // (a, y) combinations with no training examples

  bool operator==(const EnrichmentTable&) const = default;
};

EnrichmentTable enrichment_table(const ErrorSet& E, const Dataset& train);

struct CompositionPoint {
  std::size_t snapshot = 0;
  std::size_t set_size = 0;
  double precision = 0.0;
  double recall = 0.0;

  bool operator==(const CompositionPoint&) const = default;
};

// Top ceil(alpha * n) losses (ties: lower index) per snapshot, scored against `worst`.
std::vector<CompositionPoint> track_cvar_composition(std::span<const std::vector<double>> snapshots,
                                                     double alpha, const Dataset& train,
                                                     const GroupId& worst);

// Indices of the top ceil(alpha * n) losses, ascending.
std::vector<std::size_t> top_loss_set(std::span<const double> losses, double alpha);

enum class ReplaceMode { swap_same_group, drop_group, drop_y_eq_a, drop_y_neq_a, replace_random };

std::string to_string(ReplaceMode mode);
ReplaceMode parse_replace_mode(const std::string& name);

struct ReplaceResult {
  ErrorSet error_set;
  bool sampled_with_replacement = false;  // some group was too small to swap within
};

// `group` is only read by drop_group.
ReplaceResult replace_error_set(const ErrorSet& E, const Dataset& train, ReplaceMode mode,
                                std::uint64_t seed, const GroupId& group = {});

// CSV renderings (header row first).
std::string to_csv(const EnrichmentTable& table);
std::string to_csv(std::span<const CompositionPoint> series, const ErrorSetStats* reference = nullptr);
std::string to_csv(const GroupMetrics& metrics);

}  // namespace grobust
