#pragma once

// Grid sweeps with selection and early stopping on validation metrics.

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "grobust/dataset.hpp"
#include "grobust/trainers.hpp"

namespace grobust {

enum class Criterion { worst_group, average };

std::string to_string(Criterion criterion);
Criterion parse_criterion(const std::string& name);

struct Grid {
  TrainConfig base;
  // Field name -> values, applied with set_field. Enumerated with axes in
  // name order, the first axis varying slowest; values in the given order.
  std::map<std::string, std::vector<std::string>> axes;

  std::vector<TrainConfig> enumerate() const;
};

// Epoch (0-based) maximizing the criterion; ties go to the earliest epoch.
std::size_t early_stop(std::span<const EpochRecord> history, Criterion criterion);

// Metrics of one early-stopped checkpoint.
struct Selection {
  std::optional<std::size_t> epoch;  // nullopt: no epochs ran, the initialization was scored
  double val_worst_group = 0.0;
  double val_average = 0.0;
  double test_worst_group = 0.0;
  double test_average = 0.0;

  bool operator==(const Selection&) const = default;
};

// Scores the run's best checkpoint under the criterion (the final model when
// no epoch ran) on val and test.
Selection select_checkpoint(const TrainResult& result, Criterion criterion, const Dataset& val,
                            const Dataset& test);

struct SweepRow {
  TrainConfig config;
  Selection by_worst_group;  // early-stopped on validation worst-group accuracy
  Selection by_average;      // early-stopped on validation average accuracy
  std::vector<std::string> warnings;

  const Selection& selected(Criterion c) const {
    return c == Criterion::worst_group ? by_worst_group : by_average;
  }
  bool operator==(const SweepRow&) const = default;
};

struct SweepResult {
  Criterion criterion = Criterion::worst_group;
  std::vector<SweepRow> rows;           // enumeration order
  std::size_t best_by_worst_group = 0;  // argmax of by_worst_group.val_worst_group
  std::size_t best_by_average = 0;      // argmax of by_average.val_average

  const SweepRow& best() const {
    return rows[criterion == Criterion::worst_group ? best_by_worst_group : best_by_average];
  }
  bool operator==(const SweepResult&) const = default;
};

struct SweepOptions {
  std::size_t threads = 0;  // 0: hardware concurrency
};

// Trains every grid point (through train(), so group access follows the
// algorithm), early-stops each run under both criteria and fills both best
// indices. `criterion` picks which selection best() and the CSV report lead with.
SweepResult grid_sweep(const Grid& grid, const Dataset& train, const Dataset& val, const Dataset& test,
                       Criterion criterion, const SweepOptions& options = {});

// Index of the best row under the criterion, ties to the earliest row.
std::size_t select_best(std::span<const SweepRow> rows, Criterion criterion);

struct StudyRow {
  double fraction = 1.0;
  std::vector<double> test_worst_group;  // per seed, from the worst-group-selected config
  std::vector<std::size_t> val_size;     // per seed
  double median_test_worst_group = 0.0;
  std::vector<std::string> warnings;

  bool operator==(const StudyRow&) const = default;
};

// For each fraction and seed: subsample the validation set, sweep on it,
// score the selected configuration on the full test set.
std::vector<StudyRow> validation_size_study(std::span<const double> fractions, const Grid& grid,
                                            const Dataset& train, const Dataset& val, const Dataset& test,
                                            std::span<const std::uint64_t> seeds,
                                            const SweepOptions& options = {});

double median(std::vector<double> values);

std::string to_csv(const SweepResult& result);
std::string to_csv(std::span<const StudyRow> rows);

}  // namespace grobust
