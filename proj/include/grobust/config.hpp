#pragma once

// Experiment configuration files.
//
// Grammar: one `key = value` per line inside `[section]` blocks; `#` starts a
// comment; blank lines are ignored. Lists are comma separated. Sections:
//
//   [data]      synthetic generator: n_train, n_val, n_test, majority_fraction,
//               label_balance (list), core_separation, spurious_separation,
//               noise_dims, noise_sigma, seed
//   [train]     every TrainConfig field; `algorithm` is required
//   [grid]      TrainConfig field = list of values (sweep axes)
//   [sweep]     criterion (worst-group | average), threads
//   [study]     fractions (list, required), seeds (list)
//   [analysis]  target (a:y | auto), reference_report (path | none), cvar_alpha, seed,
//               modes (list of error-set replacement modes), drop_group (a:y | none),
//               K_values (list, `inf` allowed)
//
// Unknown sections and keys are rejected with the offending line.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "grobust/analysis.hpp"
#include "grobust/dataset.hpp"
#include "grobust/trainers.hpp"
#include "grobust/tuning.hpp"

namespace grobust {

struct DataSection {
  SyntheticSpec spec;
  std::uint64_t seed = 0;
};

struct SweepSection {
  Criterion criterion = Criterion::worst_group;
  std::size_t threads = 1;
};

struct StudySection {
  std::vector<double> fractions;
  std::vector<std::uint64_t> seeds{0};
};

struct AnalysisSection {
  std::optional<GroupId> target;
  std::optional<std::filesystem::path> reference_report;
  double cvar_alpha = 0.2;
  std::uint64_t seed = 0;
  std::vector<ReplaceMode> modes;
  std::optional<GroupId> drop_group;
  std::vector<std::optional<std::size_t>> K_values;  // nullopt = infinity
};

struct ExperimentConfig {
  std::optional<DataSection> data;
  std::optional<TrainConfig> train;
  std::map<std::string, std::vector<std::string>> grid;
  std::optional<SweepSection> sweep;
  std::optional<StudySection> study;
  std::optional<AnalysisSection> analysis;

  // Sections as key -> value text with every default filled in.
  std::map<std::string, std::map<std::string, std::string>> echo() const;
};

ExperimentConfig parse_config_text(const std::string& text);
ExperimentConfig parse_config(const std::filesystem::path& path);

GroupId parse_group(const std::string& text);  // "a:y"

}  // namespace grobust
