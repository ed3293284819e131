#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "grobust/model.hpp"

namespace grobust {

// A group g = (a, y): spurious attribute a, label y. Ordered by (a, y).
struct GroupId {
  std::size_t attribute = 0;
  std::size_t label = 0;

  auto operator<=>(const GroupId&) const = default;
};

std::string to_string(const GroupId& g);

struct Example {
  std::vector<double> features;
  std::size_t label = 0;
  std::optional<GroupId> group;

  Sample sample() const { return Sample{features, label}; }
  bool operator==(const Example&) const = default;
};

struct Dataset {
  std::string name;
  std::vector<Example> examples;

  std::size_t size() const { return examples.size(); }
  bool empty() const { return examples.empty(); }

  // True iff every example carries a group.
  bool has_group_annotations() const;

  std::size_t feature_dim() const;

  // 1 + largest label, at least 2.
  std::size_t num_labels() const;

  // Distinct groups present, ascending.
  std::vector<GroupId> groups() const;

  // Throws InputError on ragged features or a group whose label disagrees.
  void validate() const;

  bool operator==(const Dataset&) const = default;
};

struct SyntheticSpec {
  std::size_t n_train = 3000;
  std::size_t n_val = 600;
  std::size_t n_test = 2000;
  double majority_fraction = 0.95;
  std::vector<double> label_balance{0.5, 0.5};
  double core_separation = 2.0;
  double spurious_separation = 4.0;
  std::size_t noise_dims = 8;
  double noise_sigma = 1.0;

  void validate() const;
};

struct Splits {
  Dataset train;
  Dataset val;
  Dataset test;
};

// Binary label y and binary attribute a. Features are
// [core ~ N(+-core/2 by y), spurious ~ N(+-spurious/2 by a), noise_dims x N(0)],
// all with standard deviation noise_sigma. Train follows label_balance with
// a = y at rate majority_fraction; val and test hold equal counts per group.
Splits generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed);

// The fixed benchmark used by the acceptance suite.
SyntheticSpec reference_benchmark();

Dataset strip_group_annotations(Dataset data);

struct SubsampleResult {
  Dataset data;
  std::vector<GroupId> missing_groups;  // present in the input, absent after sampling
};

// floor(fraction * m) examples (at least 1) drawn without replacement, input order kept.
SubsampleResult subsample_validation(const Dataset& val, double fraction, std::uint64_t seed);

struct CsvSchema {
  std::string label_column = "label";
  std::optional<std::string> attribute_column;
  std::vector<std::string> feature_columns;  // empty: every column named f<k>, by k
  std::optional<std::size_t> num_labels;     // labels must be below this when set
};

Dataset load_csv(const std::filesystem::path& path, const CsvSchema& schema);

// Header `label[,attribute],f0..fk`; doubles printed with 17 significant digits.
std::string to_csv(const Dataset& data);
void save_csv(const Dataset& data, const std::filesystem::path& path);

}  // namespace grobust
