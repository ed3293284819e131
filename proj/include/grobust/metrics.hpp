#pragma once

#include <cstddef>
#include <map>

#include "grobust/dataset.hpp"
#include "grobust/model.hpp"

namespace grobust {

struct GroupStat {
  std::size_t count = 0;
  double accuracy = 0.0;

  bool operator==(const GroupStat&) const = default;
};

struct GroupMetrics {
  std::map<GroupId, GroupStat> per_group;
  double average_accuracy = 0.0;      // count-weighted over groups
  double worst_group_accuracy = 0.0;  // min over groups
  GroupId worst_group;                // smallest (a, y) among the minimizers

  bool operator==(const GroupMetrics&) const = default;
};

// Builds the summary fields from per-group counts and accuracies.
GroupMetrics summarize_groups(std::map<GroupId, GroupStat> per_group);

// Zero-one accuracy per group. Throws InputError on unannotated data.
GroupMetrics evaluate_groups(const Model& model, const Dataset& data);

}  // namespace grobust
