#include "grobust/metrics.hpp"

#include "grobust/errors.hpp"

namespace grobust {

GroupMetrics summarize_groups(std::map<GroupId, GroupStat> per_group) {
  if (per_group.empty()) throw InputError("no groups to summarize");
  GroupMetrics m;
  m.per_group = std::move(per_group);
  double correct = 0.0;
  double total = 0.0;
  bool first = true;
  for (const auto& [g, stat] : m.per_group) {
    correct += static_cast<double>(stat.count) * stat.accuracy;
    total += static_cast<double>(stat.count);
    // Map iteration is ascending in (a, y), so strict < keeps the smallest id.
    if (first || stat.accuracy < m.worst_group_accuracy) {
      m.worst_group_accuracy = stat.accuracy;
      m.worst_group = g;
      first = false;
    }
  }
  m.average_accuracy = total > 0.0 ? correct / total : 0.0;
  return m;
}

GroupMetrics evaluate_groups(const Model& model, const Dataset& data) {
  if (data.empty()) throw InputError(data.name + ": cannot evaluate on an empty dataset");
  if (!data.has_group_annotations()) {
    throw InputError(data.name + ": evaluation needs group annotations");
  }
  std::map<GroupId, std::pair<std::size_t, std::size_t>> tally;  // (count, correct)
  for (const auto& e : data.examples) {
    auto& [count, correct] = tally[*e.group];
    ++count;
    if (predict(model, e.features) == e.label) ++correct;
  }
  std::map<GroupId, GroupStat> per_group;
  for (const auto& [g, t] : tally) {
    per_group.emplace(g, GroupStat{t.first, static_cast<double>(t.second) / static_cast<double>(t.first)});
  }
  return summarize_groups(std::move(per_group));
}

}  // namespace grobust
