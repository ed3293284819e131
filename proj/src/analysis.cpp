#include "grobust/analysis.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>
#include <numeric>
#include <set>

#include "grobust/errors.hpp"
#include "grobust/rng.hpp"

namespace grobust {

namespace {

void require_annotated(const Dataset& train) {
  if (!train.has_group_annotations()) throw InputError(train.name + ": analysis needs group annotations");
}

void check_indices(const ErrorSet& E, std::size_t n) {
  for (const std::size_t i : E.indices) {
    if (i >= n) throw InputError("error set index " + std::to_string(i) + " out of range");
  }
}

std::string fmt(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

double ratio(std::size_t num, std::size_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

ErrorSetStats error_set_stats(const ErrorSet& E, const Dataset& train, const GroupId& target) {
  require_annotated(train);
  check_indices(E, train.size());
  ErrorSetStats s;
  s.target_group = target;
  s.error_set_size = E.size();
  for (const auto& e : train.examples) s.target_size += (*e.group == target);
  for (const std::size_t i : E.indices) s.target_in_error_set += (*train.examples[i].group == target);
  s.precision_undefined = E.empty();
  s.precision = ratio(s.target_in_error_set, s.error_set_size);
  s.recall = ratio(s.target_in_error_set, s.target_size);
  s.empirical_rate = ratio(s.target_size, train.size());
  s.enrichment = s.empirical_rate > 0.0 ? s.precision / s.empirical_rate : 0.0;
  return s;
}

EnrichmentTable enrichment_table(const ErrorSet& E, const Dataset& train) {
  require_annotated(train);
  check_indices(E, train.size());
  std::map<GroupId, std::pair<std::size_t, std::size_t>> tally;  // (group size, in E)
  std::set<std::size_t> attributes;
  std::set<std::size_t> labels;
  for (const auto& e : train.examples) {
    ++tally[*e.group].first;
    attributes.insert(e.group->attribute);
    labels.insert(e.label);
  }
  for (const std::size_t i : E.indices) ++tally[*train.examples[i].group].second;

  EnrichmentTable table;
  for (const std::size_t a : attributes) {
    for (const std::size_t y : labels) {
      if (!tally.count(GroupId{a, y})) table.omitted.push_back(GroupId{a, y});
    }
  }
  for (const auto& [g, t] : tally) {
    EnrichmentRow row;
    row.group = g;
    row.group_size = t.first;
    row.in_error_set = t.second;
    row.share = ratio(t.second, E.size());
    row.empirical_rate = ratio(t.first, train.size());
    row.enrichment = row.share / row.empirical_rate;
    table.rows.push_back(row);
  }
  std::stable_sort(table.rows.begin(), table.rows.end(),
                   [](const EnrichmentRow& a, const EnrichmentRow& b) { return a.enrichment > b.enrichment; });
  return table;
}

std::vector<std::size_t> top_loss_set(std::span<const double> losses, double alpha) {
  if (!(alpha > 0.0 && alpha <= 1.0)) throw InputError("alpha must lie in (0, 1]");
  const std::size_t n = losses.size();
  const auto k = std::min<std::size_t>(
      n, static_cast<std::size_t>(std::ceil(alpha * static_cast<double>(n) * (1.0 - 1e-12))));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return losses[a] > losses[b]; });
  order.resize(k);
  std::sort(order.begin(), order.end());
  return order;
}

std::vector<CompositionPoint> track_cvar_composition(std::span<const std::vector<double>> snapshots,
                                                     double alpha, const Dataset& train,
                                                     const GroupId& worst) {
  require_annotated(train);
  std::vector<CompositionPoint> series;
  for (std::size_t s = 0; s < snapshots.size(); ++s) {
    if (snapshots[s].size() != train.size()) throw InputError("snapshot length differs from training set size");
    ErrorSet top{top_loss_set(snapshots[s], alpha), s};
    const auto stats = error_set_stats(top, train, worst);
    series.push_back(CompositionPoint{s, top.size(), stats.precision, stats.recall});
  }
  return series;
}

std::string to_string(ReplaceMode mode) {
  switch (mode) {
    case ReplaceMode::swap_same_group: return "swap-same-group";
    case ReplaceMode::drop_group: return "drop-group";
    case ReplaceMode::drop_y_eq_a: return "drop-y-eq-a";
    case ReplaceMode::drop_y_neq_a: return "drop-y-neq-a";
    case ReplaceMode::replace_random: return "replace-random";
  }
  return "unknown";
}

ReplaceMode parse_replace_mode(const std::string& name) {
  for (const auto mode : {ReplaceMode::swap_same_group, ReplaceMode::drop_group, ReplaceMode::drop_y_eq_a,
                          ReplaceMode::drop_y_neq_a, ReplaceMode::replace_random}) {
    if (to_string(mode) == name) return mode;
  }
  throw InputError("unknown error-set replacement mode '" + name + "'");
}

namespace {

// k distinct draws from `pool`; with replacement when the pool is too small.
std::vector<std::size_t> draw(const std::vector<std::size_t>& pool, std::size_t k, Rng& rng, bool& fallback) {
  std::vector<std::size_t> out;
  if (pool.empty()) return out;
  if (k > pool.size()) {
    fallback = true;
    for (std::size_t i = 0; i < k; ++i) out.push_back(pool[rng.below(pool.size())]);
    return out;
  }
  std::vector<std::size_t> work = pool;
  for (std::size_t i = 0; i < k; ++i) std::swap(work[i], work[i + rng.below(work.size() - i)]);
  out.assign(work.begin(), work.begin() + static_cast<std::ptrdiff_t>(k));
  return out;
}

}  // namespace

ReplaceResult replace_error_set(const ErrorSet& E, const Dataset& train, ReplaceMode mode,
                                std::uint64_t seed, const GroupId& group) {
  require_annotated(train);
  check_indices(E, train.size());
  const bool binary_mode = mode == ReplaceMode::drop_y_eq_a || mode == ReplaceMode::drop_y_neq_a;
  if (binary_mode) {
    for (const auto& e : train.examples) {
      if (e.group->attribute > 1 || e.label > 1) {
        throw UnsupportedError(to_string(mode) + " needs binary attributes and labels");
      }
    }
  }

  Rng rng(derive_seed(seed, "analysis/replace"));
  ReplaceResult result;
  result.error_set.source_epoch = E.source_epoch;
  auto& out = result.error_set.indices;
  const auto g_of = [&](std::size_t i) { return *train.examples[i].group; };

  switch (mode) {
    case ReplaceMode::swap_same_group: {
      std::map<GroupId, std::size_t> wanted;
      for (const std::size_t i : E.indices) ++wanted[g_of(i)];
      std::map<GroupId, std::vector<std::size_t>> members;
      for (std::size_t i = 0; i < train.size(); ++i) members[g_of(i)].push_back(i);
      for (const auto& [g, k] : wanted) {
        const auto picked = draw(members[g], k, rng, result.sampled_with_replacement);
        out.insert(out.end(), picked.begin(), picked.end());
      }
      break;
    }
    case ReplaceMode::drop_group:
      for (const std::size_t i : E.indices) {
        if (g_of(i) != group) out.push_back(i);
      }
      break;
    case ReplaceMode::drop_y_eq_a:
      for (const std::size_t i : E.indices) {
        if (g_of(i).attribute != train.examples[i].label) out.push_back(i);
      }
      break;
    case ReplaceMode::drop_y_neq_a:
      for (const std::size_t i : E.indices) {
        if (g_of(i).attribute == train.examples[i].label) out.push_back(i);
      }
      break;
    case ReplaceMode::replace_random: {
      std::vector<std::size_t> all(train.size());
      std::iota(all.begin(), all.end(), std::size_t{0});
      out = draw(all, E.size(), rng, result.sampled_with_replacement);
      break;
    }
  }
  std::sort(out.begin(), out.end());
  return result;
}

std::string to_csv(const EnrichmentTable& table) {
  std::string out = "attribute,label,group_size,in_error_set,share,empirical_rate,enrichment\n";
  for (const auto& r : table.rows) {
    out += std::to_string(r.group.attribute) + "," + std::to_string(r.group.label) + "," +
           std::to_string(r.group_size) + "," + std::to_string(r.in_error_set) + "," + fmt(r.share) + "," +
           fmt(r.empirical_rate) + "," + fmt(r.enrichment) + "\n";
  }
  return out;
}

std::string to_csv(std::span<const CompositionPoint> series, const ErrorSetStats* reference) {
  std::string out = "snapshot,set_size,precision,recall";
  if (reference) out += ",reference_precision,reference_recall";
  out += "\n";
  for (const auto& p : series) {
    out += std::to_string(p.snapshot) + "," + std::to_string(p.set_size) + "," + fmt(p.precision) + "," +
           fmt(p.recall);
    if (reference) out += "," + fmt(reference->precision) + "," + fmt(reference->recall);
    out += "\n";
  }
  return out;
}

std::string to_csv(const GroupMetrics& metrics) {
  std::string out = "attribute,label,count,accuracy\n";
  for (const auto& [g, s] : metrics.per_group) {
    out += std::to_string(g.attribute) + "," + std::to_string(g.label) + "," + std::to_string(s.count) + "," +
           fmt(s.accuracy) + "\n";
  }
  return out;
}

}  // namespace grobust
