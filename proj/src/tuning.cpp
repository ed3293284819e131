#include "grobust/tuning.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <exception>
#include <mutex>
#include <thread>

#include "grobust/errors.hpp"
#include "grobust/metrics.hpp"

namespace grobust {

std::string to_string(Criterion criterion) {
  return criterion == Criterion::worst_group ? "worst-group" : "average";
}

Criterion parse_criterion(const std::string& name) {
  if (name == "worst-group") return Criterion::worst_group;
  if (name == "average") return Criterion::average;
  throw InputError("criterion: expected worst-group or average, got '" + name + "'");
}

std::vector<TrainConfig> Grid::enumerate() const {
  std::vector<TrainConfig> configs{base};
  for (const auto& [name, values] : axes) {
    if (values.empty()) throw InputError("grid axis '" + name + "' has no values");
    std::vector<TrainConfig> next;
    next.reserve(configs.size() * values.size());
    for (const auto& cfg : configs) {
      for (const auto& v : values) {
        TrainConfig c = cfg;
        set_field(c, name, v);
        next.push_back(std::move(c));
      }
    }
    configs = std::move(next);
  }
  return configs;
}

std::size_t early_stop(std::span<const EpochRecord> history, Criterion criterion) {
  if (history.empty()) throw InputError("early_stop: empty history");
  const auto metric = [&](const EpochRecord& r) {
    const auto& v = criterion == Criterion::worst_group ? r.val_worst_group : r.val_average;
    if (!v) throw InputError("early_stop: history lacks validation metrics");
    return *v;
  };
  std::size_t best = 0;
  for (std::size_t e = 1; e < history.size(); ++e) {
    if (metric(history[e]) > metric(history[best])) best = e;
  }
  return best;
}

namespace {

Selection score(const std::optional<Checkpoint>& checkpoint, const TrainResult& result,
                const Dataset& val, const Dataset& test) {
  Selection s;
  const Model* model = &result.model;
  if (checkpoint) {
    s.epoch = checkpoint->epoch;
    model = &checkpoint->model;
  }
  const auto v = evaluate_groups(*model, val);
  const auto t = evaluate_groups(*model, test);
  s.val_worst_group = v.worst_group_accuracy;
  s.val_average = v.average_accuracy;
  s.test_worst_group = t.worst_group_accuracy;
  s.test_average = t.average_accuracy;
  return s;
}

SweepRow run_point(const TrainConfig& cfg, const Dataset& train, const Dataset& val, const Dataset& test) {
  const TrainResult result = grobust::train(train, val, cfg);
  SweepRow row;
  row.config = cfg;
  row.by_worst_group = select_checkpoint(result, Criterion::worst_group, val, test);
  row.by_average = select_checkpoint(result, Criterion::average, val, test);
  row.warnings = result.warnings;
  return row;
}

std::string fmt(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

}  // namespace

Selection select_checkpoint(const TrainResult& result, Criterion criterion, const Dataset& val,
                            const Dataset& test) {
  return score(criterion == Criterion::worst_group ? result.best_worst_group : result.best_average, result, val,
               test);
}

std::size_t select_best(std::span<const SweepRow> rows, Criterion criterion) {
  if (rows.empty()) throw InputError("select_best: no rows");
  const auto metric = [&](const SweepRow& r) {
    return criterion == Criterion::worst_group ? r.by_worst_group.val_worst_group : r.by_average.val_average;
  };
  std::size_t best = 0;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    if (metric(rows[i]) > metric(rows[best])) best = i;
  }
  return best;
}

SweepResult grid_sweep(const Grid& grid, const Dataset& train, const Dataset& val, const Dataset& test,
                       Criterion criterion, const SweepOptions& options) {
  if (!val.has_group_annotations() || val.empty()) throw InputError("sweep needs an annotated validation set");
  if (!test.has_group_annotations() || test.empty()) throw InputError("sweep needs an annotated test set");
  const auto configs = grid.enumerate();
  if (configs.empty()) throw InputError("empty grid");

  SweepResult result;
  result.criterion = criterion;
  result.rows.resize(configs.size());

  std::size_t threads = options.threads ? options.threads : std::max(1u, std::thread::hardware_concurrency());
  threads = std::min(threads, configs.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  const auto worker = [&] {
    for (std::size_t i = next++; i < configs.size(); i = next++) {
      try {
        result.rows[i] = run_point(configs[i], train, val, test);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
  }
  if (failure) std::rethrow_exception(failure);

  result.best_by_worst_group = select_best(result.rows, Criterion::worst_group);
  result.best_by_average = select_best(result.rows, Criterion::average);
  return result;
}

double median(std::vector<double> values) {
  if (values.empty()) throw InputError("median of an empty list");
  std::sort(values.begin(), values.end());
  const std::size_t mid = values.size() / 2;
  return values.size() % 2 ? values[mid] : 0.5 * (values[mid - 1] + values[mid]);
}

std::vector<StudyRow> validation_size_study(std::span<const double> fractions, const Grid& grid,
                                            const Dataset& train, const Dataset& val, const Dataset& test,
                                            std::span<const std::uint64_t> seeds, const SweepOptions& options) {
  if (seeds.empty()) throw InputError("validation_size_study: no seeds");
  std::vector<StudyRow> rows;
  for (const double fraction : fractions) {
    StudyRow row;
    row.fraction = fraction;
    for (const std::uint64_t seed : seeds) {
      const auto sub = subsample_validation(val, fraction, seed);
      for (const auto& g : sub.missing_groups) {
        row.warnings.push_back("seed " + std::to_string(seed) + ": group " + to_string(g) +
                               " missing from reduced validation set");
      }
      const auto sweep = grid_sweep(grid, train, sub.data, test, Criterion::worst_group, options);
      row.test_worst_group.push_back(sweep.rows[sweep.best_by_worst_group].by_worst_group.test_worst_group);
      row.val_size.push_back(sub.data.size());
    }
    row.median_test_worst_group = median(row.test_worst_group);
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string to_csv(const SweepResult& result) {
  std::string out;
  const auto header = config_fields(TrainConfig{});
  for (const auto& [name, value] : header) out += name + ",";
  const auto lead = result.criterion;
  const auto other = lead == Criterion::worst_group ? Criterion::average : Criterion::worst_group;
  const auto prefix = [](Criterion c) { return c == Criterion::worst_group ? std::string("wg_") : std::string("avg_"); };
  for (const auto c : {lead, other}) {
    const auto p = prefix(c);
    out += p + "selected_epoch," + p + "val_worst_group," + p + "val_average," + p + "test_worst_group," + p +
           "test_average,";
  }
  out += "best_by_worst_group,best_by_average\n";
  for (std::size_t i = 0; i < result.rows.size(); ++i) {
    const auto& row = result.rows[i];
    for (const auto& [name, value] : config_fields(row.config)) out += value + ",";
    for (const auto c : {lead, other}) {
      const auto& s = row.selected(c);
      out += (s.epoch ? std::to_string(*s.epoch) : std::string("init")) + "," + fmt(s.val_worst_group) + "," +
             fmt(s.val_average) + "," + fmt(s.test_worst_group) + "," + fmt(s.test_average) + ",";
    }
    out += std::string(i == result.best_by_worst_group ? "1" : "0") + "," + (i == result.best_by_average ? "1" : "0") + "\n";
  }
  return out;
}

std::string to_csv(std::span<const StudyRow> rows) {
  std::string out = "fraction,seeds,median_test_worst_group,per_seed_test_worst_group,per_seed_val_size\n";
  for (const auto& r : rows) {
    std::string per_seed;
    std::string sizes;
    for (std::size_t i = 0; i < r.test_worst_group.size(); ++i) {
      if (i) {
        per_seed += ';';
        sizes += ';';
      }
      per_seed += fmt(r.test_worst_group[i]);
      sizes += std::to_string(r.val_size[i]);
    }
    out += fmt(r.fraction) + "," + std::to_string(r.test_worst_group.size()) + "," + fmt(r.median_test_worst_group) +
           "," + per_seed + "," + sizes + "\n";
  }
  return out;
}

}  // namespace grobust
