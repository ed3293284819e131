#include "grobust/cli.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "grobust/analysis.hpp"
#include "grobust/config.hpp"
#include "grobust/errors.hpp"
#include "grobust/report.hpp"
#include "grobust/trainers.hpp"
#include "grobust/tuning.hpp"

namespace grobust {

namespace {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

class UsageError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

struct Options {
  std::string command;
  fs::path config;
  fs::path out;
  fs::path data;
  std::optional<std::uint64_t> seed;
};

std::string fmt(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

json group_json(const GroupId& g) { return {{"attribute", g.attribute}, {"label", g.label}}; }

json fields_json(const TrainConfig& cfg) {
  json out = json::object();
  for (const auto& [k, v] : config_fields(cfg)) out[k] = v;
  return out;
}

json selection_json(const Selection& s) {
  return {{"epoch", s.epoch ? json(*s.epoch) : json(nullptr)},
          {"val_worst_group", s.val_worst_group},
          {"val_average", s.val_average},
          {"test_worst_group", s.test_worst_group},
          {"test_average", s.test_average}};
}

json stats_json(const ErrorSetStats& s) {
  return {{"target_group", group_json(s.target_group)},
          {"error_set_size", s.error_set_size},
          {"target_size", s.target_size},
          {"target_in_error_set", s.target_in_error_set},
          {"precision", s.precision},
          {"precision_undefined", s.precision_undefined},
          {"recall", s.recall},
          {"empirical_rate", s.empirical_rate},
          {"enrichment", s.enrichment}};
}

json dataset_json(const Dataset& d) {
  json groups = json::array();
  if (d.has_group_annotations()) {
    std::map<GroupId, std::size_t> counts;
    for (const auto& e : d.examples) ++counts[*e.group];
    for (const auto& [g, c] : counts) {
      json row = group_json(g);
      row["count"] = c;
      groups.push_back(row);
    }
  }
  return {{"size", d.size()},
          {"features", d.empty() ? 0 : d.feature_dim()},
          {"annotated", d.has_group_annotations()},
          {"fingerprint", fingerprint(d)},
          {"groups", groups}};
}

// Output staging: everything goes to <out>.partial until commit().
class Staging {
public:
  explicit Staging(fs::path final_dir) : final_(std::move(final_dir)) {
    if (final_.empty()) throw UsageError("--out is required");
    if (fs::exists(final_)) throw UsageError("output directory already exists: " + final_.string());
    partial_ = final_;
    partial_ += ".partial";
    fs::remove_all(partial_);
    fs::create_directories(partial_);
  }
  ~Staging() {
    if (!committed_) {
      std::error_code ec;
      fs::remove_all(partial_, ec);
    }
  }
  Staging(const Staging&) = delete;
  Staging& operator=(const Staging&) = delete;

  fs::path path(const std::string& name) {
    outputs_.push_back(name);
    return partial_ / name;
  }
  std::vector<std::string> outputs() const {
    auto sorted = outputs_;
    std::sort(sorted.begin(), sorted.end());
    return sorted;
  }
  void commit() {
    fs::rename(partial_, final_);
    committed_ = true;
  }

private:
  fs::path final_;
  fs::path partial_;
  std::vector<std::string> outputs_;
  bool committed_ = false;
};

struct Run {
  const Options& opt;
  ExperimentConfig cfg;
  Staging stage;
  json report;
  std::vector<std::string> warnings;

  void warn(const std::string& prefix, const std::vector<std::string>& ws) {
    for (const auto& w : ws) warnings.push_back(prefix.empty() ? w : prefix + ": " + w);
  }
  void write(const std::string& name, const std::string& text) { write_text(stage.path(name), text); }
};

Splits load_splits(const fs::path& dir) {
  if (dir.empty()) throw UsageError("--data is required for this command");
  Splits s;
  auto load = [&](const std::string& name) {
    const fs::path path = dir / (name + ".csv");
    if (!fs::exists(path)) throw InputError("missing dataset file " + path.string());
    std::ifstream in(path);
    std::string header;
    std::getline(in, header);
    CsvSchema schema;
    std::stringstream cols(header);
    std::string col;
    while (std::getline(cols, col, ',')) {
      if (!col.empty() && col.back() == '\r') col.pop_back();
      if (col == "attribute") schema.attribute_column = "attribute";
    }
    Dataset d = load_csv(path, schema);
    d.name = name;
    return d;
  };
  s.train = load("train");
  s.val = load("val");
  s.test = load("test");
  if (s.train.feature_dim() != s.val.feature_dim() || s.train.feature_dim() != s.test.feature_dim()) {
    throw InputError("splits disagree on the number of features");
  }
  return s;
}

void record_datasets(Run& run, const Splits& s) {
  run.report["datasets"] = {{"train", dataset_json(s.train)}, {"val", dataset_json(s.val)}, {"test", dataset_json(s.test)}};
}

const TrainConfig& require_train(const ExperimentConfig& cfg) {
  if (!cfg.train) throw ParseError("train", 0, "this command needs a [train] section");
  return *cfg.train;
}

std::string history_csv(const std::vector<EpochRecord>& history) {
  std::string out = "epoch,train_loss,val_worst_group,val_average\n";
  for (std::size_t e = 0; e < history.size(); ++e) {
    const auto& h = history[e];
    out += std::to_string(e) + "," + fmt(h.train_loss) + "," + (h.val_worst_group ? fmt(*h.val_worst_group) : "") +
           "," + (h.val_average ? fmt(*h.val_average) : "") + "\n";
  }
  return out;
}

std::string error_set_csv(const ErrorSet& E) {
  std::string out = "index\n";
  for (const auto i : E.indices) out += std::to_string(i) + "\n";
  return out;
}

const Model& selected_model(const TrainResult& r, Criterion c) {
  const auto& cp = c == Criterion::worst_group ? r.best_worst_group : r.best_average;
  return cp ? cp->model : r.model;
}

// Worst test group of the ERM reference, or the configured/reported one.
GroupId resolve_target(Run& run, const TrainConfig& base, const Splits& s) {
  json ref;
  GroupId target;
  const auto& a = run.cfg.analysis;
  if (a && a->target) {
    target = *a->target;
    ref["source"] = "config";
  } else if (a && a->reference_report) {
    const json other = read_report(*a->reference_report);
    try {
      const auto& g = other.at("metrics").at("test").at("worst_group");
      target = GroupId{g.at("attribute").get<std::size_t>(), g.at("label").get<std::size_t>()};
    } catch (const json::exception&) {
      throw InputError("reference report has no metrics.test.worst_group: " + a->reference_report->string());
    }
    ref["source"] = "report";
    ref["path"] = a->reference_report->string();
  } else {
    TrainConfig erm = base;
    erm.algorithm = Algorithm::erm;
    const TrainResult r = train(s.train, s.val, erm);
    const auto t = evaluate_groups(selected_model(r, Criterion::worst_group), s.test);
    target = t.worst_group;
    ref["source"] = "erm-run";
    ref["selection"] = selection_json(select_checkpoint(r, Criterion::worst_group, s.val, s.test));
    run.warn("reference", r.warnings);
  }
  ref["target_group"] = group_json(target);
  run.report["diagnostics"]["reference"] = ref;
  return target;
}

void error_set_diagnostics(Run& run, const TrainConfig& base, const Splits& s, const JttAux& jtt) {
  run.write("error_set.csv", error_set_csv(jtt.error_set));
  if (!s.train.has_group_annotations()) {
    run.warnings.push_back("training set has no group annotations; error-set statistics skipped");
    return;
  }
  const GroupId target = resolve_target(run, base, s);
  const auto stats = error_set_stats(jtt.error_set, s.train, target);
  run.report["diagnostics"]["error_set"] = stats_json(stats);
  const auto table = enrichment_table(jtt.error_set, s.train);
  run.write("enrichment.csv", to_csv(table));
  if (!table.omitted.empty()) {
    json omitted = json::array();
    for (const auto& g : table.omitted) omitted.push_back(group_json(g));
    run.report["diagnostics"]["enrichment_omitted"] = omitted;
  }
}

void model_metrics(Run& run, const TrainResult& r, const Splits& s) {
  const Model& best = selected_model(r, Criterion::worst_group);
  const auto val = evaluate_groups(best, s.val);
  const auto test = evaluate_groups(best, s.test);
  run.report["metrics"] = {
      {"selection_criterion", "worst-group"},
      {"selected_epoch", r.best_worst_group ? json(r.best_worst_group->epoch) : json(nullptr)},
      {"val", to_json(val)},
      {"test", to_json(test)},
      {"selected_by_average", selection_json(select_checkpoint(r, Criterion::average, s.val, s.test))},
      {"final", {{"val", to_json(evaluate_groups(r.model, s.val))}, {"test", to_json(evaluate_groups(r.model, s.test))}}},
  };
  run.write("val_groups.csv", to_csv(val));
  run.write("test_groups.csv", to_csv(test));
  run.write("history.csv", history_csv(r.history));
  save_checkpoint(r.model, run.stage.path("model_final.ckpt"));
  save_checkpoint(best, run.stage.path("model_selected.ckpt"));
}

void cmd_generate(Run& run) {
  if (!run.cfg.data) throw ParseError("data", 0, "generate needs a [data] section");
  const auto& d = *run.cfg.data;
  const Splits s = generate_synthetic(d.spec, d.seed);
  save_csv(s.train, run.stage.path("train.csv"));
  save_csv(s.val, run.stage.path("val.csv"));
  save_csv(s.test, run.stage.path("test.csv"));
  record_datasets(run, s);
  for (const auto* split : {&s.val, &s.test}) {
    const auto pos = split->name.find("[dropped=");
    if (pos != std::string::npos) run.warnings.push_back(split->name + ": remainder dropped to balance groups");
  }
}

void cmd_train(Run& run) {
  const TrainConfig& tc = require_train(run.cfg);
  const Splits s = load_splits(run.opt.data);
  record_datasets(run, s);
  const TrainResult r = train(s.train, s.val, tc);
  run.warn("", r.warnings);
  model_metrics(run, r, s);
  if (r.jtt) {
    save_checkpoint(r.jtt->identification_model, run.stage.path("model_identification.ckpt"));
    error_set_diagnostics(run, tc, s, *r.jtt);
    if (tc.algorithm == Algorithm::jtt_dynamic) {
      json sizes = json::array();
      for (const auto& E : r.jtt->refreshes) sizes.push_back({{"epoch", E.source_epoch}, {"size", E.size()}});
      run.report["diagnostics"]["refreshes"] = sizes;
    }
  }
  if (r.group_dro) {
    json weights = json::array();
    for (std::size_t g = 0; g < r.group_dro->groups.size(); ++g) {
      json row = group_json(r.group_dro->groups[g]);
      row["weight"] = r.group_dro->weights[g];
      weights.push_back(row);
    }
    run.report["diagnostics"]["group_weights"] = weights;
  }
  if (tc.algorithm == Algorithm::cvar && tc.track_cvar && s.train.has_group_annotations()) {
    const GroupId target = resolve_target(run, tc, s);
    const auto series = track_cvar_composition(r.cvar_snapshots, tc.alpha, s.train, target);
    run.write("cvar_composition.csv", to_csv(series));
  }
}

Grid make_grid(const ExperimentConfig& cfg) {
  Grid grid;
  if (cfg.train) grid.base = *cfg.train;
  grid.axes = cfg.grid;
  return grid;
}

SweepOptions sweep_options(const ExperimentConfig& cfg) {
  return SweepOptions{cfg.sweep ? cfg.sweep->threads : std::size_t{1}};
}

void cmd_sweep(Run& run) {
  const Splits s = load_splits(run.opt.data);
  record_datasets(run, s);
  const Criterion criterion = run.cfg.sweep ? run.cfg.sweep->criterion : Criterion::worst_group;
  const SweepResult r = grid_sweep(make_grid(run.cfg), s.train, s.val, s.test, criterion, sweep_options(run.cfg));
  run.write("sweep.csv", to_csv(r));
  auto best = [&](std::size_t i, Criterion c) {
    return json{{"index", i}, {"config", fields_json(r.rows[i].config)}, {"selection", selection_json(r.rows[i].selected(c))}};
  };
  run.report["metrics"] = {{"criterion", to_string(r.criterion)},
                           {"rows", r.rows.size()},
                           {"best_by_worst_group", best(r.best_by_worst_group, Criterion::worst_group)},
                           {"best_by_average", best(r.best_by_average, Criterion::average)}};
  for (std::size_t i = 0; i < r.rows.size(); ++i) run.warn("row " + std::to_string(i), r.rows[i].warnings);
}

void cmd_val_study(Run& run) {
  if (!run.cfg.study) throw ParseError("study", 0, "val-study needs a [study] section");
  const Splits s = load_splits(run.opt.data);
  record_datasets(run, s);
  const auto& st = *run.cfg.study;
  const auto rows =
      validation_size_study(st.fractions, make_grid(run.cfg), s.train, s.val, s.test, st.seeds, sweep_options(run.cfg));
  run.write("val_study.csv", to_csv(rows));
  json out = json::array();
  for (const auto& row : rows) {
    out.push_back({{"fraction", row.fraction},
                   {"val_size", row.val_size},
                   {"test_worst_group", row.test_worst_group},
                   {"median_test_worst_group", row.median_test_worst_group}});
    run.warn("fraction " + fmt(row.fraction), row.warnings);
  }
  run.report["metrics"] = {{"rows", out}};
}

const TrainConfig& require_jtt(const ExperimentConfig& cfg) {
  const TrainConfig& tc = require_train(cfg);
  if (tc.algorithm != Algorithm::jtt && tc.algorithm != Algorithm::jtt_dynamic) {
    throw ParseError("algorithm", 0, "this command needs algorithm = jtt or jtt-dynamic");
  }
  return tc;
}

void cmd_analyze(Run& run) {
  const TrainConfig& tc = require_jtt(run.cfg);
  const Splits s = load_splits(run.opt.data);
  if (!s.train.has_group_annotations()) throw InputError("analyze needs group annotations on the training set");
  record_datasets(run, s);
  const TrainResult r = train(s.train, s.val, tc);
  run.warn("jtt", r.warnings);
  model_metrics(run, r, s);
  save_checkpoint(r.jtt->identification_model, run.stage.path("model_identification.ckpt"));
  error_set_diagnostics(run, tc, s, *r.jtt);
  const GroupId target{run.report["diagnostics"]["reference"]["target_group"]["attribute"].get<std::size_t>(),
                       run.report["diagnostics"]["reference"]["target_group"]["label"].get<std::size_t>()};
  const auto jtt_stats = error_set_stats(r.jtt->error_set, s.train, target);

  TrainConfig cv = tc;
  cv.algorithm = Algorithm::cvar;
  cv.alpha = run.cfg.analysis ? run.cfg.analysis->cvar_alpha : 0.2;
  cv.track_cvar = true;
  const TrainResult c = train(s.train, s.val, cv);
  run.warn("cvar", c.warnings);
  const auto series = track_cvar_composition(c.cvar_snapshots, cv.alpha, s.train, target);
  run.write("cvar_composition.csv", to_csv(series, &jtt_stats));
  if (!series.empty()) {
    const auto& last = series.back();
    run.report["diagnostics"]["cvar_composition"] = {{"alpha", cv.alpha},
                                                      {"snapshots", series.size()},
                                                      {"final_set_size", last.set_size},
                                                      {"final_precision", last.precision},
                                                      {"final_recall", last.recall}};
  }
}

void cmd_ablate(Run& run) {
  const TrainConfig& tc = require_jtt(run.cfg);
  const Splits s = load_splits(run.opt.data);
  if (!s.train.has_group_annotations()) throw InputError("ablate needs group annotations on the training set");
  record_datasets(run, s);
  const AnalysisSection a = run.cfg.analysis.value_or(AnalysisSection{});
  const TrainResult r = train(s.train, s.val, tc);
  run.warn("unmodified", r.warnings);
  const ErrorSet& E = r.jtt->error_set;
  const Selection base = select_checkpoint(r, Criterion::worst_group, s.val, s.test);

  std::string csv = "mode,error_set_size,sampled_with_replacement,epoch,val_worst_group,val_average,"
                    "test_worst_group,test_average\n";
  auto csv_row = [&](const std::string& mode, std::size_t size, bool with_replacement, const Selection& sel) {
    csv += mode + "," + std::to_string(size) + "," + (with_replacement ? "true" : "false") + "," +
           (sel.epoch ? std::to_string(*sel.epoch) : "") + "," + fmt(sel.val_worst_group) + "," +
           fmt(sel.val_average) + "," + fmt(sel.test_worst_group) + "," + fmt(sel.test_average) + "\n";
  };
  csv_row("unmodified", E.size(), false, base);

  json modes = json::array();
  const Dataset stripped = strip_group_annotations(s.train);
  for (const auto mode : a.modes) {
    const auto rep = replace_error_set(E, s.train, mode, a.seed, a.drop_group.value_or(GroupId{}));
    const TrainResult m = train_jtt_stage_two(stripped, s.val, tc, rep.error_set);
    run.warn(to_string(mode), m.warnings);
    if (rep.sampled_with_replacement) run.warnings.push_back(to_string(mode) + ": sampled with replacement");
    const Selection sel = select_checkpoint(m, Criterion::worst_group, s.val, s.test);
    csv_row(to_string(mode), rep.error_set.size(), rep.sampled_with_replacement, sel);
    modes.push_back({{"mode", to_string(mode)},
                     {"error_set_size", rep.error_set.size()},
                     {"selection", selection_json(sel)},
                     {"delta_test_worst_group", sel.test_worst_group - base.test_worst_group}});
  }
  run.write("ablation.csv", csv);
  run.report["metrics"] = {{"unmodified", {{"error_set_size", E.size()}, {"selection", selection_json(base)}}}};
  run.report["diagnostics"]["ablations"] = modes;

  if (!a.K_values.empty()) {
    std::string kcsv = "K,refreshes,epoch,val_worst_group,test_worst_group,test_average\n";
    json ks = json::array();
    for (const auto& K : a.K_values) {
      TrainConfig dyn = tc;
      dyn.algorithm = Algorithm::jtt_dynamic;
      dyn.K = K;
      const TrainResult d = train(s.train, s.val, dyn);
      const std::string label = K ? std::to_string(*K) : "inf";
      run.warn("K=" + label, d.warnings);
      const Selection sel = select_checkpoint(d, Criterion::worst_group, s.val, s.test);
      const std::size_t refreshes = d.jtt ? d.jtt->refreshes.size() : 0;
      kcsv += label + "," + std::to_string(refreshes) + "," + (sel.epoch ? std::to_string(*sel.epoch) : "") + "," +
              fmt(sel.val_worst_group) + "," + fmt(sel.test_worst_group) + "," + fmt(sel.test_average) + "\n";
      ks.push_back({{"K", label}, {"refreshes", refreshes}, {"selection", selection_json(sel)}});
    }
    run.write("dynamic_k.csv", kcsv);
    run.report["diagnostics"]["dynamic_k"] = ks;
  }
}

void apply_seed_override(const Options& opt, ExperimentConfig& cfg) {
  if (!opt.seed) return;
  if (opt.command == "generate") {
    if (cfg.data) cfg.data->seed = *opt.seed;
  } else if (cfg.train) {
    cfg.train->seed = *opt.seed;
  } else {
    TrainConfig tc;
    tc.seed = *opt.seed;
    cfg.train = tc;
  }
}

void execute(const Options& opt, std::ostream& out) {
  const auto started = std::chrono::steady_clock::now();
  const std::string started_utc = utc_now();
  ExperimentConfig cfg = parse_config(opt.config);
  apply_seed_override(opt, cfg);
  Run run{opt, cfg, Staging(opt.out), json::object(), {}};
  run.report["schema"] = kReportSchema;
  run.report["version"] = GROBUST_VERSION;
  run.report["command"] = opt.command;
  run.report["config"] = run.cfg.echo();
  run.report["datasets"] = json::object();
  run.report["metrics"] = json::object();
  run.report["diagnostics"] = json::object();

  if (opt.command == "generate") cmd_generate(run);
  else if (opt.command == "train") cmd_train(run);
  else if (opt.command == "sweep") cmd_sweep(run);
  else if (opt.command == "analyze") cmd_analyze(run);
  else if (opt.command == "ablate") cmd_ablate(run);
  else if (opt.command == "val-study") cmd_val_study(run);
  else throw UsageError("unknown command " + opt.command);

  const auto outputs = run.stage.outputs();
  run.report["outputs"] = outputs;
  run.report["warnings"] = run.warnings;
  const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  run.report["wall_clock"] = {{"started_utc", started_utc}, {"elapsed_seconds", elapsed}};
  write_text(run.stage.path("report.json"), run.report.dump(2) + "\n");
  run.stage.commit();
  out << (opt.out / "report.json").string() << "\n";
}

void error_block(std::ostream& err, const std::string& command, const std::string& kind, const std::string& message,
                 json extra = json::object()) {
  json block = {{"kind", kind}, {"command", command}, {"message", message}};
  for (auto& [k, v] : extra.items()) block[k] = v;
  err << json{{"error", block}}.dump() << "\n";
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Group-robust training experiments"};
  app.require_subcommand(1);
  Options opt;
  std::uint64_t seed = 0;
  const std::vector<std::pair<std::string, std::string>> commands{
      {"generate", "write synthetic train/val/test splits"},
      {"train", "train one configuration"},
      {"sweep", "grid sweep with early stopping"},
      {"analyze", "error-set and CVaR composition diagnostics"},
      {"ablate", "error-set replacement and refresh ablations"},
      {"val-study", "validation-set size study"},
  };
  for (const auto& [name, help] : commands) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--config", opt.config, "configuration file")->required();
    sub->add_option("--out", opt.out, "output directory (must not exist)")->required();
    sub->add_option("--seed", seed, "overrides the configured seed");
    if (name != "generate") sub->add_option("--data", opt.data, "directory with train.csv, val.csv, test.csv")->required();
  }

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    error_block(err, "", "usage", e.what());
    return 1;
  }
  for (auto* sub : app.get_subcommands()) {
    opt.command = sub->get_name();
    if (sub->count("--seed")) opt.seed = seed;
  }

  try {
    execute(opt, out);
    return 0;
  } catch (const ParseError& e) {
    error_block(err, opt.command, "config", e.what(), {{"key", e.key()}, {"line", e.line()}});
    return 1;
  } catch (const UsageError& e) {
    error_block(err, opt.command, "usage", e.what());
    return 1;
  } catch (const IngestError& e) {
    error_block(err, opt.command, "ingest", e.what(), {{"row", e.row()}, {"column", e.column()}});
    return 2;
  } catch (const UnsupportedError& e) {
    error_block(err, opt.command, "unsupported", e.what());
    return 2;
  } catch (const InputError& e) {
    error_block(err, opt.command, "input", e.what());
    return 2;
  } catch (const std::exception& e) {
    error_block(err, opt.command, "runtime", e.what());
    return 2;
  }
}

int run_cli(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run_cli(args, std::cout, std::cerr);
}

}  // namespace grobust
