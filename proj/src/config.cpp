#include "grobust/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "grobust/errors.hpp"

namespace grobust {

namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::vector<std::string> split_list(const std::string& value) {
  std::vector<std::string> out;
  std::stringstream in(value);
  std::string item;
  while (std::getline(in, item, ',')) out.push_back(trim(item));
  return out;
}

std::string fmt(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

double real_of(const std::string& text) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (text.empty() || ec != std::errc() || ptr != text.data() + text.size() || !std::isfinite(v)) {
    throw InputError("expected a real number, got '" + text + "'");
  }
  return v;
}

template <typename Int>
Int int_of(const std::string& text) {
  Int v = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (text.empty() || ec != std::errc() || ptr != text.data() + text.size()) {
    throw InputError("expected a non-negative integer, got '" + text + "'");
  }
  return v;
}

template <typename T, typename F>
std::string join(const std::vector<T>& items, F&& render) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += ", ";
    out += render(items[i]);
  }
  return out;
}

std::string group_text(const GroupId& g) {
  return std::to_string(g.attribute) + ":" + std::to_string(g.label);
}

struct Entry {
  std::string key;
  std::string value;
  std::size_t line;
};

struct Section {
  std::size_t line = 0;
  std::vector<Entry> entries;
};

using Handler = std::function<void(const std::string& key, const std::string& value)>;

void apply_section(const std::string& name, const Section& section, const std::set<std::string>& known,
                   const Handler& handler) {
  for (const auto& e : section.entries) {
    if (!known.empty() && !known.count(e.key)) {
      throw ParseError(e.key, e.line, "unknown key in [" + name + "]");
    }
    try {
      handler(e.key, e.value);
    } catch (const InputError& err) {
      std::string msg = err.what();
      const std::string prefix = e.key + ": ";
      if (msg.rfind(prefix, 0) == 0) msg = msg.substr(prefix.size());
      throw ParseError(e.key, e.line, msg);
    }
  }
}

void check_range(bool ok, const std::string& what) {
  if (!ok) throw InputError(what);
}

}  // namespace

GroupId parse_group(const std::string& text) {
  const auto colon = text.find(':');
  if (colon == std::string::npos) throw InputError("expected a group as a:y, got '" + text + "'");
  return GroupId{int_of<std::size_t>(trim(text.substr(0, colon))), int_of<std::size_t>(trim(text.substr(colon + 1)))};
}

ExperimentConfig parse_config_text(const std::string& text) {
  std::map<std::string, Section> sections;
  std::string current;
  std::istringstream in(text);
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto hash = raw.find('#');
    const std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ParseError("", line_no, "malformed section header");
      current = trim(line.substr(1, line.size() - 2));
      static const std::set<std::string> kSections{"data", "train", "grid", "sweep", "study", "analysis"};
      if (!kSections.count(current)) throw ParseError(current, line_no, "unknown section");
      if (sections.count(current)) throw ParseError(current, line_no, "duplicate section");
      sections[current].line = line_no;
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError("", line_no, "expected key = value");
    const std::string key = trim(line.substr(0, eq));
    if (current.empty()) throw ParseError(key, line_no, "key outside of any section");
    auto& entries = sections[current].entries;
    for (const auto& e : entries) {
      if (e.key == key) throw ParseError(key, line_no, "duplicate key");
    }
    entries.push_back(Entry{key, trim(line.substr(eq + 1)), line_no});
  }

  ExperimentConfig cfg;

  if (const auto it = sections.find("data"); it != sections.end()) {
    DataSection data;
    auto& s = data.spec;
    apply_section("data", it->second,
                  {"n_train", "n_val", "n_test", "majority_fraction", "label_balance", "core_separation",
                   "spurious_separation", "noise_dims", "noise_sigma", "seed"},
                  [&](const std::string& k, const std::string& v) {
                    if (k == "n_train") s.n_train = int_of<std::size_t>(v);
                    else if (k == "n_val") s.n_val = int_of<std::size_t>(v);
                    else if (k == "n_test") s.n_test = int_of<std::size_t>(v);
                    else if (k == "majority_fraction") {
                      s.majority_fraction = real_of(v);
                      check_range(s.majority_fraction > 0.5 && s.majority_fraction < 1.0, "must lie in (0.5, 1)");
                    } else if (k == "label_balance") {
                      s.label_balance.clear();
                      for (const auto& p : split_list(v)) s.label_balance.push_back(real_of(p));
                      double total = 0.0;
                      for (const double p : s.label_balance) {
                        check_range(p > 0.0, "entries must be positive");
                        total += p;
                      }
                      check_range(s.label_balance.size() == 2, "needs exactly two entries");
                      check_range(std::abs(total - 1.0) < 1e-9, "entries must sum to 1");
                    } else if (k == "core_separation") {
                      s.core_separation = real_of(v);
                      check_range(s.core_separation > 0.0, "must be positive");
                    } else if (k == "spurious_separation") {
                      s.spurious_separation = real_of(v);
                      check_range(s.spurious_separation > 0.0, "must be positive");
                    } else if (k == "noise_dims") s.noise_dims = int_of<std::size_t>(v);
                    else if (k == "noise_sigma") {
                      s.noise_sigma = real_of(v);
                      check_range(s.noise_sigma > 0.0, "must be positive");
                    } else if (k == "seed") data.seed = int_of<std::uint64_t>(v);
                  });
    cfg.data = data;
  }

  if (const auto it = sections.find("train"); it != sections.end()) {
    TrainConfig train;
    bool has_algorithm = false;
    apply_section("train", it->second, {}, [&](const std::string& k, const std::string& v) {
      if (!is_config_field(k)) throw InputError("unknown key in [train]");
      if (k == "algorithm") has_algorithm = true;
      set_field(train, k, v);
    });
    if (!has_algorithm) throw ParseError("algorithm", it->second.line, "missing required field in [train]");
    cfg.train = train;
  }

  if (const auto it = sections.find("grid"); it != sections.end()) {
    TrainConfig probe;
    apply_section("grid", it->second, {}, [&](const std::string& k, const std::string& v) {
      if (!is_config_field(k)) throw InputError("unknown key in [grid]");
      auto values = split_list(v);
      if (values.empty() || (values.size() == 1 && values[0].empty())) throw InputError("axis has no values");
      for (const auto& value : values) {
        TrainConfig scratch = probe;
        set_field(scratch, k, value);
      }
      cfg.grid[k] = std::move(values);
    });
  }

  if (const auto it = sections.find("sweep"); it != sections.end()) {
    SweepSection sweep;
    apply_section("sweep", it->second, {"criterion", "threads"}, [&](const std::string& k, const std::string& v) {
      if (k == "criterion") sweep.criterion = parse_criterion(v);
      else sweep.threads = int_of<std::size_t>(v);
    });
    cfg.sweep = sweep;
  }

  if (const auto it = sections.find("study"); it != sections.end()) {
    StudySection study;
    bool has_fractions = false;
    apply_section("study", it->second, {"fractions", "seeds"}, [&](const std::string& k, const std::string& v) {
      if (k == "fractions") {
        has_fractions = true;
        study.fractions.clear();
        for (const auto& f : split_list(v)) {
          const double x = real_of(f);
          check_range(x > 0.0 && x <= 1.0, "fractions must lie in (0, 1]");
          study.fractions.push_back(x);
        }
      } else {
        study.seeds.clear();
        for (const auto& s : split_list(v)) study.seeds.push_back(int_of<std::uint64_t>(s));
      }
    });
    if (!has_fractions) throw ParseError("fractions", it->second.line, "missing required field in [study]");
    cfg.study = study;
  }

  if (const auto it = sections.find("analysis"); it != sections.end()) {
    AnalysisSection analysis;
    apply_section("analysis", it->second,
                  {"target", "reference_report", "cvar_alpha", "seed", "modes", "drop_group", "K_values"},
                  [&](const std::string& k, const std::string& v) {
                    if (k == "target") {
                      if (v == "auto") analysis.target.reset();
                      else analysis.target = parse_group(v);
                    } else if (k == "reference_report") {
                      if (v == "none") analysis.reference_report.reset();
                      else analysis.reference_report = v;
                    }
                    else if (k == "cvar_alpha") {
                      analysis.cvar_alpha = real_of(v);
                      check_range(analysis.cvar_alpha > 0.0 && analysis.cvar_alpha <= 1.0, "must lie in (0, 1]");
                    } else if (k == "seed") analysis.seed = int_of<std::uint64_t>(v);
                    else if (k == "modes") {
                      analysis.modes.clear();
                      for (const auto& m : split_list(v)) analysis.modes.push_back(parse_replace_mode(m));
                    } else if (k == "drop_group") {
                      if (v == "none") analysis.drop_group.reset();
                      else analysis.drop_group = parse_group(v);
                    }
                    else if (k == "K_values") {
                      analysis.K_values.clear();
                      for (const auto& kv : split_list(v)) {
                        if (kv == "inf") {
                          analysis.K_values.emplace_back(std::nullopt);
                        } else {
                          const auto K = int_of<std::size_t>(kv);
                          check_range(K >= 1, "K values must be at least 1");
                          analysis.K_values.emplace_back(K);
                        }
                      }
                    }
                  });
    for (const auto m : analysis.modes) {
      if (m == ReplaceMode::drop_group && !analysis.drop_group) {
        throw ParseError("drop_group", it->second.line, "mode drop-group needs drop_group = a:y");
      }
    }
    cfg.analysis = analysis;
  }
  return cfg;
}

ExperimentConfig parse_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("", 0, "cannot open config file " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_config_text(buffer.str());
}

std::map<std::string, std::map<std::string, std::string>> ExperimentConfig::echo() const {
  std::map<std::string, std::map<std::string, std::string>> out;
  if (data) {
    const auto& s = data->spec;
    out["data"] = {
        {"n_train", std::to_string(s.n_train)},
        {"n_val", std::to_string(s.n_val)},
        {"n_test", std::to_string(s.n_test)},
        {"majority_fraction", fmt(s.majority_fraction)},
        {"label_balance", join(s.label_balance, fmt)},
        {"core_separation", fmt(s.core_separation)},
        {"spurious_separation", fmt(s.spurious_separation)},
        {"noise_dims", std::to_string(s.noise_dims)},
        {"noise_sigma", fmt(s.noise_sigma)},
        {"seed", std::to_string(data->seed)},
    };
  }
  if (train) {
    for (const auto& [k, v] : config_fields(*train)) out["train"][k] = v;
  }
  for (const auto& [k, values] : grid) out["grid"][k] = join(values, [](const std::string& s) { return s; });
  if (sweep) {
    out["sweep"] = {{"criterion", to_string(sweep->criterion)}, {"threads", std::to_string(sweep->threads)}};
  }
  if (study) {
    out["study"] = {{"fractions", join(study->fractions, fmt)},
                    {"seeds", join(study->seeds, [](std::uint64_t s) { return std::to_string(s); })}};
  }
  if (analysis) {
    auto& a = out["analysis"];
    a["target"] = analysis->target ? group_text(*analysis->target) : "auto";
    a["reference_report"] = analysis->reference_report ? analysis->reference_report->string() : "none";
    a["cvar_alpha"] = fmt(analysis->cvar_alpha);
    a["seed"] = std::to_string(analysis->seed);
    a["modes"] = join(analysis->modes, [](ReplaceMode m) { return to_string(m); });
    a["drop_group"] = analysis->drop_group ? group_text(*analysis->drop_group) : "none";
    a["K_values"] = join(analysis->K_values,
                         [](const std::optional<std::size_t>& K) { return K ? std::to_string(*K) : std::string("inf"); });
  }
  return out;
}

}  // namespace grobust
