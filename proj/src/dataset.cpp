#include "grobust/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "grobust/errors.hpp"
#include "grobust/rng.hpp"

namespace grobust {

std::string to_string(const GroupId& g) {
  return "(a=" + std::to_string(g.attribute) + ",y=" + std::to_string(g.label) + ")";
}

bool Dataset::has_group_annotations() const {
  return std::all_of(examples.begin(), examples.end(),
                     [](const Example& e) { return e.group.has_value(); });
}

std::size_t Dataset::feature_dim() const {
  return examples.empty() ? 0 : examples.front().features.size();
}

std::size_t Dataset::num_labels() const {
  std::size_t top = 1;
  for (const auto& e : examples) top = std::max(top, e.label + 1);
  return top;
}

std::vector<GroupId> Dataset::groups() const {
  std::set<GroupId> seen;
  for (const auto& e : examples) {
    if (e.group) seen.insert(*e.group);
  }
  return {seen.begin(), seen.end()};
}

void Dataset::validate() const {
  const std::size_t dim = feature_dim();
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const auto& e = examples[i];
    if (e.features.size() != dim) {
      throw InputError(name + ": example " + std::to_string(i) + " has " +
                       std::to_string(e.features.size()) + " features, expected " +
                       std::to_string(dim));
    }
    if (e.group && e.group->label != e.label) {
      throw InputError(name + ": example " + std::to_string(i) + " has group label " +
                       std::to_string(e.group->label) + " but label " + std::to_string(e.label));
    }
  }
}

void SyntheticSpec::validate() const {
  if (!(majority_fraction > 0.5 && majority_fraction < 1.0)) {
    throw InputError("majority_fraction must lie in (0.5, 1)");
  }
  if (label_balance.size() != 2) throw InputError("label_balance must have two entries");
  double total = 0.0;
  for (const double p : label_balance) {
    if (!(p > 0.0)) throw InputError("label_balance entries must be positive");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-9) throw InputError("label_balance must sum to 1");
  if (!(core_separation > 0.0)) throw InputError("core_separation must be positive");
  if (!(spurious_separation > 0.0)) throw InputError("spurious_separation must be positive");
  if (!(noise_sigma > 0.0)) throw InputError("noise_sigma must be positive");
}

namespace {

constexpr std::size_t kBinary = 2;

std::vector<double> draw_features(const SyntheticSpec& spec, std::size_t label,
                                  std::size_t attribute, Rng& rng) {
  std::vector<double> x;
  x.reserve(2 + spec.noise_dims);
  const double core_mean = (label == 1 ? 0.5 : -0.5) * spec.core_separation;
  const double spur_mean = (attribute == 1 ? 0.5 : -0.5) * spec.spurious_separation;
  x.push_back(rng.normal(core_mean, spec.noise_sigma));
  x.push_back(rng.normal(spur_mean, spec.noise_sigma));
  for (std::size_t k = 0; k < spec.noise_dims; ++k) x.push_back(rng.normal(0.0, spec.noise_sigma));
  return x;
}

Dataset balanced_split(const SyntheticSpec& spec, std::size_t n, const std::string& name,
                       Rng& rng) {
  const std::size_t num_groups = kBinary * kBinary;
  const std::size_t per_group = n / num_groups;
  const std::size_t dropped = n - per_group * num_groups;

  std::vector<GroupId> order;
  order.reserve(per_group * num_groups);
  for (std::size_t a = 0; a < kBinary; ++a) {
    for (std::size_t y = 0; y < kBinary; ++y) order.insert(order.end(), per_group, GroupId{a, y});
  }
  rng.shuffle(std::span<GroupId>(order));

  Dataset data;
  data.name = dropped == 0 ? name : name + "[dropped=" + std::to_string(dropped) + "]";
  data.examples.reserve(order.size());
  for (const GroupId& g : order) {
    data.examples.push_back(Example{draw_features(spec, g.label, g.attribute, rng), g.label, g});
  }
  return data;
}

}  // namespace

Splits generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed) {
  spec.validate();
  Splits out;

  Rng train_rng(derive_seed(seed, "datagen/train"));
  out.train.name = "synthetic-train";
  out.train.examples.reserve(spec.n_train);
  for (std::size_t i = 0; i < spec.n_train; ++i) {
    const std::size_t y = train_rng.uniform() < spec.label_balance[0] ? 0 : 1;
    const std::size_t a = train_rng.bernoulli(spec.majority_fraction) ? y : 1 - y;
    out.train.examples.push_back(Example{draw_features(spec, y, a, train_rng), y, GroupId{a, y}});
  }

  Rng val_rng(derive_seed(seed, "datagen/val"));
  out.val = balanced_split(spec, spec.n_val, "synthetic-val", val_rng);
  Rng test_rng(derive_seed(seed, "datagen/test"));
  out.test = balanced_split(spec, spec.n_test, "synthetic-test", test_rng);
  return out;
}

SyntheticSpec reference_benchmark() { return SyntheticSpec{}; }

Dataset strip_group_annotations(Dataset data) {
  for (auto& e : data.examples) e.group.reset();
  return data;
}

SubsampleResult subsample_validation(const Dataset& val, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw InputError("fraction must lie in (0, 1]");
  if (!val.has_group_annotations()) throw InputError("validation set lacks group annotations");

  const std::size_t m = val.size();
  // Rounded down, at least one example.
  std::size_t keep = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(m) + 1e-9));
  keep = std::clamp<std::size_t>(keep, m == 0 ? 0 : 1, m);

  SubsampleResult result;
  result.data.name = val.name;
  if (keep == m) {
    result.data = val;
  } else {
    std::vector<std::size_t> indices(m);
    for (std::size_t i = 0; i < m; ++i) indices[i] = i;
    Rng rng(derive_seed(seed, "datagen/subsample"));
    for (std::size_t i = 0; i < keep; ++i) std::swap(indices[i], indices[i + rng.below(m - i)]);
    indices.resize(keep);
    std::sort(indices.begin(), indices.end());
    result.data.name = val.name + "[fraction=" + std::to_string(fraction) + "]";
    result.data.examples.reserve(keep);
    for (const std::size_t i : indices) result.data.examples.push_back(val.examples[i]);
  }

  const auto before = val.groups();
  const auto after = result.data.groups();
  std::set_difference(before.begin(), before.end(), after.begin(), after.end(),
                      std::back_inserter(result.missing_groups));
  return result;
}

// ---------------------------------------------------------------------------
// CSV

namespace {

std::vector<std::string> split_row(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) {
    while (!cell.empty() && (cell.back() == ' ' || cell.back() == '\r')) cell.pop_back();
    const auto first = cell.find_first_not_of(' ');
    cells.push_back(first == std::string::npos ? std::string() : cell.substr(first));
  }
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

bool parse_double(const std::string& text, double& value) {
  if (text.empty()) return false;
  const char* begin = text.data();
  if (*begin == '+') ++begin;
  const auto [ptr, ec] = std::from_chars(begin, text.data() + text.size(), value);
  return ec == std::errc() && ptr == text.data() + text.size();
}

bool parse_index(const std::string& text, std::size_t& value) {
  if (text.empty()) return false;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  return ec == std::errc() && ptr == text.data() + text.size();
}

std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, 17);
  return std::string(buf, ptr);
}

}  // namespace

Dataset load_csv(const std::filesystem::path& path, const CsvSchema& schema) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path.string());

  std::string line;
  if (!std::getline(in, line)) throw IngestError(0, "", "missing header row");
  const auto header = split_row(line);
  std::map<std::string, std::size_t> position;
  for (std::size_t c = 0; c < header.size(); ++c) position.emplace(header[c], c);

  auto column_of = [&](const std::string& name) {
    const auto it = position.find(name);
    if (it == position.end()) throw IngestError(0, name, "missing column");
    return it->second;
  };

  const std::size_t label_col = column_of(schema.label_column);
  std::optional<std::size_t> attr_col;
  if (schema.attribute_column) attr_col = column_of(*schema.attribute_column);

  std::vector<std::string> feature_names = schema.feature_columns;
  if (feature_names.empty()) {
    std::map<std::size_t, std::string> numbered;
    for (const auto& name : header) {
      std::size_t k = 0;
      if (name.size() > 1 && name[0] == 'f' && parse_index(name.substr(1), k)) numbered.emplace(k, name);
    }
    for (const auto& [k, name] : numbered) feature_names.push_back(name);
  }
  std::vector<std::size_t> feature_cols;
  for (const auto& name : feature_names) feature_cols.push_back(column_of(name));

  Dataset data;
  data.name = path.stem().string();
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    ++row;
    const auto cells = split_row(line);
    if (cells.size() != header.size()) {
      throw IngestError(row, "", "expected " + std::to_string(header.size()) + " cells, found " +
                                     std::to_string(cells.size()));
    }
    Example e;
    if (!parse_index(cells[label_col], e.label) ||
        (schema.num_labels && e.label >= *schema.num_labels)) {
      throw IngestError(row, schema.label_column, "unknown label value '" + cells[label_col] + "'");
    }
    if (attr_col) {
      std::size_t a = 0;
      if (!parse_index(cells[*attr_col], a)) {
        throw IngestError(row, *schema.attribute_column,
                          "attribute must be a non-negative integer, got '" + cells[*attr_col] + "'");
      }
      e.group = GroupId{a, e.label};
    }
    e.features.reserve(feature_cols.size());
    for (std::size_t k = 0; k < feature_cols.size(); ++k) {
      double v = 0.0;
      if (!parse_double(cells[feature_cols[k]], v)) {
        throw IngestError(row, feature_names[k], "non-numeric feature '" + cells[feature_cols[k]] + "'");
      }
      e.features.push_back(v);
    }
    data.examples.push_back(std::move(e));
  }
  return data;
}

std::string to_csv(const Dataset& data) {
  const bool annotated = !data.empty() && data.has_group_annotations();
  std::string out = "label";
  if (annotated) out += ",attribute";
  for (std::size_t k = 0; k < data.feature_dim(); ++k) out += ",f" + std::to_string(k);
  out += '\n';
  for (const auto& e : data.examples) {
    out += std::to_string(e.label);
    if (annotated) out += "," + std::to_string(e.group->attribute);
    for (const double v : e.features) {
      out += ',';
      out += format_double(v);
    }
    out += '\n';
  }
  return out;
}

void save_csv(const Dataset& data, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  out << to_csv(data);
  if (!out) throw InputError("failed writing " + path.string());
}

}  // namespace grobust
