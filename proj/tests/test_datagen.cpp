#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>

#include "grobust/dataset.hpp"
#include "grobust/errors.hpp"
#include "grobust/report.hpp"
#include "oracles.hpp"

using namespace grobust;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "grobust_test_datagen";
  fs::create_directories(dir);
  return dir / name;
}

void write(const fs::path& p, const std::string& text) {
  std::ofstream out(p);
  out << text;
}

std::map<GroupId, std::size_t> group_counts(const Dataset& d) {
  std::map<GroupId, std::size_t> c;
  for (const auto& e : d.examples) ++c[*e.group];
  return c;
}

}  // namespace

TEST_CASE("generation is deterministic per seed") {
  const auto spec = reference_benchmark();
  const auto a = generate_synthetic(spec, 3);
  const auto b = generate_synthetic(spec, 3);
  const auto c = generate_synthetic(spec, 4);
  CHECK(a.train == b.train);
  CHECK(a.val == b.val);
  CHECK(a.test == b.test);
  CHECK_FALSE(a.train == c.train);
  CHECK(fingerprint(a.train) == fingerprint(b.train));
}

TEST_CASE("reference benchmark shape") {
  const auto spec = reference_benchmark();
  CHECK(spec.n_train == 3000);
  CHECK(spec.n_val == 600);
  CHECK(spec.n_test == 2000);
  CHECK(spec.core_separation < spec.spurious_separation);
  const auto s = generate_synthetic(spec, 0);
  CHECK(s.train.size() == 3000);
  CHECK(s.train.feature_dim() == 10);
  CHECK(s.train.has_group_annotations());
  for (const auto& [g, n] : group_counts(s.val)) CHECK(n == 150);
  for (const auto& [g, n] : group_counts(s.test)) CHECK(n == 500);
  for (const auto& e : s.train.examples) CHECK(e.group->label == e.label);
}

TEST_CASE("minority counts within 4 sigma") {
  auto spec = reference_benchmark();
  spec.n_train = 2000;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto counts = group_counts(generate_synthetic(spec, seed).train);
    // per label: n_y ~ 1000, minority ~ Binomial(n_y, 0.05)
    for (std::size_t y = 0; y < 2; ++y) {
      const std::size_t minority = counts[GroupId{1 - y, y}];
      const double n_y = static_cast<double>(counts[GroupId{y, y}] + minority);
      const double mean = 0.05 * n_y, sd = std::sqrt(n_y * 0.05 * 0.95);
      CHECK(std::abs(static_cast<double>(minority) - mean) <= 4 * sd);
    }
  }
}

TEST_CASE("group proportions converge at n = 100000") {
  auto spec = reference_benchmark();
  spec.n_train = 100000;
  spec.n_val = 4;
  spec.n_test = 4;
  auto counts = group_counts(generate_synthetic(spec, 1).train);
  for (std::size_t y = 0; y < 2; ++y) {
    const double n_y = static_cast<double>(counts[GroupId{0, y}] + counts[GroupId{1, y}]);
    CHECK(std::abs(counts[GroupId{y, y}] / n_y - 0.95) < 0.01);
    CHECK(std::abs(n_y / 100000.0 - 0.5) < 0.01);
  }
}

TEST_CASE("core-only classifier has the same Bayes accuracy on every group") {
  auto spec = reference_benchmark();
  spec.n_test = 200000;
  spec.n_train = 4;
  spec.n_val = 4;
  const auto test = generate_synthetic(spec, 5).test;
  const double bayes = oracle::Phi(spec.core_separation / (2 * spec.noise_sigma));
  std::map<GroupId, std::pair<std::size_t, std::size_t>> hits;
  for (const auto& e : test.examples) {
    const std::size_t pred = e.features[0] > 0 ? 1 : 0;
    auto& h = hits[*e.group];
    h.first += pred == e.label;
    ++h.second;
  }
  CHECK(hits.size() == 4);
  for (const auto& [g, h] : hits) {
    const double acc = static_cast<double>(h.first) / h.second;
    const double sd = std::sqrt(bayes * (1 - bayes) / h.second);
    CHECK(std::abs(acc - bayes) < 4 * sd);
  }
}

TEST_CASE("balanced splits drop the remainder and say so") {
  auto spec = reference_benchmark();
  spec.n_val = 602;
  const auto s = generate_synthetic(spec, 0);
  CHECK(s.val.size() == 600);
  CHECK(s.val.name.find("[dropped=2]") != std::string::npos);
}

TEST_CASE("invalid specs are rejected") {
  auto spec = reference_benchmark();
  spec.majority_fraction = 0.4;
  CHECK_THROWS_AS(generate_synthetic(spec, 0), InputError);
  spec = reference_benchmark();
  spec.label_balance = {0.7, 0.7};
  CHECK_THROWS_AS(generate_synthetic(spec, 0), InputError);
}

TEST_CASE("csv loading") {
  const auto path = scratch("three.csv");
  write(path, "label,attribute,f0,f1\n0,0,1.5,2\n1,0,-1,0.25\n1,1,3,4\n");
  CsvSchema schema;
  schema.attribute_column = "attribute";
  const auto d = load_csv(path, schema);
  CHECK(d.size() == 3);
  CHECK(d.has_group_annotations());
  CHECK(d.examples[1].features == std::vector<double>{-1.0, 0.25});
  CHECK(*d.examples[2].group == GroupId{1, 1});

  const auto plain = load_csv(path, CsvSchema{});
  CHECK_FALSE(plain.has_group_annotations());
  CHECK(plain.feature_dim() == 2);
}

TEST_CASE("csv errors name row and column") {
  const auto path = scratch("bad.csv");
  write(path, "label,f0\n0,1\n1,abc\n");
  try {
    load_csv(path, CsvSchema{});
    FAIL("expected an ingestion error");
  } catch (const IngestError& e) {
    CHECK(e.row() == 2);
    CHECK(e.column() == "f0");
  }

  write(path, "label,f0\n0,1\n");
  CsvSchema missing;
  missing.attribute_column = "attribute";
  CHECK_THROWS_AS(load_csv(path, missing), IngestError);

  write(path, "label,f0\n0,1\n7,1\n");
  CsvSchema bounded;
  bounded.num_labels = 2;
  try {
    load_csv(path, bounded);
    FAIL("expected an ingestion error");
  } catch (const IngestError& e) {
    CHECK(e.row() == 2);
    CHECK(e.column() == "label");
  }
}

TEST_CASE("save then load round-trips byte for byte") {
  const auto s = generate_synthetic(reference_benchmark(), 2);
  const auto path = scratch("rt.csv");
  save_csv(s.val, path);
  CsvSchema schema;
  schema.attribute_column = "attribute";
  auto back = load_csv(path, schema);
  back.name = s.val.name;
  CHECK(back == s.val);
  CHECK(to_csv(back) == to_csv(s.val));
}

TEST_CASE("stripping group annotations") {
  const auto s = generate_synthetic(reference_benchmark(), 0);
  const auto stripped = strip_group_annotations(s.train);
  CHECK_FALSE(stripped.has_group_annotations());
  CHECK(strip_group_annotations(stripped) == stripped);
  for (std::size_t i = 0; i < s.train.size(); ++i) {
    CHECK(stripped.examples[i].features == s.train.examples[i].features);
    CHECK(stripped.examples[i].label == s.train.examples[i].label);
    CHECK(s.train.examples[i].group->label == stripped.examples[i].label);
  }
}

TEST_CASE("validation subsampling") {
  Dataset val;
  for (std::size_t i = 0; i < 1199; ++i) {
    Example e;
    e.features = {static_cast<double>(i)};
    e.label = i % 2;
    e.group = GroupId{(i / 2) % 2, i % 2};
    val.examples.push_back(e);
  }
  CHECK(subsample_validation(val, 1.0, 0).data == val);
  const auto tenth = subsample_validation(val, 0.1, 0);
  CHECK(tenth.data.size() == 119);
  CHECK(subsample_validation(val, 0.1, 0).data == tenth.data);

  // subset in original order
  double last = -1.0;
  for (const auto& e : tenth.data.examples) {
    CHECK(e.features[0] > last);
    last = e.features[0];
    const auto i = static_cast<std::size_t>(e.features[0]);
    CHECK(e.group == val.examples[i].group);
  }

  val.examples.resize(40);
  const auto tiny = subsample_validation(val, 0.05, 0);
  CHECK(tiny.data.size() == 2);
  CHECK(tiny.missing_groups.size() >= 2);

  CHECK_THROWS_AS(subsample_validation(strip_group_annotations(val), 0.5, 0), InputError);
  CHECK_THROWS_AS(subsample_validation(val, 0.0, 0), InputError);
}
