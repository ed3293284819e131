#include <doctest.h>

#include <cmath>
#include <map>

#include "grobust/analysis.hpp"
#include "grobust/errors.hpp"
#include "grobust/metrics.hpp"
#include "grobust/rng.hpp"

using namespace grobust;

namespace {

// n examples; the first `target` are in group (1, 0), the rest spread over the other three.
Dataset grouped(std::size_t n, std::size_t target) {
  Dataset d;
  for (std::size_t i = 0; i < n; ++i) {
    GroupId g = i < target ? GroupId{1, 0} : (i % 3 == 0 ? GroupId{0, 0} : i % 3 == 1 ? GroupId{0, 1} : GroupId{1, 1});
    d.examples.push_back(Example{{static_cast<double>(i)}, g.label, g});
  }
  return d;
}

Dataset four_groups(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  Dataset d;
  for (std::size_t i = 0; i < n; ++i) {
    const GroupId g{rng.below(2), rng.below(2)};
    d.examples.push_back(Example{{rng.normal()}, g.label, g});
  }
  return d;
}

}  // namespace

TEST_CASE("group metrics summaries") {
  std::map<GroupId, GroupStat> table3{{GroupId{0, 0}, {100, 0.993}},
                                      {GroupId{0, 1}, {100, 0.963}},
                                      {GroupId{1, 0}, {100, 0.733}},
                                      {GroupId{1, 1}, {100, 0.726}}};
  const auto m = summarize_groups(table3);
  CHECK(m.worst_group_accuracy == doctest::Approx(0.726));
  CHECK(m.worst_group == GroupId{1, 1});

  const auto one = summarize_groups({{GroupId{0, 0}, {5, 1.0}}});
  CHECK(one.worst_group_accuracy == 1.0);
  CHECK(one.average_accuracy == 1.0);

  const auto skew = summarize_groups({{GroupId{0, 0}, {90, 1.0}}, {GroupId{0, 1}, {10, 0.0}}});
  CHECK(skew.average_accuracy == doctest::Approx(0.9));
  CHECK(skew.worst_group_accuracy == 0.0);

  // ties go to the smallest group id
  const auto tie = summarize_groups({{GroupId{1, 0}, {5, 0.5}}, {GroupId{0, 1}, {5, 0.5}}});
  CHECK(tie.worst_group == GroupId{0, 1});
}

TEST_CASE("evaluate_groups") {
  const Dataset d = four_groups(200, 1);
  const Model zero = zero_model(Architecture{1, {}, 2});
  const auto m = evaluate_groups(zero, d);
  CHECK(m.per_group.at(GroupId{0, 0}).accuracy == 1.0);
  CHECK(m.per_group.at(GroupId{0, 1}).accuracy == 0.0);
  CHECK(m.worst_group_accuracy <= m.average_accuracy);
  double weighted = 0.0, total = 0.0;
  for (const auto& [g, s] : m.per_group) {
    weighted += s.count * s.accuracy;
    total += s.count;
  }
  CHECK(std::abs(m.average_accuracy - weighted / total) < 1e-12);
  CHECK_THROWS_AS(evaluate_groups(zero, strip_group_annotations(d)), InputError);
}

TEST_CASE("error set stats") {
  const Dataset d = grouped(100, 10);
  ErrorSet E;
  for (std::size_t i = 0; i < 8; ++i) E.indices.push_back(i);
  for (std::size_t i = 50; i < 62; ++i) E.indices.push_back(i);
  const auto s = error_set_stats(E, d, GroupId{1, 0});
  CHECK(s.precision == doctest::Approx(0.4));
  CHECK(s.recall == doctest::Approx(0.8));
  CHECK(s.empirical_rate == doctest::Approx(0.1));
  CHECK(s.enrichment == doctest::Approx(4.0));
  CHECK(s.target_in_error_set == 8);
  CHECK(s.target_in_error_set * E.size() == 8 * E.size());

  ErrorSet exact;
  for (std::size_t i = 0; i < 10; ++i) exact.indices.push_back(i);
  const auto t = error_set_stats(exact, d, GroupId{1, 0});
  CHECK(t.precision == 1.0);
  CHECK(t.recall == 1.0);
  CHECK(t.enrichment == doctest::Approx(1.0 / 0.1));

  const auto empty = error_set_stats(ErrorSet{}, d, GroupId{1, 0});
  CHECK(empty.precision == 0.0);
  CHECK(empty.precision_undefined);

  // 19.1% precision over a 1.2% rate
  CHECK(0.191 / 0.012 == doctest::Approx(15.9).epsilon(0.01));
}

TEST_CASE("enrichment table") {
  const Dataset d = grouped(100, 10);
  ErrorSet E;
  for (std::size_t i = 0; i < 10; ++i) E.indices.push_back(i);
  const auto t = enrichment_table(E, d);
  REQUIRE(t.rows.size() == 4);
  CHECK(t.rows[0].group == GroupId{1, 0});
  CHECK(t.rows[0].enrichment == doctest::Approx(10.0));
  for (std::size_t r = 1; r < 4; ++r) CHECK(t.rows[r].enrichment == 0.0);
  double share = 0.0;
  for (const auto& row : t.rows) share += row.share;
  CHECK(share == doctest::Approx(1.0));
}

TEST_CASE("uniform error sets have enrichment near one") {
  std::size_t inside = 0;
  const int trials = 200;
  for (int seed = 0; seed < trials; ++seed) {
    const Dataset d = four_groups(10000, 1000 + seed);
    ErrorSet seedset;
    for (std::size_t i = 0; i < 1000; ++i) seedset.indices.push_back(i);
    const auto R = replace_error_set(seedset, d, ReplaceMode::replace_random, static_cast<std::uint64_t>(seed));
    const auto t = enrichment_table(R.error_set, d);
    bool ok = true;
    for (const auto& row : t.rows) ok = ok && row.enrichment >= 0.8 && row.enrichment <= 1.2;
    inside += ok;
  }
  CHECK(static_cast<double>(inside) / trials >= 0.99);
}

TEST_CASE("top loss sets and cvar composition") {
  const std::vector<double> flat(10, 1.0);
  CHECK(top_loss_set(flat, 0.3) == std::vector<std::size_t>{0, 1, 2});
  CHECK(top_loss_set(std::vector<double>{0.1, 5, 3, 4}, 0.5) == std::vector<std::size_t>{1, 3});
  CHECK(top_loss_set(std::vector<double>{1, 2, 3}, 0.5).size() == 2);

  const Dataset d = grouped(100, 10);
  std::vector<std::vector<double>> snaps{std::vector<double>(100, 0.0)};
  for (std::size_t i = 0; i < 100; ++i) snaps[0][i] = static_cast<double>(i % 7);
  const auto one = track_cvar_composition(snaps, 0.2, d, GroupId{1, 0});
  CHECK(one.size() == 1);
  CHECK(one[0].set_size == 20);

  snaps.push_back(snaps[0]);
  const auto all = track_cvar_composition(snaps, 1.0, d, GroupId{1, 0});
  for (const auto& p : all) {
    CHECK(p.precision == doctest::Approx(0.1));
    CHECK(p.recall == 1.0);
  }

  // equal losses: the first ceil(alpha n) indices, all in the target group here
  const auto first = track_cvar_composition(std::vector<std::vector<double>>{std::vector<double>(100, 2.0)}, 0.05, d,
                                            GroupId{1, 0});
  CHECK(first[0].precision == 1.0);
  CHECK(first[0].recall == doctest::Approx(0.5));
}

TEST_CASE("error set replacement") {
  const Dataset d = four_groups(400, 3);
  ErrorSet E;
  for (std::size_t i = 0; i < 400; i += 5) E.indices.push_back(i);

  auto counts = [&](const ErrorSet& S) {
    std::map<GroupId, std::size_t> c;
    for (const auto i : S.indices) ++c[*d.examples[i].group];
    return c;
  };

  const auto swapped = replace_error_set(E, d, ReplaceMode::swap_same_group, 1);
  CHECK(counts(swapped.error_set) == counts(E));
  CHECK_FALSE(swapped.sampled_with_replacement);
  CHECK_FALSE(swapped.error_set == E);
  CHECK(replace_error_set(E, d, ReplaceMode::swap_same_group, 1).error_set == swapped.error_set);

  const auto dropped = replace_error_set(E, d, ReplaceMode::drop_group, 1, GroupId{0, 1});
  auto c = counts(E);
  c.erase(GroupId{0, 1});
  CHECK(counts(dropped.error_set) == c);

  const auto eq = replace_error_set(E, d, ReplaceMode::drop_y_eq_a, 1).error_set;
  for (const auto i : eq.indices) CHECK(d.examples[i].group->attribute != d.examples[i].label);
  const auto neq = replace_error_set(E, d, ReplaceMode::drop_y_neq_a, 1).error_set;
  for (const auto i : neq.indices) CHECK(d.examples[i].group->attribute == d.examples[i].label);
  CHECK(eq.size() + neq.size() == E.size());

  const auto rnd = replace_error_set(E, d, ReplaceMode::replace_random, 2).error_set;
  CHECK(rnd.size() == E.size());

  for (const auto m : {ReplaceMode::swap_same_group, ReplaceMode::drop_group, ReplaceMode::drop_y_eq_a,
                       ReplaceMode::drop_y_neq_a, ReplaceMode::replace_random}) {
    CHECK(parse_replace_mode(to_string(m)) == m);
  }
  CHECK_THROWS_AS(parse_replace_mode("shuffle"), InputError);
}

TEST_CASE("csv renderings have headers") {
  const Dataset d = grouped(100, 10);
  ErrorSet E{{0, 1, 2}, 1};
  CHECK(to_csv(enrichment_table(E, d)).rfind("attribute,label,", 0) == 0);
  const auto stats = error_set_stats(E, d, GroupId{1, 0});
  const std::vector<CompositionPoint> series{{0, 3, 1.0, 0.3}};
  const auto csv = to_csv(series, &stats);
  CHECK(csv.find("reference_precision") != std::string::npos);
}
