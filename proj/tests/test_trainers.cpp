#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "grobust/errors.hpp"
#include "grobust/metrics.hpp"
#include "grobust/rng.hpp"
#include "grobust/trainers.hpp"
#include "oracles.hpp"

using namespace grobust;

namespace {

Splits small_benchmark(std::uint64_t seed = 0) {
  auto spec = reference_benchmark();
  spec.n_train = 400;
  spec.n_val = 80;
  spec.n_test = 80;
  return generate_synthetic(spec, seed);
}

TrainConfig base_config(Algorithm a) {
  TrainConfig cfg;
  cfg.algorithm = a;
  cfg.epochs = 4;
  cfg.batch_size = 32;
  cfg.learning_rate = 0.05;
  cfg.seed = 17;
  return cfg;
}

// Bit-identical final parameters, per-epoch history and checkpoints.
void check_same_trajectory(const TrainResult& a, const TrainResult& b) {
  CHECK(a.model.params == b.model.params);
  CHECK(a.history == b.history);
  CHECK(a.best_worst_group == b.best_worst_group);
  CHECK(a.best_average == b.best_average);
}

}  // namespace

TEST_CASE("erm basics") {
  const auto s = small_benchmark();
  auto cfg = base_config(Algorithm::erm);
  const auto a = train_erm(s.train, s.val, cfg);
  const auto b = train_erm(s.train, s.val, cfg);
  CHECK(a == b);
  CHECK(a.history.size() == cfg.epochs);

  cfg.epochs = 0;
  const auto zero = train_erm(s.train, s.val, cfg);
  Rng rng(derive_seed(cfg.seed, "init", 0));
  CHECK(zero.model == init_model(Architecture{s.train.feature_dim(), {}, 2}, rng));
  CHECK(zero.history.empty());

  CHECK_THROWS_AS(train_erm(Dataset{}, s.val, base_config(Algorithm::erm)), InputError);
}

TEST_CASE("erm separates a separable toy set") {
  const std::vector<std::pair<std::size_t, std::size_t>> ya{{0, 0}, {0, 0}, {1, 1}, {1, 1}};
  Dataset d;
  const std::vector<std::vector<double>> xs{{-2, -1}, {-1, -2}, {1, 2}, {2, 1}};
  for (std::size_t i = 0; i < 4; ++i) d.examples.push_back(Example{xs[i], ya[i].first, GroupId{ya[i].second, ya[i].first}});
  auto cfg = base_config(Algorithm::erm);
  cfg.epochs = 50;
  cfg.batch_size = 2;
  cfg.learning_rate = 0.1;
  const auto r = train_erm(d, d, cfg);
  CHECK(compute_error_set(r.model, d).empty());
}

TEST_CASE("error sets") {
  const auto s = small_benchmark();
  const Model zero = zero_model(Architecture{s.train.feature_dim(), {}, 2});
  // zero model predicts label 0 everywhere
  const auto E = compute_error_set(zero, s.train);
  std::size_t ones = 0;
  for (const auto& e : s.train.examples) ones += e.label != 0;
  CHECK(E.size() == ones);
  for (const auto i : E.indices) CHECK(s.train.examples[i].label != 0);
  CHECK(std::is_sorted(E.indices.begin(), E.indices.end()));
}

TEST_CASE("upsampling") {
  const auto s = small_benchmark();
  Dataset ten;
  ten.examples.assign(s.train.examples.begin(), s.train.examples.begin() + 10);
  const ErrorSet E{{2, 7}, 1};
  CHECK(build_upsampled(ten, E, 1) == ten);
  const auto up = build_upsampled(ten, E, 5);
  CHECK(up.size() == 18);
  CHECK(up.examples[10] == ten.examples[2]);
  CHECK(up.examples[11] == ten.examples[7]);

  ErrorSet all;
  all.indices.resize(10);
  std::iota(all.indices.begin(), all.indices.end(), 0);
  CHECK(build_upsampled(ten, all, 2).size() == 20);
  CHECK(upsample_indices(10, E, 3) == std::vector<std::size_t>{0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 2, 7, 2, 7});
  CHECK(build_upsampled(ten, ErrorSet{}, 4) == ten);
}

TEST_CASE("reductions are bit-identical") {
  const auto s = small_benchmark(1);
  const auto train = strip_group_annotations(s.train);
  for (const auto& hidden : std::vector<std::vector<std::size_t>>{{}, {4}}) {
    auto erm = base_config(Algorithm::erm);
    erm.hidden = hidden;
    const auto ref = train_erm(train, s.val, erm);

    auto jtt = erm;
    jtt.algorithm = Algorithm::jtt;
    jtt.lambda_up = 1;
    jtt.T = 2;
    check_same_trajectory(train_jtt(train, s.val, jtt), ref);

    auto cvar = erm;
    cvar.algorithm = Algorithm::cvar;
    cvar.alpha = 1.0;
    check_same_trajectory(train_cvar(train, s.val, cvar), ref);

    auto dyn = erm;
    dyn.algorithm = Algorithm::jtt_dynamic;
    dyn.lambda_up = 6;
    dyn.T = 1;
    auto stat = dyn;
    stat.algorithm = Algorithm::jtt;
    const auto jr = train_jtt(train, s.val, stat);
    check_same_trajectory(train_jtt_dynamic(train, s.val, dyn), jr);
    dyn.K = dyn.epochs;
    check_same_trajectory(train_jtt_dynamic(train, s.val, dyn), jr);
    dyn.K = 1;
    CHECK_FALSE(train_jtt_dynamic(train, s.val, dyn).model == jr.model);
  }
}

TEST_CASE("group dro with a single group is erm") {
  auto s = small_benchmark(2);
  Dataset one;
  for (auto e : s.train.examples) {
    if (e.label == 0) {
      e.group = GroupId{0, 0};
      one.examples.push_back(e);
    }
  }
  auto cfg = base_config(Algorithm::group_dro);
  const auto r = train_group_dro(one, s.val, cfg);
  cfg.algorithm = Algorithm::erm;
  check_same_trajectory(r, train_erm(strip_group_annotations(one), s.val, cfg));
  REQUIRE(r.group_dro);
  CHECK(r.group_dro->weights == std::vector<double>{1.0});
}

TEST_CASE("jtt stage structure") {
  const auto s = small_benchmark(3);
  auto cfg = base_config(Algorithm::jtt);
  cfg.T = 1;
  cfg.lambda_up = 5;
  const auto r = train(s.train, s.val, cfg);
  REQUIRE(r.jtt);
  CHECK(r.jtt->error_set.indices == compute_error_set(r.jtt->identification_model, s.train).indices);
  CHECK(r.jtt->error_set.source_epoch == 1);

  // identification model is one epoch of erm under stage 1
  auto id = cfg;
  id.algorithm = Algorithm::erm;
  id.epochs = 1;
  CHECK(r.history.size() == cfg.epochs);

  cfg.T = 0;
  const auto t0 = train(s.train, s.val, cfg);
  Rng rng(derive_seed(cfg.seed, "init", 1));
  CHECK(t0.jtt->identification_model == init_model(Architecture{s.train.feature_dim(), {}, 2}, rng));

  // empty error set warns and falls back to erm
  const auto warned = train_jtt_stage_two(strip_group_annotations(s.train), s.val, cfg, ErrorSet{});
  CHECK(warned.warnings.size() == 1);
  auto erm = cfg;
  erm.algorithm = Algorithm::erm;
  check_same_trajectory(warned, train_erm(strip_group_annotations(s.train), s.val, erm));
}

TEST_CASE("cvar batch weights") {
  auto weighted = [](const std::vector<double>& l, double alpha) {
    const auto w = cvar_batch_weights(l, alpha);
    double s = 0.0;
    for (std::size_t i = 0; i < l.size(); ++i) s += w[i] * l[i];
    return s;
  };
  CHECK(weighted({1, 2, 3, 4}, 0.5) == doctest::Approx(3.5));
  CHECK(weighted({1, 2, 3, 4}, 1.0) == doctest::Approx(2.5));
  CHECK(weighted({1, 2, 3}, 0.5) == doctest::Approx(8.0 / 3.0));
  const auto w = cvar_batch_weights(std::vector<double>{1, 2, 3}, 0.5);
  CHECK(w[2] == doctest::Approx(2.0 / 3.0));
  CHECK(w[1] == doctest::Approx(1.0 / 3.0));
  CHECK(w[0] == 0.0);

  // alpha * B < 1: point mass on the largest loss
  CHECK(cvar_batch_weights(std::vector<double>{5, 9, 1}, 0.1) == std::vector<double>{0, 1, 0});
  // identical losses: weighted sum is the mean
  CHECK(weighted({2, 2, 2, 2}, 0.3) == doctest::Approx(2.0));
  // ties go to the lower index
  CHECK(cvar_batch_weights(std::vector<double>{1, 1}, 0.5) == std::vector<double>{1, 0});

  CHECK_THROWS_AS(cvar_batch_weights(std::vector<double>{}, 0.5), InputError);
  CHECK_THROWS_AS(cvar_batch_weights(std::vector<double>{1}, 0.0), InputError);
}

TEST_CASE("cvar weights properties and vertex oracle") {
  Rng rng(99);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t B = 1 + rng.below(10);
    std::vector<double> l(B);
    for (auto& v : l) v = rng.uniform(0, 5);
    const double alpha = rng.uniform(0.01, 1.0);
    const auto w = cvar_batch_weights(l, alpha);
    const double cap = 1.0 / (alpha * static_cast<double>(B));
    double sum = 0.0, value = 0.0, mean = 0.0;
    for (std::size_t i = 0; i < B; ++i) {
      CHECK(w[i] >= 0.0);
      CHECK(w[i] <= cap + 1e-12);
      sum += w[i];
      value += w[i] * l[i];
      mean += l[i] / static_cast<double>(B);
    }
    CHECK(std::abs(sum - 1.0) < 1e-12);
    CHECK(value >= mean - 1e-12);
    CHECK(std::abs(value - oracle::cvar_vertex_max(l, alpha)) < 1e-9);

    const auto w2 = cvar_batch_weights(l, std::min(1.0, alpha + 0.1));
    double value2 = 0.0;
    for (std::size_t i = 0; i < B; ++i) value2 += w2[i] * l[i];
    CHECK(value2 <= value + 1e-12);
  }
}

TEST_CASE("lff weight") {
  CHECK(lff_weight(0.3, 0.3) == doctest::Approx(0.5));
  CHECK(lff_weight(0.9, 0.1) == doctest::Approx(std::log(0.9) / (std::log(0.9) + std::log(0.1))));
  CHECK(lff_weight(0.9, 0.1) == doctest::Approx(0.04375).epsilon(1e-4));
  CHECK(lff_weight(1.0 - 1e-9, 0.5) < 1e-6);
  Rng rng(4);
  for (int i = 0; i < 200; ++i) {
    const double a = rng.uniform(0.001, 0.999), b = rng.uniform(0.001, 0.999);
    const double w = lff_weight(a, b);
    CHECK(w > 0.0);
    CHECK(w < 1.0);
    CHECK(w + lff_weight(b, a) == doctest::Approx(1.0));
  }
  CHECK(std::isfinite(lff_weight(0.0, 0.0)));
  CHECK(std::isfinite(lff_weight(1.0, 1.0)));
}

TEST_CASE("lff with unit weights and q = 0 is erm") {
  const auto s = small_benchmark(4);
  const auto train = strip_group_annotations(s.train);
  auto cfg = base_config(Algorithm::lff);
  cfg.gce_q = 0.0;
  const auto r = detail::train_lff_with(train, s.val, cfg, [](double, double) { return 1.0; });
  cfg.algorithm = Algorithm::erm;
  check_same_trajectory(r, train_erm(train, s.val, cfg));
}

TEST_CASE("lff weight starts at one half on identical examples") {
  Dataset same;
  for (int i = 0; i < 8; ++i) same.examples.push_back(Example{{0.5, -0.25}, 1, GroupId{1, 1}});
  auto cfg = base_config(Algorithm::lff);
  cfg.epochs = 1;
  cfg.batch_size = 8;
  std::vector<double> seen;
  detail::train_lff_with(same, same, cfg, [&](double pB, double pD) {
    const double w = lff_weight(pB, pD);
    seen.push_back(w);
    return w;
  });
  REQUIRE(seen.size() == 8);
  for (const double w : seen) CHECK(w == doctest::Approx(0.5));
}

TEST_CASE("group dro update") {
  const auto w = group_dro_update(std::vector<double>{1.0, 0.0}, std::vector<double>{0.5, 0.5}, 0.01);
  CHECK(w[0] == doctest::Approx(0.50250).epsilon(1e-5));
  CHECK(w[1] == doctest::Approx(0.49750).epsilon(1e-5));
  CHECK(group_dro_update(std::vector<double>{3.0}, std::vector<double>{1.0}, 0.01) == std::vector<double>{1.0});
  const auto eq = group_dro_update(std::vector<double>{2.0, 2.0, 2.0}, std::vector<double>{0.2, 0.3, 0.5}, 0.1);
  CHECK(eq[0] == doctest::Approx(0.2));
  CHECK(eq[2] == doctest::Approx(0.5));
}

TEST_CASE("group dro frozen weights with eta 0") {
  const auto s = small_benchmark(5);
  auto cfg = base_config(Algorithm::group_dro);
  cfg.eta_q = 0.0;
  const auto r = train_group_dro(s.train, s.val, cfg);
  REQUIRE(r.group_dro);
  for (const double w : r.group_dro->weights) CHECK(w == doctest::Approx(0.25));
  CHECK_THROWS_AS(train_group_dro(strip_group_annotations(s.train), s.val, cfg), InputError);
}

TEST_CASE("upsample minority") {
  const auto s = small_benchmark(6);
  auto cfg = base_config(Algorithm::upsample_minority);
  cfg.lambda_up = 1;
  auto erm = base_config(Algorithm::erm);
  const auto ref = train_erm(strip_group_annotations(s.train), s.val, erm);
  check_same_trajectory(train_upsample_minority(s.train, s.val, cfg), ref);

  Dataset majority;
  for (const auto& e : s.train.examples) {
    if (e.group->attribute == e.label) majority.examples.push_back(e);
  }
  cfg.lambda_up = 10;
  check_same_trajectory(train_upsample_minority(majority, s.val, cfg),
                        train_erm(strip_group_annotations(majority), s.val, erm));

  Dataset three = s.train;
  three.examples[0].group->attribute = 2;
  CHECK_THROWS_AS(train_upsample_minority(three, s.val, cfg), UnsupportedError);
}

TEST_CASE("trainers other than the oracles never read train groups") {
  const auto s = small_benchmark(7);
  Dataset poisoned = s.train;
  Rng rng(1);
  for (auto& e : poisoned.examples) e.group = GroupId{rng.below(2), e.label};
  for (const auto a : {Algorithm::erm, Algorithm::jtt, Algorithm::jtt_dynamic, Algorithm::cvar, Algorithm::lff}) {
    auto cfg = base_config(a);
    cfg.lambda_up = 4;
    cfg.K = 2;
    CHECK(train(s.train, s.val, cfg) == train(poisoned, s.val, cfg));
  }
  auto dro = base_config(Algorithm::group_dro);
  CHECK_FALSE(train(s.train, s.val, dro) == train(poisoned, s.val, dro));
}

TEST_CASE("checkpoints track the best validation epoch") {
  const auto s = small_benchmark(8);
  auto cfg = base_config(Algorithm::erm);
  cfg.epochs = 6;
  const auto r = train(s.train, s.val, cfg);
  REQUIRE(r.best_worst_group);
  double best = -1.0;
  std::size_t at = 0;
  for (std::size_t e = 0; e < r.history.size(); ++e) {
    if (*r.history[e].val_worst_group > best) {
      best = *r.history[e].val_worst_group;
      at = e;
    }
  }
  CHECK(r.best_worst_group->epoch == at);
  CHECK(evaluate_groups(r.best_worst_group->model, s.val).worst_group_accuracy == best);
}

TEST_CASE("config fields round-trip and validate") {
  TrainConfig cfg;
  set_field(cfg, "algorithm", "jtt-dynamic");
  set_field(cfg, "K", "5");
  set_field(cfg, "hidden", "16x8");
  set_field(cfg, "id_learning_rate", "0.001");
  TrainConfig back;
  for (const auto& [k, v] : config_fields(cfg)) set_field(back, k, v);
  CHECK(back == cfg);
  CHECK_THROWS_AS(set_field(cfg, "alpha", "1.5"), InputError);
  CHECK_THROWS_AS(set_field(cfg, "bogus", "1"), InputError);
  CHECK_THROWS_AS(set_field(cfg, "epochs", "-3"), InputError);
  CHECK(cfg.K == 5u);
  CHECK(TrainConfig{}.momentum == 0.9);
  CHECK(TrainConfig{}.eta_q == 0.01);
}
