#include <charconv>
#include <cmath>
#include <sstream>

#include "grobust/errors.hpp"
#include "grobust/trainers.hpp"

namespace grobust {

namespace {

constexpr std::pair<Algorithm, const char*> kAlgorithmNames[] = {
    {Algorithm::erm, "erm"},
    {Algorithm::jtt, "jtt"},
    {Algorithm::jtt_dynamic, "jtt-dynamic"},
    {Algorithm::cvar, "cvar"},
    {Algorithm::lff, "lff"},
    {Algorithm::group_dro, "group-dro"},
    {Algorithm::upsample_minority, "upsample-minority"},
};

const char* const kFieldNames[] = {
    "algorithm", "epochs", "batch_size", "learning_rate", "momentum", "l2", "seed", "hidden",
    "T", "lambda_up", "K", "alpha", "gce_q", "eta_q", "id_learning_rate", "id_l2", "track_cvar",
};

std::string format_real(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

double to_real(const std::string& name, const std::string& text) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (text.empty() || ec != std::errc() || ptr != text.data() + text.size() || !std::isfinite(v)) {
    throw InputError(name + ": expected a real number, got '" + text + "'");
  }
  return v;
}

template <typename Int>
Int to_int(const std::string& name, const std::string& text) {
  Int v = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (text.empty() || ec != std::errc() || ptr != text.data() + text.size()) {
    throw InputError(name + ": expected a non-negative integer, got '" + text + "'");
  }
  return v;
}

std::vector<std::size_t> to_widths(const std::string& text) {
  std::vector<std::size_t> widths;
  if (text.empty() || text == "none") return widths;
  std::istringstream in(text);
  std::string part;
  while (std::getline(in, part, 'x')) {
    const auto w = to_int<std::size_t>("hidden", part);
    if (w == 0) throw InputError("hidden: layer widths must be positive");
    widths.push_back(w);
  }
  return widths;
}

std::string format_widths(const std::vector<std::size_t>& widths) {
  if (widths.empty()) return "none";
  std::string out;
  for (std::size_t i = 0; i < widths.size(); ++i) {
    if (i) out += 'x';
    out += std::to_string(widths[i]);
  }
  return out;
}

}  // namespace

std::string to_string(Algorithm algorithm) {
  for (const auto& [a, name] : kAlgorithmNames) {
    if (a == algorithm) return name;
  }
  return "unknown";
}

Algorithm parse_algorithm(const std::string& name) {
  for (const auto& [a, n] : kAlgorithmNames) {
    if (name == n) return a;
  }
  throw InputError("algorithm: unknown algorithm '" + name + "'");
}

bool uses_train_groups(Algorithm algorithm) {
  return algorithm == Algorithm::group_dro || algorithm == Algorithm::upsample_minority;
}

void TrainConfig::validate() const {
  if (batch_size < 1) throw InputError("batch_size: must be at least 1");
  if (!(learning_rate > 0.0)) throw InputError("learning_rate: must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw InputError("momentum: must lie in [0, 1)");
  if (!(l2 >= 0.0)) throw InputError("l2: must be non-negative");
  if (lambda_up < 1) throw InputError("lambda_up: must be at least 1");
  if (K && *K < 1) throw InputError("K: must be at least 1");
  if (!(alpha > 0.0 && alpha <= 1.0)) throw InputError("alpha: must lie in (0, 1]");
  if (!(gce_q >= 0.0 && gce_q < 1.0)) throw InputError("gce_q: must lie in [0, 1)");
  if (!(eta_q >= 0.0)) throw InputError("eta_q: must be non-negative");
  if (id_learning_rate && !(*id_learning_rate > 0.0)) {
    throw InputError("id_learning_rate: must be positive");
  }
  if (id_l2 && !(*id_l2 >= 0.0)) throw InputError("id_l2: must be non-negative");
}

bool is_config_field(const std::string& name) {
  for (const char* f : kFieldNames) {
    if (name == f) return true;
  }
  return false;
}

void set_field(TrainConfig& cfg, const std::string& name, const std::string& value) {
  TrainConfig next = cfg;
  if (name == "algorithm") next.algorithm = parse_algorithm(value);
  else if (name == "epochs") next.epochs = to_int<std::size_t>(name, value);
  else if (name == "batch_size") next.batch_size = to_int<std::size_t>(name, value);
  else if (name == "learning_rate") next.learning_rate = to_real(name, value);
  else if (name == "momentum") next.momentum = to_real(name, value);
  else if (name == "l2") next.l2 = to_real(name, value);
  else if (name == "seed") next.seed = to_int<std::uint64_t>(name, value);
  else if (name == "hidden") next.hidden = to_widths(value);
  else if (name == "T") next.T = to_int<std::size_t>(name, value);
  else if (name == "lambda_up") next.lambda_up = to_int<std::size_t>(name, value);
  else if (name == "K") {
    if (value == "inf") next.K.reset();
    else next.K = to_int<std::size_t>(name, value);
  } else if (name == "alpha") next.alpha = to_real(name, value);
  else if (name == "gce_q") next.gce_q = to_real(name, value);
  else if (name == "eta_q") next.eta_q = to_real(name, value);
  else if (name == "id_learning_rate") {
    if (value == "none") next.id_learning_rate.reset();
    else next.id_learning_rate = to_real(name, value);
  } else if (name == "id_l2") {
    if (value == "none") next.id_l2.reset();
    else next.id_l2 = to_real(name, value);
  } else if (name == "track_cvar") {
    if (value == "true") next.track_cvar = true;
    else if (value == "false") next.track_cvar = false;
    else throw InputError("track_cvar: expected true or false, got '" + value + "'");
  } else {
    throw InputError(name + ": unknown training field");
  }
  next.validate();
  cfg = std::move(next);
}

std::vector<std::pair<std::string, std::string>> config_fields(const TrainConfig& cfg) {
  return {
      {"algorithm", to_string(cfg.algorithm)},
      {"epochs", std::to_string(cfg.epochs)},
      {"batch_size", std::to_string(cfg.batch_size)},
      {"learning_rate", format_real(cfg.learning_rate)},
      {"momentum", format_real(cfg.momentum)},
      {"l2", format_real(cfg.l2)},
      {"seed", std::to_string(cfg.seed)},
      {"hidden", format_widths(cfg.hidden)},
      {"T", std::to_string(cfg.T)},
      {"lambda_up", std::to_string(cfg.lambda_up)},
      {"K", cfg.K ? std::to_string(*cfg.K) : "inf"},
      {"alpha", format_real(cfg.alpha)},
      {"gce_q", format_real(cfg.gce_q)},
      {"eta_q", format_real(cfg.eta_q)},
      {"id_learning_rate", cfg.id_learning_rate ? format_real(*cfg.id_learning_rate) : "none"},
      {"id_l2", cfg.id_l2 ? format_real(*cfg.id_l2) : "none"},
      {"track_cvar", cfg.track_cvar ? "true" : "false"},
  };
}

}  // namespace grobust
