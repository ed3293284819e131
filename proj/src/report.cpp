#include "grobust/report.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include <openssl/evp.h>

#include "grobust/errors.hpp"

namespace grobust {

namespace {

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

std::string digits17(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, 17);
  return std::string(buf, ptr);
}

std::string hidden_text(const std::vector<std::size_t>& hidden) {
  if (hidden.empty()) return "none";
  std::string out;
  for (std::size_t i = 0; i < hidden.size(); ++i) {
    if (i) out += 'x';
    out += std::to_string(hidden[i]);
  }
  return out;
}

std::size_t parse_size(const std::string& text) {
  std::size_t v = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (text.empty() || ec != std::errc() || ptr != text.data() + text.size()) {
    throw InputError("checkpoint: bad integer '" + text + "'");
  }
  return v;
}

}  // namespace

std::string fingerprint(const Dataset& data) {
  const std::string canonical = to_csv(data);
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(canonical.data(), canonical.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("sha256 failed");
  }
  static const char* hex = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 0xf];
  }
  return "sha256:" + out;
}

nlohmann::ordered_json to_json(const GroupMetrics& metrics) {
  nlohmann::ordered_json groups = nlohmann::ordered_json::array();
  for (const auto& [g, stat] : metrics.per_group) {
    groups.push_back({{"attribute", g.attribute}, {"label", g.label}, {"count", stat.count},
                      {"accuracy", stat.accuracy}});
  }
  return {{"average_accuracy", metrics.average_accuracy},
          {"worst_group_accuracy", metrics.worst_group_accuracy},
          {"worst_group", {{"attribute", metrics.worst_group.attribute}, {"label", metrics.worst_group.label}}},
          {"groups", groups}};
}

nlohmann::ordered_json strip_wall_clock(nlohmann::ordered_json report) {
  report.erase("wall_clock");
  return report;
}

nlohmann::ordered_json read_report(const std::filesystem::path& path) {
  try {
    return nlohmann::ordered_json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw InputError("malformed report " + path.string() + ": " + e.what());
  }
}

std::string checkpoint_text(const Model& model) {
  std::string out = "grobust-checkpoint 1\n";
  out += "input_dim " + std::to_string(model.arch.input_dim) + "\n";
  out += "hidden " + hidden_text(model.arch.hidden) + "\n";
  out += "num_labels " + std::to_string(model.arch.num_labels) + "\n";
  out += "activation tanh\n";
  out += "params " + std::to_string(model.params.size()) + "\n";
  for (const double p : model.params) out += digits17(p) + "\n";
  return out;
}

Model parse_checkpoint(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  auto field = [&](const std::string& key) {
    if (!std::getline(in, line)) throw InputError("checkpoint: missing " + key);
    const std::string prefix = key + " ";
    if (line.rfind(prefix, 0) != 0) throw InputError("checkpoint: expected " + key + ", got '" + line + "'");
    return line.substr(prefix.size());
  };
  if (field("grobust-checkpoint") != "1") throw InputError("checkpoint: unsupported version");
  Model model;
  model.arch.input_dim = parse_size(field("input_dim"));
  const std::string hidden = field("hidden");
  if (hidden != "none") {
    std::stringstream parts(hidden);
    std::string width;
    while (std::getline(parts, width, 'x')) model.arch.hidden.push_back(parse_size(width));
  }
  model.arch.num_labels = parse_size(field("num_labels"));
  if (field("activation") != "tanh") throw InputError("checkpoint: unknown activation");
  const std::size_t count = parse_size(field("params"));
  if (count != model.arch.param_count()) throw InputError("checkpoint: parameter count does not match architecture");
  model.params.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    if (!std::getline(in, line)) throw InputError("checkpoint: truncated parameter list");
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(line.data(), line.data() + line.size(), v);
    if (ec != std::errc() || ptr != line.data() + line.size() || !std::isfinite(v)) {
      throw InputError("checkpoint: bad parameter '" + line + "'");
    }
    model.params.push_back(v);
  }
  return model;
}

void save_checkpoint(const Model& model, const std::filesystem::path& path) {
  write_text(path, checkpoint_text(model));
}

Model load_checkpoint(const std::filesystem::path& path) { return parse_checkpoint(read_file(path)); }

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

}  // namespace grobust
