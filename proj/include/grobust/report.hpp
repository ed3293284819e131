#pragma once

// Run reports, dataset fingerprints and checkpoint files.
//
// Report document (report.json):
//   schema       "grobust-report/1"
//   version      library version
//   command      generate | train | sweep | analyze | ablate | val-study
//   config       section -> key -> value, defaults filled in
//   datasets     split -> {size, fingerprint, groups}
//   metrics      per command (val/test GroupMetrics, sweep summaries, ...)
//   diagnostics  error-set stats, enrichment, ablations as applicable
//   outputs      sidecar files written next to the report
//   warnings     list of strings
//   wall_clock   {started_utc, elapsed_seconds}; the only nondeterministic key

#include <filesystem>
#include <string>

#include <json.hpp>

#include "grobust/dataset.hpp"
#include "grobust/metrics.hpp"
#include "grobust/model.hpp"

namespace grobust {

inline constexpr const char* kReportSchema = "grobust-report/1";

// Lowercase hex SHA-256 of to_csv(data).
std::string fingerprint(const Dataset& data);

nlohmann::ordered_json to_json(const GroupMetrics& metrics);

// Removes wall_clock for comparisons.
nlohmann::ordered_json strip_wall_clock(nlohmann::ordered_json report);

nlohmann::ordered_json read_report(const std::filesystem::path& path);

// Text checkpoint: header lines then one parameter per line at 17 significant digits.
std::string checkpoint_text(const Model& model);
Model parse_checkpoint(const std::string& text);
void save_checkpoint(const Model& model, const std::filesystem::path& path);
Model load_checkpoint(const std::filesystem::path& path);

void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace grobust
