#pragma once

// Command-line runner behind the `grobust` tool.
//
//   grobust <command> --config <ini> --out <dir> [--data <dir>] [--seed <int>]
//
// Commands: generate, train, sweep, analyze, ablate, val-study. Every command
// writes <dir>/report.json plus sidecar CSV files and checkpoints. Output is
// staged in <dir>.partial and renamed on success; on failure the staging
// directory is removed and a JSON error block is printed to stderr.
//
// Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.

#include <iosfwd>
#include <string>
#include <vector>

namespace grobust {

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run_cli(int argc, char** argv);

}  // namespace grobust
