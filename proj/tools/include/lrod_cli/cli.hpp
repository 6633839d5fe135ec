#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace lrod::cli {

/// Exit codes.
inline constexpr int kOk = 0;
inline constexpr int kRuntimeError = 1;
inline constexpr int kUsageError = 2;

/// Parses `args` (without the program name) and runs one verb: gen-data,
/// train, analyze, landscape, eval, export-report.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Files export-report needs in a run directory, relative to it.
std::vector<std::string> expected_report_files(const std::string& run_dir);

}  // namespace lrod::cli
