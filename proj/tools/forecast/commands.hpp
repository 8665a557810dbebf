#pragma once

#include <exception>
#include <iosfwd>
#include <string>
#include <vector>

namespace forecast::cli {

/// Exit status for a failure: 2 for configuration, 3 for data, 1 otherwise.
int exit_code_for(const std::exception& e);

/// One-line JSON error record, e.g. {"error":"data","exit_code":3,"message":"..."}.
std::string error_line(const std::exception& e);

/// Entry point shared by the executable and the tests; `args` excludes argv[0].
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace forecast::cli
