#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace sceneqa::cli {

// Runs one subcommand and records a run manifest. Returns 0 on success, 1 on
// a runtime failure and 2 on a usage error; failures print one JSON object
// {"error": <code>, "message": ...} to `err`.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int dispatch(int argc, char** argv);

}  // namespace sceneqa::cli
