#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace cytonet::cli {

/// Runs one command (synth / train / eval / explain). Returns the process
/// exit code: 0 on success, nonzero on any structured error (message goes to
/// `err`).
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace cytonet::cli
