#pragma once
// Command-line front end: gen-data / train / eval / bench / report wired into
// reproducible runs. Every command writes a resolved-config snapshot and the
// fingerprints of its inputs next to its outputs.
//
// Exit codes: 0 success, 2 configuration error, 3 data error, 4 training
// divergence, 5 acceptance-gate failure in eval.

#include <string>
#include <vector>

namespace bidshade {

int run_command(const std::vector<std::string>& args);

}  // namespace bidshade
