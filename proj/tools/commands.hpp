#pragma once

#include <ostream>

namespace loraseg::cli {

// Runs one command line. Returns the process exit code: 0 on success,
// non-zero on usage errors and failures (reported on `err`).
int run_cli(int argc, const char *const *argv, std::ostream &out, std::ostream &err);

} // namespace loraseg::cli
