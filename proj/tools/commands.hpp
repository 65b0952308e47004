#pragma once

namespace precog::cli {

// Parses arguments and runs one command. Returns the process exit code:
// 0 success, 1 validation error, 2 numerical failure.
int run(int argc, char** argv);

}  // namespace precog::cli
