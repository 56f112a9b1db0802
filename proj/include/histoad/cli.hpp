#pragma once

namespace histoad {

/// Entry point of the `histoad` command line tool. Returns the process exit
/// code: 0 success, 2 usage or input error, 3 numeric failure.
int run_cli(int argc, char** argv);

}  // namespace histoad
