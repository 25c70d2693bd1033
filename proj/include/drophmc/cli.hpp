#pragma once

#include <iosfwd>

namespace drophmc {

/// Full command-line entry point; returns the process exit code.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace drophmc
