#pragma once

#include <ostream>

namespace brewrank {

/// Entry point behind the `brewrank` executable. Output goes to `out`,
/// diagnostics to `err`; returns the process exit status.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace brewrank
