#pragma once

#include <iosfwd>

namespace ferryplan::cli {

/// Runs one subcommand. Returns 0 when the requested artifact was written,
/// 1 on a domain error (JSON object on `err`), 2 on a usage error.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace ferryplan::cli
