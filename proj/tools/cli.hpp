#pragma once

#include <ostream>

namespace loctex::cli {

/// Parses argv (argv[0] is the program name) and runs one subcommand.
/// Returns 0 on success, 2 on usage errors (unknown subcommand or flag,
/// malformed value) and 1 when the command fails. Failures end with a
/// single-line JSON tail on `err`:
///   {"status":"error","subcommand":...,"kind":...,"message":...}
/// Progress lines go to `err` when LOCTEX_VERBOSE is set to anything but 0.
int run_subcommand(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace loctex::cli
