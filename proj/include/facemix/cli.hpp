#pragma once

#include <iosfwd>

namespace facemix {

/// Runs one `facemix` command line. Returns 0 on success, 2 for usage errors
/// (usage text on `err`) and 1 when the command itself fails (one
/// `error: ...` line on `err`).
int cli_dispatch(int argc, const char* const* argv);
int cli_dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace facemix
