#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace vortexlab::cli {

enum ExitCode : int { ok = 0, validation = 2, numerical = 3, io = 4 };

/// Entry point of the vortexlab executable. Structured progress lines go to out, error
/// objects ({"error": kind, "message": ..., ...}) to err.
int main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace vortexlab::cli
