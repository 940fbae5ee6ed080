#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace didiv::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitError = 1;
inline constexpr int kExitDiagnostics = 2;  // results written, weak cells present

// args[0] is the program name. Errors are rendered as JSON on err.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace didiv::cli
