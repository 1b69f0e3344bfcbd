#ifndef MASKFILL_CLI_HPP
#define MASKFILL_CLI_HPP

#include <stdexcept>
#include <string>
#include <vector>

namespace maskfill::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

/// Entry point of the maskfill command line. Returns the process exit code:
/// 0 on success, 2 on usage errors, 1 on runtime failures. Diagnostics go to
/// stderr.
int run(int argc, const char* const* argv);
int run(const std::vector<std::string>& args);

/// Thrown for invalid invocations (mapped to exit code 2).
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace maskfill::cli

#endif  // MASKFILL_CLI_HPP
