#pragma once

#include <iosfwd>

namespace polyvae {

/// Entry point of the polyvae command. Exit codes: 0 success, 1 usage error,
/// 2 data error, 3 numeric failure.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace polyvae
