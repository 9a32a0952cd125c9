#pragma once

#include <ostream>

namespace isoprune {

/// Command-line entry point. Returns 0 on success, 1 on a validation or
/// module error, 2 on a usage error.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace isoprune
