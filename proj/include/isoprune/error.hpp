#pragma once

#include <stdexcept>
#include <string>

namespace isoprune {

enum class ErrorKind {
  io,          // missing or unwritable files
  format,      // malformed manifests
  validation,  // bundle/graph invariant violated
  design,      // inconsistent coupling discovered in the graph
  numeric,     // NaN/Inf encountered
  plan,        // plan cannot be built or does not match the bundle
  usage,       // bad arguments to an operation
};

/// Every failure raised by the library. The message always names the
/// offending node, tensor or group when one exists.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace isoprune
