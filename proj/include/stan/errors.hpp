#pragma once

#include <stdexcept>
#include <string>

namespace stan {

enum class ErrorCategory { Usage, MalformedManifest, ShapeMismatch, UnknownName, Io, InvalidConfig };

// Stable machine-readable tag, e.g. "malformed-manifest".
std::string to_string(ErrorCategory category);

class StanError : public std::runtime_error {
 public:
  StanError(ErrorCategory category, const std::string& message)
      : std::runtime_error(message), category_(category) {}
  ErrorCategory category() const { return category_; }

 private:
  ErrorCategory category_;
};

}  // namespace stan
