#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace streamctx {

enum class ErrorKind {
  invalid_config,
  invalid_input,
  resolution,
  index_build,
  degenerate_embedding,
  no_observation,
  backend,
  grounding_missing,
  validation,
  scoring,
  profiler,
};

constexpr std::string_view to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::invalid_config: return "invalid-config";
    case ErrorKind::invalid_input: return "invalid-input";
    case ErrorKind::resolution: return "resolution";
    case ErrorKind::index_build: return "index-build";
    case ErrorKind::degenerate_embedding: return "degenerate-embedding";
    case ErrorKind::no_observation: return "no-observation";
    case ErrorKind::backend: return "backend";
    case ErrorKind::grounding_missing: return "grounding-missing";
    case ErrorKind::validation: return "validation";
    case ErrorKind::scoring: return "scoring";
    case ErrorKind::profiler: return "profiler";
  }
  return "unknown";
}

// Every failure raised by the library carries a kind so callers can branch
// without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace streamctx
