#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace tve {

enum class ErrorKind {
  InvalidSize,
  Input,
  Schema,
  EmptyData,
  Separation,
  PositivityDegenerate,
  DegenerateFit,
  PsiDegenerate,
  Scenario,
  Config,
};

std::string_view to_string(ErrorKind kind);

// Every library failure carries a kind so callers (the Monte-Carlo loop, the
// CLI exit-code mapping) can dispatch without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace tve
