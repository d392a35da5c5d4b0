#pragma once

#include <stdexcept>
#include <string>

namespace bnn {

// Every error raised by the library derives from Error so callers (the CLI in
// particular) can report a single machine-parsable line.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(what), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

#define BNN_DEFINE_ERROR(Name, tag)                               \
  class Name : public Error {                                     \
   public:                                                        \
    explicit Name(const std::string& what) : Error(tag, what) {}  \
  };

BNN_DEFINE_ERROR(DimensionError, "dimension")
BNN_DEFINE_ERROR(NumericError, "numeric")
BNN_DEFINE_ERROR(ContractError, "contract")
BNN_DEFINE_ERROR(SupportError, "support")
BNN_DEFINE_ERROR(ConfigError, "config")
BNN_DEFINE_ERROR(ParseError, "parse")
BNN_DEFINE_ERROR(FormatError, "format")
BNN_DEFINE_ERROR(UnsupportedError, "unsupported")
BNN_DEFINE_ERROR(DiagnosticError, "diagnostic")

#undef BNN_DEFINE_ERROR

}  // namespace bnn
