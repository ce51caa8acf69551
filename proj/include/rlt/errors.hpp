#pragma once

#include <stdexcept>
#include <string>

namespace rlt {

// Root of every error the library throws. The CLI maps subclasses to exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// exit code 2 family
class ConfigError : public Error { using Error::Error; };
class DimensionError : public Error { using Error::Error; };
class ContractError : public Error { using Error::Error; };
class RangeError : public Error { using Error::Error; };
class VocabError : public Error { using Error::Error; };
class BindingError : public Error { using Error::Error; };
class ValidationError : public Error { using Error::Error; };
class LookupError : public Error { using Error::Error; };
class SpecError : public Error { using Error::Error; };

// exit code 3 family
class FormatError : public Error { using Error::Error; };
class ShapeError : public Error { using Error::Error; };
class DatasetError : public Error { using Error::Error; };

// exit code 4
class NumericError : public Error { using Error::Error; };

}  // namespace rlt
