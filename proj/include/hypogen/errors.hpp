#pragma once

#include <stdexcept>
#include <string>

namespace hypogen {

// Every failure raised by the library derives from Error so callers can
// catch the family at once. The CLI maps the subclasses to exit codes.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DimensionError : Error { using Error::Error; };
struct ContractError : Error { using Error::Error; };
struct LengthError : Error { using Error::Error; };
struct IndexError : Error { using Error::Error; };
struct ParseError : Error { using Error::Error; };
struct SchemaError : Error { using Error::Error; };
struct VocabError : Error { using Error::Error; };
struct FormatError : Error { using Error::Error; };
struct ConfigError : Error { using Error::Error; };
struct IoError : Error { using Error::Error; };
struct NumericError : Error { using Error::Error; };

}  // namespace hypogen
