#pragma once

#include <stdexcept>

namespace promptsan {

// Error taxonomy shared by every module. The C API maps each type to a
// status code; the CLI maps selected codes to exit codes.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DimensionError : Error { using Error::Error; };
struct VocabError : Error { using Error::Error; };
struct EmptyPromptError : Error { using Error::Error; };
struct ArchitectureError : Error { using Error::Error; };
struct ConfigError : Error { using Error::Error; };
struct FormatError : Error { using Error::Error; };
struct DataError : Error { using Error::Error; };
struct IoError : Error { using Error::Error; };

}  // namespace promptsan
