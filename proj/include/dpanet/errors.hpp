#pragma once

#include <stdexcept>

namespace dpanet {

/// Operand shapes violate an operation's contract.
class DimensionError : public std::invalid_argument {
   public:
    using std::invalid_argument::invalid_argument;
};

/// A configuration value or combination is invalid.
class ConfigError : public std::invalid_argument {
   public:
    using std::invalid_argument::invalid_argument;
};

/// A file does not follow its expected on-disk format.
class FormatError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

/// Stored parameters do not match the ones a configuration expects.
class MismatchError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

}  // namespace dpanet
