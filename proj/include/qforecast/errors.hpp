#pragma once

#include <stdexcept>
#include <string>

namespace qf {

// Base type for all library failures. The CLI maps subclasses onto exit
// codes: configuration 2, numerics 3, missing files 4.
struct Error : std::runtime_error {
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Bad, inconsistent, or unknown configuration keys/values.
struct ConfigError : Error { using Error::Error; };
// File missing or unreadable.
struct FileError : Error { using Error::Error; };
// File present but content malformed or wrong version.
struct FormatError : Error { using Error::Error; };

struct ShapeMismatch : Error { using Error::Error; };
struct NotScalar : Error { using Error::Error; };
// An operation produced NaN/Inf; message names the operation.
struct NumericalError : Error { using Error::Error; };

// Integrator state left the physical set (negative eigenvalue beyond tolerance).
struct StepSizeError : Error { using Error::Error; };
struct UnsupportedModel : Error { using Error::Error; };
struct DegenerateSteadyState : Error { using Error::Error; };
struct InvalidState : Error { using Error::Error; };

struct SeriesTooShort : Error { using Error::Error; };
struct DivergenceError : Error { using Error::Error; };
struct IndexMismatch : Error { using Error::Error; };

} // namespace qf
