#pragma once

#include <stdexcept>
#include <string>

namespace sraa {

/// Base class for every error thrown by the library.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Tensor shapes or axes do not satisfy an operation's contract.
struct ShapeError : Error {
    using Error::Error;
};

/// A numeric degeneracy: division by zero, zero-norm vector, overflow to Inf/NaN.
struct NumericError : Error {
    using Error::Error;
};

/// Invalid or inconsistent configuration values.
struct ConfigError : Error {
    using Error::Error;
};

/// A file's contents do not match its declared format.
struct FormatError : Error {
    using Error::Error;
};

/// Filesystem-level failure (open, read, write).
struct IoError : Error {
    using Error::Error;
};

/// A label map entry indexes outside the valid class/channel range.
struct LabelError : Error {
    using Error::Error;
};

/// A class id is missing from the semantic table.
struct UnknownClassError : Error {
    using Error::Error;
};

/// A class requested for pooling has no pixels in the batch.
struct EmptyClassError : Error {
    using Error::Error;
};

/// A class scheduled for imprinting has already been learned.
struct DuplicateClassError : Error {
    using Error::Error;
};

/// Optimization diverged (non-finite loss or parameters).
struct TrainingError : Error {
    using Error::Error;
};

}  // namespace sraa
