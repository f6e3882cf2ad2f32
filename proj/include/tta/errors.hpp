#pragma once

#include <stdexcept>
#include <string>

namespace tta {

// Base class for all library errors.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Invalid argument / configuration (bad K, tau <= 0, shape mismatch, ...).
class ParameterError : public Error {
public:
    using Error::Error;
};

// Zero-norm vector fed to a cosine term.
class DegenerateInputError : public Error {
public:
    using Error::Error;
};

// Objective produced a non-finite value.
class EvaluationError : public Error {
public:
    using Error::Error;
};

// Weight-file errors, one named type per failure mode.
class WeightFileError : public Error {
public:
    using Error::Error;
};

class BadMagicError : public WeightFileError {
public:
    using WeightFileError::WeightFileError;
};

class VersionMismatchError : public WeightFileError {
public:
    using WeightFileError::WeightFileError;
};

class TruncatedFileError : public WeightFileError {
public:
    using WeightFileError::WeightFileError;
};

class TensorHeaderError : public WeightFileError {
public:
    using WeightFileError::WeightFileError;
};

// Image file I/O (PPM parse/write failures, unreadable files).
class ImageIoError : public Error {
public:
    using Error::Error;
};

// 8-bit export would exceed the integer-domain perturbation budget.
class ExportBudgetError : public Error {
public:
    using Error::Error;
};

} // namespace tta
