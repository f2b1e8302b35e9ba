#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace caviar {

/// Base class for all library errors.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Input violates a documented invariant (bad dates, shapes, ranges).
struct ValidationError : Error {
    using Error::Error;
};

/// Array/matrix dimensions do not agree.
struct ShapeError : Error {
    using Error::Error;
};

/// Value outside the mathematical domain of an operation.
struct DomainError : Error {
    using Error::Error;
};

/// No common trading days across the input series.
struct AlignmentError : Error {
    using Error::Error;
};

/// Ill-conditioned or singular numerical problem.
struct NumericalError : Error {
    using Error::Error;
};

/// Zero-variance data: higher moments are undefined.
struct DegenerateDataError : Error {
    using Error::Error;
};

/// Quantile recursion blew past the divergence guard.
struct ExplosivePathError : Error {
    ExplosivePathError(const std::string& msg, std::size_t step)
        : Error(msg), step_index(step) {}
    std::size_t step_index;  ///< first step where |q| exceeded the guard
};

/// Simulated quantile crossed zero: location-scale DGP has no valid scale.
struct DgpValidityError : Error {
    using Error::Error;
};

/// Too many bootstrap replicates failed to refit.
struct CovarianceUnreliableError : Error {
    using Error::Error;
};

/// Malformed input file; carries file name and 1-based line number.
struct ParseError : Error {
    ParseError(const std::string& file, std::size_t line, const std::string& what_arg)
        : Error(file + ":" + std::to_string(line) + ": " + what_arg),
          file_name(file),
          line_number(line) {}
    std::string file_name;
    std::size_t line_number;
};

}  // namespace caviar
