// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace shapereg {

/// Bad input or configuration; the CLI maps it to exit code 2.
class ValidationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A numeric procedure could not produce a result; the CLI maps it to exit code 3.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class DegenerateShape : public NumericError {
public:
    using NumericError::NumericError;
};

class InsufficientData : public ValidationError {
public:
    using ValidationError::ValidationError;
};

/// Training shapes carry no variation at all, so no mode can be retained.
class ZeroVariance : public InsufficientData {
public:
    using InsufficientData::InsufficientData;
};

class SampleSizeOutOfRange : public ValidationError {
public:
    using ValidationError::ValidationError;
};

class DegenerateSample : public NumericError {
public:
    using NumericError::NumericError;
};

class ShapeMismatch : public ValidationError {
public:
    using ValidationError::ValidationError;
};

class AllSamplesSkipped : public NumericError {
public:
    using NumericError::NumericError;
};

class StageOrderError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

class ParseError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

}  // namespace shapereg
