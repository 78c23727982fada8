#pragma once

#include <stdexcept>
#include <string>

namespace attnboost {

// Base class for every error raised by the toolkit.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Malformed or inconsistent configuration; maps to CLI exit code 1.
class ConfigError : public Error {
public:
  using Error::Error;
};

// Malformed on-disk data (feature, head, mask files).
class FormatError : public Error {
public:
  using Error::Error;
};

// Shape or dimension disagreement between operands.
class ShapeError : public Error {
public:
  using Error::Error;
};

// Training produced a non-finite loss.
class DivergenceError : public Error {
public:
  using Error::Error;
};

// Task-set search exhausted its budget.
class InfeasibleError : public Error {
public:
  using Error::Error;
};

} // namespace attnboost
