#pragma once

#include <stdexcept>
#include <string>

namespace edgelab {

// Base for everything the library throws on purpose.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Invalid ensemble parameters, pattern, config value, or precondition.
class ValidationError : public Error {
public:
    using Error::Error;
};

// Corrections outside the perturbative window, or the critical-point solve failed.
class DegenerateModel : public Error {
public:
    using Error::Error;
};

// Stieltjes branch could not be followed unambiguously.
class BranchTrackingError : public Error {
public:
    using Error::Error;
};

// Iterative numerics did not converge.
class NumericError : public Error {
public:
    using Error::Error;
};

class UnsupportedOrder : public Error {
public:
    using Error::Error;
};

class InsufficientSamples : public Error {
public:
    using Error::Error;
};

}  // namespace edgelab
