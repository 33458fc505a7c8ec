#pragma once

#include <stdexcept>
#include <string>

namespace zerores {

// Base for every failure raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class UnsupportedDimension : public Error {
public:
    using Error::Error;
};

// Argument outside the domain of a function (negative radius, r = 0, ...).
class DomainError : public Error {
public:
    using Error::Error;
};

class InvalidGeometry : public Error {
public:
    using Error::Error;
};

// Raised by the inversion routines; the message says which matrix failed.
class SingularOperator : public Error {
public:
    using Error::Error;
};

// Singular values do not separate into a kernel and a range with a clear gap.
class AmbiguousKernel : public Error {
public:
    AmbiguousKernel(const std::string& what, double largest_kept, double smallest_dropped)
        : Error(what), largest_kept(largest_kept), smallest_dropped(smallest_dropped) {}
    double largest_kept;
    double smallest_dropped;
};

class DegenerateFit : public Error {
public:
    using Error::Error;
};

class NonFiniteSample : public Error {
public:
    NonFiniteSample(const std::string& what, double lambda) : Error(what), lambda(lambda) {}
    double lambda;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

} // namespace zerores
