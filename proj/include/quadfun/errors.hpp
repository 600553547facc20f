#pragma once

#include <stdexcept>
#include <string>

namespace quadfun {

/// Argument outside the mathematical domain of an operation (index or point).
class DomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

/// Invalid configuration: bad node counts, out-of-range parameters, malformed config files.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A pilot fit and an evaluation sample came from the same fold.
class FoldViolation : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// Every dictionary member was dropped during orthonormalization.
class DegenerateDictionary : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A least-squares fit could not be solved.
class FitError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace quadfun
