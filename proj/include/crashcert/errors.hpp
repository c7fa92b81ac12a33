#pragma once

#include <stdexcept>
#include <string>

namespace crashcert {

/// Shapes that do not chain, empty matrices, masks of the wrong length.
class DimensionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Arguments outside the domain of a formula (probabilities, KL, alpha <= p).
class DomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

/// Exact enumeration refused because the number of crashable neurons exceeds the cap.
class EnumerationInfeasible : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// The expected error already exceeds the tolerance budget.
class InfeasibleCertificate : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class TrainingDiverged : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed model/dataset/report files. The message names the row or field.
class SchemaError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace crashcert
