#pragma once

#include <stdexcept>
#include <string>

namespace ccpool {

// Broad failure classes; the CLI maps each onto its own exit code.
enum class ErrorCategory { Config, Data, Numerical, Contract };

enum class ErrorCode {
    // data
    MissingExposure,
    InvalidDataset,
    MalformedInput,
    DuplicateKey,
    InsufficientData,
    // numerical
    SingularDesign,
    SingularInformation,
    NonConvergence,
    DivisionDegeneracy,
    DomainError,
    // contract
    Precondition,
    // config
    InvalidScenario,
    InvalidConfig,
    Io,
};

constexpr ErrorCategory category_of(ErrorCode code) noexcept {
    switch (code) {
    case ErrorCode::MissingExposure:
    case ErrorCode::InvalidDataset:
    case ErrorCode::MalformedInput:
    case ErrorCode::DuplicateKey:
    case ErrorCode::InsufficientData:
        return ErrorCategory::Data;
    case ErrorCode::SingularDesign:
    case ErrorCode::SingularInformation:
    case ErrorCode::NonConvergence:
    case ErrorCode::DivisionDegeneracy:
    case ErrorCode::DomainError:
        return ErrorCategory::Numerical;
    case ErrorCode::Precondition:
        return ErrorCategory::Contract;
    case ErrorCode::InvalidScenario:
    case ErrorCode::InvalidConfig:
    case ErrorCode::Io:
        return ErrorCategory::Config;
    }
    return ErrorCategory::Contract;
}

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string &what) : std::runtime_error(what), code_(code) {}

    ErrorCode code() const noexcept { return code_; }
    ErrorCategory category() const noexcept { return category_of(code_); }

private:
    ErrorCode code_;
};

} // namespace ccpool
