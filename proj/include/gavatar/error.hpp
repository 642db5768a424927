// Copyright Contributors to the gavatar project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace gav {

enum class ErrorCode {
    NotARotation,
    ParseError,
    ValidationError,
    JointCountMismatch,
    ShapeMismatch,
    SingularBlend,
    DegenerateFacet,
    EmptyCloud,
    NoValidQuadruple,
    DegreeMismatch,
    NoCachedForward,
    ZeroDirection,
    NonFiniteGradient,
    NonFiniteLoss,
    MaxGaussiansExceeded,
    MissingFile,
    SchemaVersionMismatch,
    UnsupportedPlyVariant,
    VersionMismatch,
    CorruptSection,
    IoError,
    InvalidArgument,
};

inline std::string_view to_string(ErrorCode code) {
    switch (code) {
    case ErrorCode::NotARotation: return "NotARotation";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::ValidationError: return "ValidationError";
    case ErrorCode::JointCountMismatch: return "JointCountMismatch";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::SingularBlend: return "SingularBlend";
    case ErrorCode::DegenerateFacet: return "DegenerateFacet";
    case ErrorCode::EmptyCloud: return "EmptyCloud";
    case ErrorCode::NoValidQuadruple: return "NoValidQuadruple";
    case ErrorCode::DegreeMismatch: return "DegreeMismatch";
    case ErrorCode::NoCachedForward: return "NoCachedForward";
    case ErrorCode::ZeroDirection: return "ZeroDirection";
    case ErrorCode::NonFiniteGradient: return "NonFiniteGradient";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::MaxGaussiansExceeded: return "MaxGaussiansExceeded";
    case ErrorCode::MissingFile: return "MissingFile";
    case ErrorCode::SchemaVersionMismatch: return "SchemaVersionMismatch";
    case ErrorCode::UnsupportedPlyVariant: return "UnsupportedPlyVariant";
    case ErrorCode::VersionMismatch: return "VersionMismatch";
    case ErrorCode::CorruptSection: return "CorruptSection";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    }
    return "Unknown";
}

/// Every failure raised by the library carries one of the codes above; the
/// message is human readable and names the offending index or path.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

    /// The message without the code prefix.
    std::string detail() const { return std::string(what()).substr(to_string(code_).size() + 2); }

private:
    ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
    throw Error(code, message);
}

} // namespace gav
