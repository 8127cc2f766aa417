#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace powergan {

enum class ErrorCode {
    SeriesTooShort,
    EmptyClass,
    InvalidLabel,
    InvalidStage,
    InvalidShape,
    InvalidPairing,
    EmptyBatch,
    EmptyDataset,
    EmptyCorpus,
    IncompatibleCheckpoint,
    GenerationStarved,
    InvalidDistribution,
    InsufficientClasses,
    NonFiniteLoss,
    InvalidConfig,
    IoError,
};

constexpr std::string_view to_string(ErrorCode code) {
    switch (code) {
        case ErrorCode::SeriesTooShort: return "SeriesTooShort";
        case ErrorCode::EmptyClass: return "EmptyClass";
        case ErrorCode::InvalidLabel: return "InvalidLabel";
        case ErrorCode::InvalidStage: return "InvalidStage";
        case ErrorCode::InvalidShape: return "InvalidShape";
        case ErrorCode::InvalidPairing: return "InvalidPairing";
        case ErrorCode::EmptyBatch: return "EmptyBatch";
        case ErrorCode::EmptyDataset: return "EmptyDataset";
        case ErrorCode::EmptyCorpus: return "EmptyCorpus";
        case ErrorCode::IncompatibleCheckpoint: return "IncompatibleCheckpoint";
        case ErrorCode::GenerationStarved: return "GenerationStarved";
        case ErrorCode::InvalidDistribution: return "InvalidDistribution";
        case ErrorCode::InsufficientClasses: return "InsufficientClasses";
        case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
        case ErrorCode::InvalidConfig: return "InvalidConfig";
        case ErrorCode::IoError: return "IoError";
    }
    return "Unknown";
}

/// Single exception type for every failure the library reports; callers branch on code().
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

}  // namespace powergan
