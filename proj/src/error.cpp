#include "vpkit/error.hpp"

namespace vpkit {

std::string_view error_code_name(ErrorCode code) noexcept {
    switch (code) {
    case ErrorCode::InvalidArgument:
        return "InvalidArgument";
    case ErrorCode::OutOfBounds:
        return "OutOfBounds";
    case ErrorCode::BadImage:
        return "BadImage";
    case ErrorCode::Degenerate:
        return "Degenerate";
    case ErrorCode::MalformedRle:
        return "MalformedRle";
    case ErrorCode::EmptyPromptSet:
        return "EmptyPromptSet";
    case ErrorCode::CapacityExceeded:
        return "CapacityExceeded";
    case ErrorCode::BadGradShape:
        return "BadGradShape";
    case ErrorCode::BadParamsFile:
        return "BadParamsFile";
    case ErrorCode::EmptyMask:
        return "EmptyMask";
    case ErrorCode::NoSampleablePixels:
        return "NoSampleablePixels";
    case ErrorCode::MalformedAnnotation:
        return "MalformedAnnotation";
    case ErrorCode::IoFailure:
        return "IoFailure";
    case ErrorCode::UnknownDomain:
        return "UnknownDomain";
    case ErrorCode::EmptyRegions:
        return "EmptyRegions";
    case ErrorCode::IncompleteResponse:
        return "IncompleteResponse";
    case ErrorCode::MalformedResponse:
        return "MalformedResponse";
    case ErrorCode::Unsupported:
        return "Unsupported";
    case ErrorCode::DuplicateId:
        return "DuplicateId";
    case ErrorCode::ImageTooSmall:
        return "ImageTooSmall";
    case ErrorCode::BadAlpha:
        return "BadAlpha";
    case ErrorCode::ServiceUnavailable:
        return "ServiceUnavailable";
    case ErrorCode::AuthError:
        return "AuthError";
    case ErrorCode::UnscorableResponse:
        return "UnscorableResponse";
    case ErrorCode::Misaligned:
        return "Misaligned";
    case ErrorCode::DegenerateReference:
        return "DegenerateReference";
    case ErrorCode::EmptyText:
        return "EmptyText";
    case ErrorCode::DegenerateIdf:
        return "DegenerateIdf";
    case ErrorCode::UnknownTask:
        return "UnknownTask";
    case ErrorCode::NoOverlap:
        return "NoOverlap";
    case ErrorCode::NotFound:
        return "NotFound";
    case ErrorCode::BadEdit:
        return "BadEdit";
    case ErrorCode::CorruptLog:
        return "CorruptLog";
    }
    return "Unknown";
}

} // namespace vpkit
