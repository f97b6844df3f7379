#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace vpkit {

// Values are mirrored by vpk_status in vpkit.h; keep the two in sync.
enum class ErrorCode : int {
    InvalidArgument = 1,
    OutOfBounds,
    BadImage,
    Degenerate,
    MalformedRle,
    EmptyPromptSet,
    CapacityExceeded,
    BadGradShape,
    BadParamsFile,
    EmptyMask,
    NoSampleablePixels,
    MalformedAnnotation,
    IoFailure,
    UnknownDomain,
    EmptyRegions,
    IncompleteResponse,
    MalformedResponse,
    Unsupported,
    DuplicateId,
    ImageTooSmall,
    BadAlpha,
    ServiceUnavailable,
    AuthError,
    UnscorableResponse,
    Misaligned,
    DegenerateReference,
    EmptyText,
    DegenerateIdf,
    UnknownTask,
    NoOverlap,
    NotFound,
    BadEdit,
    CorruptLog,
};

std::string_view error_code_name(ErrorCode code) noexcept;

class Error : public std::runtime_error {
  public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(std::string(error_code_name(code)) + ": " + message), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

  private:
    ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) { throw Error(code, message); }

} // namespace vpkit
