#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace nerfloc {

enum class ErrorCode {
  InvalidArgument,
  NonPositiveDepth,
  PixelOutOfBounds,
  DimensionMismatch,
  Io,
  BadMagic,
  VersionUnsupported,
  ChecksumMismatch,
  EmptyDataset,
  DegenerateBounds,
  EmptyScene,
  BadParams,
  TooSmall,
  AllFiltered,
  BadCount,
  EmptyDatabase,
  NoDepth,
  InsufficientCorrespondences,
  InsufficientMatches,
  Degenerate,
  NoConsensus,
  NoPairs,
  Config,
};

std::string_view to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace nerfloc
