#pragma once

namespace nerfloc {

enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitConfig = 2,
  kExitIo = 3,
  kExitQualityFloor = 4,
  kExitLocalization = 5,
};

/// Entry point of the `nerfloc` tool: subcommands synth, train, render,
/// localize and eval. Never throws; returns one of ExitCode.
int run_cli(int argc, const char* const* argv);

}  // namespace nerfloc
