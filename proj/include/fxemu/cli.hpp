#pragma once

namespace fxemu {

/// Entry point for the fxemu tool (subcommands: fixture, quantize, run,
/// sweep). Returns the process exit code: 0 success, 2 config error,
/// 3 pipeline error, 4 contract violation, 5 file-format error,
/// 1 anything unexpected.
int run_cli(int argc, const char* const* argv);

} // namespace fxemu
