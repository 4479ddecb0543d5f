#pragma once

namespace kexp {

// Entry point behind the kidexpr binary. Subcommands:
//   train | eval | experiments | augment | synth-toy | gradcheck | gradcam
// Exit codes: 0 success, 1 usage error, 2 data/format error, 3 divergence,
// 4 gradient-check failure.
int run_cli(int argc, const char* const* argv);

}  // namespace kexp
