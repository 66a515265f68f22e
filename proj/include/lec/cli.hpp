#pragma once

// Command-line front end: synth / train / eval / infer / gradcheck / plot.
// Exit codes: 0 success, 1 configuration errors, 2 runtime failures; errors
// are emitted as one JSON object on stderr.

namespace lec {

int run_cli(int argc, char** argv);

}  // namespace lec
