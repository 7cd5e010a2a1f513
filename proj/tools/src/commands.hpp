#pragma once

#include <string>
#include <vector>

#include "dpmusic/error.hpp"
#include "dpmusic/midi_io.hpp"

namespace dpmusic::cli {

enum ExitCode : int {
  kExitOk = 0,
  kExitUsage = 1,
  kExitData = 2,
  kExitInternal = 3,
};

int exit_code_for(ErrorCode code);

// Parses argv and runs one subcommand; returns the process exit code.
int run(int argc, const char* const* argv);

// Notes with onset inside the first `bars` 4/4 bars. PromptTooShort when
// the piece spans fewer bars or none of its notes start in the window.
std::vector<NoteEvent> truncate_prompt(const std::vector<NoteEvent>& events, int bars, int resolution);

// Piano roll; the region before `shade_ticks` is shaded.
std::string piano_roll_svg(const std::vector<NoteEvent>& events, int resolution, int shade_ticks);

}  // namespace dpmusic::cli
