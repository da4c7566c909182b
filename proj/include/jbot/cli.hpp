#pragma once

// Single-binary command line: generate | pretrain | probe | finetune | score |
// inspect {augment, attention, project2d}. Every error lands on stderr as
// "error: ..." with a nonzero exit code.

namespace jbot {

int run_cli(int argc, const char* const* argv);

}  // namespace jbot
