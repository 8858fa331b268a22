#pragma once

#include <iosfwd>
#include <string>

#include "nkscreen/config.hpp"

namespace nkscreen {

/// Exit codes of the command-line tool.
enum ExitCode : int { kExitOk = 0, kExitError = 1, kExitUsage = 2, kExitUnboundedBudget = 3 };

// Each command reads and writes under config.out_dir and finishes by writing
// manifest_<command>.json. They throw nkscreen::Error on failure.

/// Samples train and test states and labels the N-1 dataset of the train states.
void cmd_dataset(const RunConfig& config, std::ostream& log);
/// Trains the surrogate and the generator, and calibrates the capture bound.
void cmd_train(const RunConfig& config, std::ostream& log);
/// Screens every test state with config.method.
void cmd_screen(const RunConfig& config, std::ostream& log);
/// Top-m, composition and (with oracle labels) coverage tables from the screening runs.
void cmd_evaluate(const RunConfig& config, std::ostream& log);
/// Runtime scaling of exhaustive, surrogate-ranked and generative screening on the first test state.
void cmd_bench(const RunConfig& config, std::ostream& log);
/// Exhaustive labeling of the test states over the k range.
void cmd_oracle(const RunConfig& config, std::ostream& log);

/// Dispatches by name and maps errors to exit codes with a message on err.
int run_command(const std::string& name, const RunConfig& config, std::ostream& log, std::ostream& err);

}  // namespace nkscreen
