#pragma once

#include <ostream>
#include <string>
#include <vector>

#include "shcanet/cli/config.hpp"
#include "shcanet/train/trainer.hpp"

namespace shcanet::cli {

enum ExitCode { kOk = 0, kOperational = 1, kInvalidInput = 2 };

train::TrainOptions train_options(const RunConfig& cfg);

// Model weights are initialized from this stream of the run seed.
std::uint64_t model_seed(std::uint64_t run_seed);

// `args` excludes the program name. Never throws; returns the exit code.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace shcanet::cli
