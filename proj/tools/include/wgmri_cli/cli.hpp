#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>

#include "wgmri/phantom.hpp"
#include "wgmri/trainer.hpp"

namespace wgmri::cli {

enum ExitCode { kOk = 0, kFailure = 1, kUsage = 2 };

struct DatasetConfig {
  SplitParams split;
  int64_t heldout = 32;
  // Load the training split from this archive instead of generating it.
  std::filesystem::path archive;
};

struct RunConfig {
  uint64_t seed = 0;  // drives both the dataset and the trainer
  std::filesystem::path output_dir = "run";
  DatasetConfig dataset;
  TrainerConfig trainer;
  int64_t checkpoint_every = 0;
};

// Missing keys keep their defaults. Unknown keys, wrong types and invalid
// values throw ParameterError naming the field.
RunConfig run_config_from_json(const std::string& text);
// Every field, defaults included.
std::string run_config_to_json(const RunConfig& config);
RunConfig load_run_config(const std::filesystem::path& path);

// Relative paths resolve against $WGMRI_OUTPUT_ROOT when it is set.
std::filesystem::path output_path(const std::filesystem::path& p);

// Magnitude strip (input | reconstruction | reference), each windowed by the
// reference, written as binary 8-bit PGM.
void write_panel(const std::filesystem::path& path, const torch::Tensor& input, const torch::Tensor& reconstruction,
                 const torch::Tensor& reference);

const char* version();

// Full command line entry point; returns the process exit status.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace wgmri::cli
