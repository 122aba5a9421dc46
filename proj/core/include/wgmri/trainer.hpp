#pragma once

// Alternating critic / generator optimization over unpaired batches.
//
// Generator step t (0-based) draws all of its randomness from a stream
// derived from (seed, t): the critic batches and interpolation weights of
// the preceding critic updates, then the generator batch. Resuming from a
// checkpoint at step t therefore replays exactly what an uninterrupted run
// would have done.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "wgmri/metrics.hpp"
#include "wgmri/networks.hpp"
#include "wgmri/objectives.hpp"
#include "wgmri/phantom.hpp"

namespace wgmri {

struct TrainerConfig {
  int64_t batch_size = 4;
  double learning_rate = 1e-4;
  // Critic step size; the generator's when unset.
  std::optional<double> critic_learning_rate;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  int64_t total_gen_steps = 1000;
  uint64_t seed = 0;
  ObjectiveConfig objective;
  int64_t eval_every = 100;
  // Draw labels by input index instead of independently (paired regime).
  bool paired_batches = false;
  GeneratorArch generator = GeneratorArch::unrolled_default();
  CriticArch critic;

  void validate() const;
};

std::string trainer_config_to_json(const TrainerConfig& config);
// Missing keys keep their defaults; unknown or mistyped keys throw
// ParameterError naming the key.
TrainerConfig trainer_config_from_json(const std::string& json_text);

struct Batch {
  torch::Tensor x_zf;    // [B, H, W] complex
  KSpaceBatch kspace;
  torch::Tensor labels;  // [B, H, W] complex, or real magnitudes
  std::vector<int64_t> input_index;
  std::vector<int64_t> label_index;
  bool paired = false;   // labels[j] is the ground truth of input j
};

// b inputs uniformly from the input set and, independently, b labels from
// the label set (with replacement). With `paired`, labels follow the input
// indices instead; requires the paired regime.
Batch sample_unpaired_batch(const DatasetSplit& split, int64_t b, std::mt19937_64& engine, bool paired = false);

// Critic view of an image batch: two channels for complex labels, one
// magnitude channel otherwise.
torch::Tensor critic_input(const torch::Tensor& images, LabelMode mode);

struct MetricRow {
  int64_t step = 0;
  double lambda = 0;
  double loss_d = 0;
  double loss_g = 0;
  double gp = 0;
  std::optional<double> eval_psnr;
  std::optional<double> eval_ssim;
};

struct TrainState {
  TrainerConfig config;
  LabelMode label_mode = LabelMode::complex;
  int64_t step = 0;               // completed generator steps
  int64_t critic_steps = 0;       // completed critic updates
  int64_t critic_evaluations = 0; // critic forward passes, any purpose
  Generator generator{nullptr};
  Critic critic{nullptr};
  std::unique_ptr<torch::optim::Adam> opt_g;
  std::unique_ptr<torch::optim::Adam> opt_d;
  std::vector<MetricRow> history;
};

TrainState make_train_state(const TrainerConfig& config, LabelMode label_mode);

struct CriticStepResult {
  double loss = 0;
  double gp = 0;
  double score_gap = 0;  // mean D(real) - mean D(fake)
};

struct GeneratorStepResult {
  double loss = 0;
  double lambda = 0;
};

// One Adam update of the critic. Interpolation weights are drawn from
// `engine`, one per sample. Generator parameters and buffers are untouched.
CriticStepResult critic_step(TrainState& state, const Batch& batch, std::mt19937_64& engine);
// One Adam update of the generator at l1 weight l1_weight(objective, state.step).
// Critic parameters are untouched. Does not advance state.step.
GeneratorStepResult generator_step(TrainState& state, const Batch& batch);

// Generator in inference mode (frozen normalization statistics).
torch::Tensor reconstruct(Generator& generator, const InputRecord& record);
EvalReport evaluate_generator(Generator& generator, const DatasetSplit& heldout);

class MetricLog {
 public:
  static constexpr const char* kHeader = "step,lambda,loss_d,loss_g,gp,eval_psnr,eval_ssim";

  // Appends when the file already has a header, otherwise starts a new file.
  explicit MetricLog(const std::filesystem::path& path);
  void write(const MetricRow& row);

 private:
  std::filesystem::path path_;
  std::unique_ptr<std::ofstream> out_;
};

std::vector<MetricRow> read_metric_log(const std::filesystem::path& path);

struct TrainOptions {
  const DatasetSplit* heldout = nullptr;  // evaluation set; never the labels
  std::filesystem::path metrics_csv;      // empty: no log file
  std::filesystem::path checkpoint_path;  // empty: no checkpoints
  int64_t checkpoint_every = 0;           // 0: only at the end
  std::function<void(const MetricRow&)> on_row;
};

// Runs generator steps state.step .. until_step - 1.
void train_until(TrainState& state, const DatasetSplit& split, int64_t until_step, const TrainOptions& options = {});

// Fresh state, then config.total_gen_steps generator steps.
TrainState train(const TrainerConfig& config, const DatasetSplit& split, const TrainOptions& options = {});

void save_checkpoint(const TrainState& state, const std::filesystem::path& path);
TrainState load_checkpoint(const std::filesystem::path& path);
// Loads into an existing state; throws DimensionError naming the first
// array whose shape differs from the state's architecture.
void restore_checkpoint(TrainState& state, const std::filesystem::path& path);

}  // namespace wgmri
