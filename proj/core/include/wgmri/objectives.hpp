#pragma once

// Training objectives: WGAN-GP critic and generator losses, the gradient
// penalty, the hybrid l1 objective with its lambda schedule, and the EGAN /
// LSGAN baselines. All reductions are means.

#include <cstdint>
#include <functional>
#include <string>
#include <utility>

#include <torch/torch.h>

namespace wgmri {

enum class ObjectiveFamily { wgan_gp, egan, lsgan, l1_only };

std::string to_string(ObjectiveFamily f);
ObjectiveFamily objective_family_from_string(const std::string& s);

struct LambdaSchedule {
  int64_t pure_l1_steps = 500;
  int64_t ramp_end_step = 1000;
  double final_lambda = 0.99;
};

struct ObjectiveConfig {
  ObjectiveFamily family = ObjectiveFamily::wgan_gp;
  double eta = 10.0;
  // When set, the generator adds the paired l1 term weighted by the schedule.
  bool hybrid = false;
  LambdaSchedule lambda_schedule;
  int critic_steps_per_gen_step = 5;

  bool adversarial() const { return family != ObjectiveFamily::l1_only; }
  void validate() const;
};

// Weight of the l1 term at generator step `step`: 1 up to pure_l1_steps,
// final_lambda from ramp_end_step on, linear in between.
double lambda_at(const LambdaSchedule& schedule, int64_t step);

// l1 weight actually used by the trainer at `step` for this configuration.
double l1_weight(const ObjectiveConfig& config, int64_t step);

using CriticFn = std::function<torch::Tensor(const torch::Tensor&)>;

// x_hat = alpha * fake + (1 - alpha) * real, one alpha per sample.
torch::Tensor interpolate(const torch::Tensor& fake, const torch::Tensor& real, const torch::Tensor& alphas);

// eta * mean_b (||grad_x D(x_hat_b)|| - 1)^2, differentiable w.r.t. the
// critic's parameters (the input gradient is built with create_graph).
torch::Tensor gradient_penalty(const CriticFn& critic, const torch::Tensor& fake, const torch::Tensor& real,
                               const torch::Tensor& alphas, double eta);

// mean(fake) - mean(real) + gp.
torch::Tensor critic_loss(const torch::Tensor& fake_scores, const torch::Tensor& real_scores,
                          const torch::Tensor& gp);
// -mean(fake).
torch::Tensor generator_loss_wgan(const torch::Tensor& fake_scores);

// Mean over samples of sum(|re| + |im|) / pixel count. Works for complex
// [B, H, W] and real [B, ..., H, W] batches.
torch::Tensor l1_distance(const torch::Tensor& output, const torch::Tensor& label);

// -(1 - lambda) * mean(fake) + lambda * l1. With lambda == 1 the critic term
// is dropped entirely and `fake_scores` may be undefined.
torch::Tensor hybrid_generator_loss(const torch::Tensor& fake_scores, const torch::Tensor& output,
                                    const torch::Tensor& label, double lambda);

struct GanLosses {
  torch::Tensor critic;
  torch::Tensor generator;
};

// Sigmoid cross-entropy on logits: critic BCE(real, 1) + BCE(fake, 0);
// non-saturating generator BCE(fake, 1).
GanLosses egan_losses(const torch::Tensor& fake_scores, const torch::Tensor& real_scores);
// Critic 1/2 mean((real - 1)^2) + 1/2 mean(fake^2); generator 1/2 mean((fake - 1)^2).
GanLosses lsgan_losses(const torch::Tensor& fake_scores, const torch::Tensor& real_scores);

}  // namespace wgmri
