#pragma once

// Generator (plain ResNet with hard DC, or unrolled with soft DC) and
// critic networks. Complex images travel as [B, H, W] complex tensors;
// the convolutional parts see them as two real channels.

#include <cstdint>
#include <vector>

#include <torch/torch.h>

namespace wgmri {

// [..., H, W] complex -> [..., 2, H, W] real (channel 0 real, 1 imaginary).
torch::Tensor complex_to_channels(const torch::Tensor& x);
// Inverse of complex_to_channels.
torch::Tensor channels_to_complex(const torch::Tensor& channels);
// [..., H, W] -> [..., 1, H, W] pointwise modulus.
torch::Tensor magnitude_view(const torch::Tensor& x);

// Batched acquisition data for the DC layers.
struct KSpaceBatch {
  torch::Tensor samples;  // [B, C, H, W] complex
  torch::Tensor mask;     // [B, H, W] real
  torch::Tensor maps;     // [B, C, H, W] or [C, H, W] complex
};

enum class GeneratorKind { plain, unrolled };

struct GeneratorArch {
  GeneratorKind kind = GeneratorKind::unrolled;
  int residual_blocks = 2;      // per unroll iteration (unrolled) or total (plain)
  int tail_convs = 3;           // plain only
  int unroll_iterations = 3;    // unrolled only
  int feature_width = 32;
  double mu_init = -1.0;        // unrolled only

  static GeneratorArch plain_default();
  static GeneratorArch unrolled_default();
};

// conv -> BN -> ReLU -> conv, add the skip, then BN -> ReLU.
class ResidualBlockImpl : public torch::nn::Module {
 public:
  explicit ResidualBlockImpl(int64_t width);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::Conv2d conv1_{nullptr}, conv2_{nullptr};
  torch::nn::BatchNorm2d bn1_{nullptr}, bn2_{nullptr};
};
TORCH_MODULE(ResidualBlock);

// v + out_conv(RB(...RB(relu(bn(in_conv(v)))))). Maps 2 channels to 2.
class RefinementNetImpl : public torch::nn::Module {
 public:
  RefinementNetImpl(int64_t width, int residual_blocks, int tail_convs);
  torch::Tensor forward(const torch::Tensor& channels);

 private:
  torch::nn::Conv2d head_{nullptr};
  torch::nn::BatchNorm2d head_bn_{nullptr};
  torch::nn::Sequential body_{nullptr};
  torch::nn::Sequential tail_{nullptr};
  torch::nn::Conv2d out_{nullptr};
};
TORCH_MODULE(RefinementNet);

struct ForwardStats {
  int dc_calls = 0;
  int block_calls = 0;
};

class GeneratorImpl : public torch::nn::Module {
 public:
  explicit GeneratorImpl(const GeneratorArch& arch);

  // x_zf [B, H, W] complex -> [B, H, W] complex.
  torch::Tensor forward(const torch::Tensor& x_zf, const KSpaceBatch& k);

  const GeneratorArch& arch() const { return arch_; }
  // Learnable soft-DC step sizes, one per iteration (unrolled only).
  const torch::Tensor& mu() const { return mu_; }
  RefinementNet block(size_t i) const { return blocks_.at(i); }
  const ForwardStats& last_forward_stats() const { return stats_; }

 private:
  GeneratorArch arch_;
  std::vector<RefinementNet> blocks_;
  torch::Tensor mu_;
  ForwardStats stats_;
};
TORCH_MODULE(Generator);

struct CriticArch {
  int input_channels = 2;
  int base_features = 4;
  int strided_layers = 4;                 // stride 2, features doubling from base
  std::vector<int> tail_features{64, 64, 1};
  double leaky_slope = 0.2;

  int layers() const { return strided_layers + static_cast<int>(tail_features.size()); }
};

// Plain CNN: leaky ReLU after every layer but the last, then a spatial mean.
class CriticImpl : public torch::nn::Module {
 public:
  explicit CriticImpl(const CriticArch& arch);

  // [B, C, H, W] real -> [B] scores.
  torch::Tensor forward(const torch::Tensor& x);

  const CriticArch& arch() const { return arch_; }

 private:
  CriticArch arch_;
  std::vector<torch::nn::Conv2d> convs_;
};
TORCH_MODULE(Critic);

// Small fully connected critic for point clouds in R^k.
class PointCriticImpl : public torch::nn::Module {
 public:
  PointCriticImpl(int64_t dim, int64_t hidden);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::Linear l1_{nullptr}, l2_{nullptr}, l3_{nullptr};
};
TORCH_MODULE(PointCritic);

}  // namespace wgmri
