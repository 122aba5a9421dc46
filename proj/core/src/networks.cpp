#include "wgmri/networks.hpp"

#include "wgmri/errors.hpp"
#include "wgmri/kspace.hpp"

namespace wgmri {

namespace nn = torch::nn;

torch::Tensor complex_to_channels(const torch::Tensor& x) {
  if (!x.is_complex()) throw DimensionError("complex_to_channels expects a complex tensor");
  return torch::view_as_real(x).movedim(-1, -3).contiguous();
}

torch::Tensor channels_to_complex(const torch::Tensor& channels) {
  if (channels.dim() < 3 || channels.size(-3) != 2) {
    throw DimensionError("channels_to_complex expects [..., 2, H, W]");
  }
  return torch::view_as_complex(channels.movedim(-3, -1).contiguous());
}

torch::Tensor magnitude_view(const torch::Tensor& x) { return x.abs().unsqueeze(-3); }

GeneratorArch GeneratorArch::plain_default() {
  GeneratorArch a;
  a.kind = GeneratorKind::plain;
  a.residual_blocks = 5;
  a.tail_convs = 3;
  return a;
}

GeneratorArch GeneratorArch::unrolled_default() {
  GeneratorArch a;
  a.kind = GeneratorKind::unrolled;
  a.residual_blocks = 2;
  a.unroll_iterations = 3;
  return a;
}

namespace {

nn::Conv2d conv3x3(int64_t in, int64_t out, int64_t stride = 1) {
  return nn::Conv2d(nn::Conv2dOptions(in, out, 3).stride(stride).padding(1));
}

}  // namespace

ResidualBlockImpl::ResidualBlockImpl(int64_t width)
    : conv1_(register_module("conv1", conv3x3(width, width))),
      conv2_(register_module("conv2", conv3x3(width, width))),
      bn1_(register_module("bn1", nn::BatchNorm2d(width))),
      bn2_(register_module("bn2", nn::BatchNorm2d(width))) {}

torch::Tensor ResidualBlockImpl::forward(const torch::Tensor& x) {
  auto h = torch::relu(bn1_(conv1_(x)));
  h = conv2_(h);
  return torch::relu(bn2_(x + h));
}

RefinementNetImpl::RefinementNetImpl(int64_t width, int residual_blocks, int tail_convs) {
  if (width < 1 || residual_blocks < 0 || tail_convs < 1) throw ParameterError("invalid refinement network shape");
  head_ = register_module("head", conv3x3(2, width));
  head_bn_ = register_module("head_bn", nn::BatchNorm2d(width));
  body_ = register_module("body", nn::Sequential());
  for (int i = 0; i < residual_blocks; ++i) body_->push_back(ResidualBlock(width));
  tail_ = register_module("tail", nn::Sequential());
  for (int i = 0; i + 1 < tail_convs; ++i) {
    tail_->push_back(conv3x3(width, width));
    tail_->push_back(nn::BatchNorm2d(width));
    tail_->push_back(nn::Functional(torch::relu));
  }
  out_ = register_module("out", conv3x3(width, 2));
  // Each block starts as the identity, so an untrained generator returns its
  // data-consistent input in training and inference mode alike.
  torch::NoGradGuard no_grad;
  out_->weight.zero_();
  out_->bias.zero_();
}

torch::Tensor RefinementNetImpl::forward(const torch::Tensor& channels) {
  auto h = torch::relu(head_bn_(head_(channels)));
  if (!body_->is_empty()) h = body_->forward(h);
  if (!tail_->is_empty()) h = tail_->forward(h);
  return channels + out_(h);
}

GeneratorImpl::GeneratorImpl(const GeneratorArch& arch) : arch_(arch) {
  if (arch.feature_width < 1) throw ParameterError("generator feature width must be >= 1");
  if (arch.kind == GeneratorKind::plain) {
    blocks_.push_back(register_module("net", RefinementNet(arch.feature_width, arch.residual_blocks, arch.tail_convs)));
  } else {
    if (arch.unroll_iterations < 1) throw ParameterError("unrolled generator needs K >= 1");
    for (int k = 0; k < arch.unroll_iterations; ++k) {
      blocks_.push_back(
          register_module("block" + std::to_string(k), RefinementNet(arch.feature_width, arch.residual_blocks, 1)));
    }
    mu_ = register_parameter("mu", torch::full({arch.unroll_iterations}, arch.mu_init));
  }
}

torch::Tensor GeneratorImpl::forward(const torch::Tensor& x_zf, const KSpaceBatch& k) {
  if (x_zf.dim() != 3 || !x_zf.is_complex()) throw DimensionError("generator input must be [B, H, W] complex");
  if (k.samples.dim() != 4 || k.samples.size(0) != x_zf.size(0) || k.samples.size(-2) != x_zf.size(-2) ||
      k.samples.size(-1) != x_zf.size(-1)) {
    throw DimensionError("generator k-space batch does not match the image batch");
  }
  stats_ = ForwardStats{};
  if (arch_.kind == GeneratorKind::plain) {
    auto refined = channels_to_complex(blocks_[0]->forward(complex_to_channels(x_zf)));
    ++stats_.block_calls;
    ++stats_.dc_calls;
    return ops::hard_dc(refined, k.samples, k.maps, k.mask);
  }
  auto x = x_zf;
  for (size_t i = 0; i < blocks_.size(); ++i) {
    auto v = ops::soft_dc(x, x_zf, k.maps, k.mask, mu_[static_cast<int64_t>(i)]);
    ++stats_.dc_calls;
    x = channels_to_complex(blocks_[i]->forward(complex_to_channels(v)));
    ++stats_.block_calls;
  }
  return x;
}

CriticImpl::CriticImpl(const CriticArch& arch) : arch_(arch) {
  if (arch.input_channels < 1 || arch.base_features < 1) throw ParameterError("invalid critic shape");
  if (arch.tail_features.empty() || arch.tail_features.back() != 1) {
    throw ParameterError("critic's last layer must have one feature map");
  }
  int64_t in = arch.input_channels;
  int64_t features = arch.base_features;
  for (int i = 0; i < arch.strided_layers; ++i) {
    convs_.push_back(register_module("conv" + std::to_string(convs_.size()), conv3x3(in, features, 2)));
    in = features;
    features *= 2;
  }
  for (int f : arch.tail_features) {
    convs_.push_back(register_module("conv" + std::to_string(convs_.size()), conv3x3(in, f)));
    in = f;
  }
}

torch::Tensor CriticImpl::forward(const torch::Tensor& x) {
  if (x.dim() != 4 || x.size(1) != arch_.input_channels) {
    throw DimensionError("critic expects [B, " + std::to_string(arch_.input_channels) + ", H, W] input");
  }
  auto h = x;
  for (size_t i = 0; i < convs_.size(); ++i) {
    h = convs_[i](h);
    if (i + 1 < convs_.size()) h = torch::leaky_relu(h, arch_.leaky_slope);
  }
  return h.mean({1, 2, 3});
}

PointCriticImpl::PointCriticImpl(int64_t dim, int64_t hidden)
    : l1_(register_module("l1", nn::Linear(dim, hidden))),
      l2_(register_module("l2", nn::Linear(hidden, hidden))),
      l3_(register_module("l3", nn::Linear(hidden, 1))) {
  // Starting from a flat critic lets the data pick the sign of the slope. In
  // 1-D a random slope of the wrong sign cannot flip without crossing zero
  // gradient, which the penalty blocks.
  torch::NoGradGuard no_grad;
  l3_->weight.zero_();
  l3_->bias.zero_();
}

torch::Tensor PointCriticImpl::forward(const torch::Tensor& x) {
  auto h = torch::leaky_relu(l1_(x), 0.2);
  h = torch::leaky_relu(l2_(h), 0.2);
  return l3_(h).squeeze(-1);
}

}  // namespace wgmri
