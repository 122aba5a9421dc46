#pragma once

#include <cstdint>
#include <random>

#include <ATen/core/Generator.h>

namespace wgmri {

// Stream tags so that independent consumers of one user seed never share a
// random sequence.
enum class SeedStream : std::uint64_t {
  input_phantom = 1,
  label_phantom = 2,
  mask = 3,
  noise = 4,
  heldout_phantom = 5,
  heldout_mask = 6,
  training_step = 7,
  init = 8,
  split = 9,
};

std::uint64_t splitmix64(std::uint64_t x);

// Deterministic, well-mixed seed for item `index` of `stream` under `base`.
std::uint64_t derive_seed(std::uint64_t base, SeedStream stream, std::uint64_t index = 0);

std::mt19937_64 make_engine(std::uint64_t seed);

at::Generator make_torch_generator(std::uint64_t seed);

// Uniform double in [0, 1) built from the top 53 bits; independent of the
// standard library's distribution implementation.
double uniform01(std::mt19937_64& engine);

}  // namespace wgmri
