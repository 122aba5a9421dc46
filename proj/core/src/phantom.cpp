#include "wgmri/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include <json.hpp>

#include "wgmri/archive.hpp"
#include "wgmri/errors.hpp"
#include "wgmri/rng.hpp"

namespace wgmri {

namespace {

double uniform(std::mt19937_64& e, double lo, double hi) { return lo + (hi - lo) * uniform01(e); }

}  // namespace

Phantom make_phantom(int64_t height, int64_t width, uint64_t seed) {
  if (height < 16 || width < 16) throw ParameterError("phantom size must be at least 16x16");
  auto engine = make_engine(seed);
  const int n = 4 + static_cast<int>(engine() % 9);

  auto opts = torch::TensorOptions().dtype(torch::kFloat64);
  auto ys = torch::linspace(-1.0, 1.0, height, opts).view({height, 1}).expand({height, width});
  auto xs = torch::linspace(-1.0, 1.0, width, opts).view({1, width}).expand({height, width});

  auto magnitude = torch::zeros({height, width}, opts);
  for (int i = 0; i < n; ++i) {
    // The first ellipse is a large body so the support is never tiny.
    const bool body = i == 0;
    const double cy = body ? uniform(engine, -0.1, 0.1) : uniform(engine, -0.55, 0.55);
    const double cx = body ? uniform(engine, -0.1, 0.1) : uniform(engine, -0.55, 0.55);
    const double ay = body ? uniform(engine, 0.55, 0.8) : uniform(engine, 0.08, 0.45);
    const double ax = body ? uniform(engine, 0.55, 0.8) : uniform(engine, 0.08, 0.45);
    const double rot = uniform(engine, 0.0, M_PI);
    const double intensity = uniform(engine, 0.2, 1.0);
    auto dy = ys - cy, dx = xs - cx;
    auto u = dx * std::cos(rot) + dy * std::sin(rot);
    auto v = -dx * std::sin(rot) + dy * std::cos(rot);
    auto inside = ((u / ax).square() + (v / ay).square() <= 1.0).to(torch::kFloat64);
    magnitude += intensity * inside;
  }

  std::array<double, 6> c{};
  for (auto& coef : c) coef = uniform(engine, -1.0, 1.0);
  auto phase = M_PI * c[0] + 0.8 * (c[1] * xs + c[2] * ys) + 0.4 * (c[3] * xs * xs + c[4] * xs * ys + c[5] * ys * ys);

  auto image = torch::polar(magnitude, phase);
  image = image / magnitude.max();
  return Phantom{ComplexImage{image}, PhantomMeta{seed, n}};
}

double window_level(const torch::Tensor& reference) {
  auto mags = reference.abs().to(torch::kFloat64).flatten();
  auto sorted = std::get<0>(mags.sort());
  const auto n = sorted.numel();
  const auto idx = static_cast<int64_t>(std::floor(0.99 * static_cast<double>(n - 1)));
  double level = sorted[idx].item<double>();
  if (level <= 0) level = sorted[n - 1].item<double>();
  if (level <= 0) throw ParameterError("cannot window an all-zero image");
  return level;
}

torch::Tensor window_like(const torch::Tensor& image, const torch::Tensor& reference) {
  const double level = window_level(reference);
  auto mag = image.abs();
  if (!image.is_complex()) return mag.clamp_max(level) / level;
  auto clipped = mag.clamp_max(level);
  auto gain = torch::where(mag > 0, clipped / mag.clamp_min(1e-30), torch::ones_like(mag));
  return image * gain / level;
}

torch::Tensor window_image(const torch::Tensor& image) { return window_like(image, image); }

std::string to_string(Regime r) {
  switch (r) {
    case Regime::paired: return "paired";
    case Regime::partial: return "partial";
    case Regime::disjoint: return "disjoint";
  }
  return "?";
}

std::string to_string(LabelMode m) { return m == LabelMode::complex ? "complex" : "magnitude"; }

Regime regime_from_string(const std::string& s) {
  if (s == "paired") return Regime::paired;
  if (s == "partial") return Regime::partial;
  if (s == "disjoint") return Regime::disjoint;
  throw ParameterError("unknown regime '" + s + "'");
}

LabelMode label_mode_from_string(const std::string& s) {
  if (s == "complex") return LabelMode::complex;
  if (s == "magnitude") return LabelMode::magnitude;
  throw ParameterError("unknown label mode '" + s + "'");
}

namespace {

void check_params(const SplitParams& p) {
  if (p.inputs < 1) throw ParameterError("split needs at least one input");
  switch (p.regime) {
    case Regime::paired:
      if (p.labels != p.inputs) throw ParameterError("paired regime requires N == M");
      break;
    case Regime::partial:
      if (p.labels <= 0 || p.labels >= p.inputs) throw ParameterError("partial regime requires 0 < N < M");
      break;
    case Regime::disjoint:
      if (p.labels < 1) throw ParameterError("disjoint regime requires N >= 1");
      break;
  }
  if (p.coils < 1) throw ParameterError("coil count must be >= 1");
}

torch::Tensor make_label(const torch::Tensor& ground_truth, LabelMode mode) {
  return mode == LabelMode::magnitude ? ground_truth.abs().to(torch::kFloat32).contiguous() : ground_truth;
}

InputRecord make_input(const SplitParams& p, const CoilSensitivities& coils, uint64_t phantom_seed,
                       uint64_t mask_seed) {
  auto phantom = make_phantom(p.height, p.width, phantom_seed);
  auto truth = window_image(phantom.image.data);
  auto mask = generate_poisson_mask(p.height, p.width, p.acceleration, p.calib_size, mask_seed);
  auto k = apply_forward(ComplexImage{truth}, coils, mask, p.noise_sigma, splitmix64(mask_seed));
  InputRecord rec;
  rec.kspace.samples = k.samples.to(torch::kComplexFloat);
  rec.kspace.mask = mask;
  rec.kspace.coils = CoilSensitivities{coils.maps.to(torch::kComplexFloat)};
  rec.x_zf = zero_filled_recon(k).data.to(torch::kComplexFloat);
  rec.ground_truth = truth.to(torch::kComplexFloat);
  rec.seed = phantom_seed;
  return rec;
}

}  // namespace

DatasetSplit build_split(const SplitParams& p) {
  check_params(p);
  auto coils = generate_coil_maps(p.height, p.width, p.coils);

  DatasetSplit split;
  split.regime = p.regime;
  split.label_mode = p.label_mode;
  split.acceleration = p.acceleration;
  split.coils = p.coils;
  split.height = p.height;
  split.width = p.width;
  split.seed = p.seed;

  std::set<uint64_t> input_seeds;
  for (int64_t j = 0; j < p.inputs; ++j) {
    const uint64_t s = derive_seed(p.seed, SeedStream::input_phantom, static_cast<uint64_t>(j));
    input_seeds.insert(s);
    split.inputs.push_back(make_input(p, coils, s, derive_seed(p.seed, SeedStream::mask, static_cast<uint64_t>(j))));
  }

  if (p.regime == Regime::paired) {
    for (int64_t j = 0; j < p.inputs; ++j) {
      split.labels.push_back(make_label(split.inputs[static_cast<size_t>(j)].ground_truth, p.label_mode));
      split.label_seeds.push_back(split.inputs[static_cast<size_t>(j)].seed);
      split.label_source.push_back(j);
    }
  } else if (p.regime == Regime::partial) {
    std::vector<int64_t> idx(static_cast<size_t>(p.inputs));
    std::iota(idx.begin(), idx.end(), int64_t{0});
    auto engine = make_engine(derive_seed(p.seed, SeedStream::split));
    for (int64_t i = 0; i < p.labels; ++i) {
      auto j = i + static_cast<int64_t>(engine() % static_cast<uint64_t>(p.inputs - i));
      std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(j)]);
    }
    std::sort(idx.begin(), idx.begin() + p.labels);
    for (int64_t i = 0; i < p.labels; ++i) {
      const auto& rec = split.inputs[static_cast<size_t>(idx[static_cast<size_t>(i)])];
      split.labels.push_back(make_label(rec.ground_truth, p.label_mode));
      split.label_seeds.push_back(rec.seed);
      split.label_source.push_back(idx[static_cast<size_t>(i)]);
    }
  } else {
    uint64_t counter = 0;
    for (int64_t i = 0; i < p.labels; ++i) {
      uint64_t s = 0;
      do {
        s = derive_seed(p.seed, SeedStream::label_phantom, counter++);
      } while (input_seeds.count(s) != 0);
      auto truth = window_image(make_phantom(p.height, p.width, s).image.data).to(torch::kComplexFloat);
      split.labels.push_back(make_label(truth, p.label_mode));
      split.label_seeds.push_back(s);
      split.label_source.push_back(-1);
    }
  }
  validate_split(split);
  return split;
}

DatasetSplit build_heldout(const SplitParams& params, int64_t count) {
  if (count < 1) throw ParameterError("held-out set needs at least one image");
  auto coils = generate_coil_maps(params.height, params.width, params.coils);
  DatasetSplit split;
  split.regime = Regime::paired;
  split.label_mode = params.label_mode;
  split.acceleration = params.acceleration;
  split.coils = params.coils;
  split.height = params.height;
  split.width = params.width;
  split.seed = params.seed;
  for (int64_t j = 0; j < count; ++j) {
    const auto s = derive_seed(params.seed, SeedStream::heldout_phantom, static_cast<uint64_t>(j));
    split.inputs.push_back(
        make_input(params, coils, s, derive_seed(params.seed, SeedStream::heldout_mask, static_cast<uint64_t>(j))));
    split.labels.push_back(make_label(split.inputs.back().ground_truth, params.label_mode));
    split.label_seeds.push_back(s);
    split.label_source.push_back(j);
  }
  return split;
}

void validate_split(const DatasetSplit& split) {
  const auto m = split.input_count();
  const auto n = split.label_count();
  if (m < 1) throw ParameterError("split has no inputs");
  if (static_cast<int64_t>(split.label_seeds.size()) != n || static_cast<int64_t>(split.label_source.size()) != n) {
    throw ParameterError("split label bookkeeping has inconsistent lengths");
  }
  auto truth_label = [&](int64_t j) { return make_label(split.inputs[static_cast<size_t>(j)].ground_truth, split.label_mode); };
  for (int64_t i = 0; i < n; ++i) {
    const auto& label = split.labels[static_cast<size_t>(i)];
    if (split.label_mode == LabelMode::magnitude && (label.is_complex() || (label < 0).any().item<bool>())) {
      throw ParameterError("magnitude labels must be real and nonnegative");
    }
  }
  std::set<uint64_t> input_seeds;
  for (const auto& rec : split.inputs) input_seeds.insert(rec.seed);

  switch (split.regime) {
    case Regime::paired:
      if (n != m) throw ParameterError("paired split requires N == M");
      for (int64_t j = 0; j < m; ++j) {
        if (split.label_source[static_cast<size_t>(j)] != j || !torch::equal(split.labels[static_cast<size_t>(j)], truth_label(j))) {
          throw ParameterError("paired split: label " + std::to_string(j) + " is not the ground truth of input " + std::to_string(j));
        }
      }
      break;
    case Regime::partial:
      if (!(n > 0 && n < m)) throw ParameterError("partial split requires 0 < N < M");
      for (int64_t i = 0; i < n; ++i) {
        const auto src = split.label_source[static_cast<size_t>(i)];
        if (src < 0 || src >= m || !torch::equal(split.labels[static_cast<size_t>(i)], truth_label(src))) {
          throw ParameterError("partial split: label " + std::to_string(i) + " is not an input ground truth");
        }
      }
      break;
    case Regime::disjoint:
      if (n < 1) throw ParameterError("disjoint split requires N >= 1");
      for (int64_t i = 0; i < n; ++i) {
        if (split.label_source[static_cast<size_t>(i)] != -1 || input_seeds.count(split.label_seeds[static_cast<size_t>(i)])) {
          throw ParameterError("disjoint split: label " + std::to_string(i) + " shares a phantom with the inputs");
        }
      }
      break;
  }
}

namespace {

std::string index_name(const char* prefix, size_t i, const char* field = nullptr) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s/%06zu", prefix, i);
  std::string s(buf);
  if (field) s += std::string("/") + field;
  return s;
}

}  // namespace

void save_split(const DatasetSplit& split, const std::filesystem::path& path) {
  ArrayArchive ar;
  nlohmann::json meta;
  meta["kind"] = "dataset_split";
  meta["regime"] = to_string(split.regime);
  meta["label_mode"] = to_string(split.label_mode);
  meta["acceleration"] = split.acceleration;
  meta["coils"] = split.coils;
  meta["height"] = split.height;
  meta["width"] = split.width;
  meta["seed"] = split.seed;
  meta["inputs"] = split.input_count();
  meta["labels"] = split.label_count();
  meta["label_seeds"] = split.label_seeds;
  meta["label_source"] = split.label_source;
  nlohmann::json inputs = nlohmann::json::array();
  for (size_t i = 0; i < split.inputs.size(); ++i) {
    const auto& rec = split.inputs[i];
    inputs.push_back({{"seed", rec.seed},
                      {"acceleration", rec.kspace.mask.acceleration},
                      {"calib_size", rec.kspace.mask.calib_size}});
    ar.put(index_name("kspace", i), rec.kspace.samples);
    ar.put(index_name("mask", i), rec.kspace.mask.mask);
    ar.put(index_name("x_zf", i), rec.x_zf);
    ar.put(index_name("ground_truth", i), rec.ground_truth);
  }
  meta["input_records"] = inputs;
  if (!split.inputs.empty()) ar.put("coil_maps", split.inputs.front().kspace.coils.maps);
  for (size_t i = 0; i < split.labels.size(); ++i) ar.put(index_name("label", i), split.labels[i]);
  ar.set_metadata(meta.dump());
  ar.save(path);
}

DatasetSplit load_split(const std::filesystem::path& path) {
  auto ar = ArrayArchive::load(path);
  DatasetSplit split;
  try {
    auto meta = nlohmann::json::parse(ar.metadata());
    if (meta.value("kind", "") != "dataset_split") throw IoError("dataset: '" + path.string() + "' is not a dataset archive");
    split.regime = regime_from_string(meta.at("regime").get<std::string>());
    split.label_mode = label_mode_from_string(meta.at("label_mode").get<std::string>());
    split.acceleration = meta.at("acceleration").get<double>();
    split.coils = meta.at("coils").get<int64_t>();
    split.height = meta.at("height").get<int64_t>();
    split.width = meta.at("width").get<int64_t>();
    split.seed = meta.at("seed").get<uint64_t>();
    split.label_seeds = meta.at("label_seeds").get<std::vector<uint64_t>>();
    split.label_source = meta.at("label_source").get<std::vector<int64_t>>();
    const auto m = meta.at("inputs").get<size_t>();
    const auto n = meta.at("labels").get<size_t>();
    const auto& records = meta.at("input_records");
    if (records.size() != m) throw IoError("dataset: field 'input_records' has wrong length");
    CoilSensitivities coils{ar.get("coil_maps")};
    for (size_t i = 0; i < m; ++i) {
      InputRecord rec;
      rec.seed = records[i].at("seed").get<uint64_t>();
      rec.kspace.samples = ar.get(index_name("kspace", i));
      rec.kspace.mask.mask = ar.get(index_name("mask", i));
      rec.kspace.mask.acceleration = records[i].at("acceleration").get<double>();
      rec.kspace.mask.calib_size = records[i].at("calib_size").get<std::array<int64_t, 2>>();
      rec.kspace.coils = coils;
      rec.x_zf = ar.get(index_name("x_zf", i));
      rec.ground_truth = ar.get(index_name("ground_truth", i));
      split.inputs.push_back(std::move(rec));
    }
    for (size_t i = 0; i < n; ++i) split.labels.push_back(ar.get(index_name("label", i)));
  } catch (const nlohmann::json::exception& e) {
    throw IoError("dataset: corrupt metadata in '" + path.string() + "': " + e.what());
  }
  try {
    validate_split(split);
  } catch (const ParameterError& e) {
    throw IoError(std::string("dataset: loaded split fails validation: ") + e.what());
  }
  return split;
}

}  // namespace wgmri
