#pragma once

// Single-file container of named n-dimensional arrays plus a JSON metadata
// block. Layout (all integers little-endian):
//
//   8 bytes   magic "WGMRARC1"
//   u64       header length L
//   L bytes   JSON header {"metadata": {...}, "arrays": [{name, dtype, shape, offset, nbytes}, ...]}
//   ...       raw array payloads, offsets relative to the end of the header
//
// Supported dtypes: float32, float64, complex64, complex128, int64.

#include <filesystem>
#include <string>
#include <vector>

#include <torch/torch.h>

namespace wgmri {

class ArrayArchive {
 public:
  // Stores a contiguous CPU copy; replaces an existing array of that name.
  void put(const std::string& name, const torch::Tensor& array);
  bool contains(const std::string& name) const;
  // Throws IoError naming the array when it is absent.
  const torch::Tensor& get(const std::string& name) const;
  const std::vector<std::string>& names() const { return names_; }
  size_t size() const { return names_.size(); }

  // Metadata is JSON text (an object).
  const std::string& metadata() const { return metadata_; }
  void set_metadata(std::string json_text) { metadata_ = std::move(json_text); }

  void save(const std::filesystem::path& path) const;
  static ArrayArchive load(const std::filesystem::path& path);

 private:
  std::vector<std::string> names_;
  std::vector<torch::Tensor> arrays_;
  std::string metadata_ = "{}";
};

}  // namespace wgmri
