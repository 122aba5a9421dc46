#include "wgmri/archive.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "wgmri/errors.hpp"

namespace wgmri {

static_assert(std::endian::native == std::endian::little, "archive I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'W', 'G', 'M', 'R', 'A', 'R', 'C', '1'};

std::string dtype_name(torch::ScalarType t) {
  switch (t) {
    case torch::kFloat32: return "float32";
    case torch::kFloat64: return "float64";
    case torch::kComplexFloat: return "complex64";
    case torch::kComplexDouble: return "complex128";
    case torch::kInt64: return "int64";
    default: throw ParameterError(std::string("archive: unsupported dtype ") + c10::toString(t));
  }
}

torch::ScalarType dtype_from(const std::string& name, const std::string& array) {
  if (name == "float32") return torch::kFloat32;
  if (name == "float64") return torch::kFloat64;
  if (name == "complex64") return torch::kComplexFloat;
  if (name == "complex128") return torch::kComplexDouble;
  if (name == "int64") return torch::kInt64;
  throw IoError("archive: array '" + array + "' has unknown dtype '" + name + "'");
}

}  // namespace

void ArrayArchive::put(const std::string& name, const torch::Tensor& array) {
  dtype_name(array.scalar_type());
  auto copy = array.detach().to(torch::kCPU).contiguous().clone();
  auto it = std::find(names_.begin(), names_.end(), name);
  if (it != names_.end()) {
    arrays_[static_cast<size_t>(it - names_.begin())] = copy;
  } else {
    names_.push_back(name);
    arrays_.push_back(copy);
  }
}

bool ArrayArchive::contains(const std::string& name) const {
  return std::find(names_.begin(), names_.end(), name) != names_.end();
}

const torch::Tensor& ArrayArchive::get(const std::string& name) const {
  auto it = std::find(names_.begin(), names_.end(), name);
  if (it == names_.end()) throw IoError("archive: missing array '" + name + "'");
  return arrays_[static_cast<size_t>(it - names_.begin())];
}

void ArrayArchive::save(const std::filesystem::path& path) const {
  nlohmann::json header;
  try {
    header["metadata"] = nlohmann::json::parse(metadata_);
  } catch (const nlohmann::json::exception& e) {
    throw ParameterError(std::string("archive: metadata is not valid JSON: ") + e.what());
  }
  header["arrays"] = nlohmann::json::array();
  uint64_t offset = 0;
  for (size_t i = 0; i < names_.size(); ++i) {
    const auto& a = arrays_[i];
    const uint64_t nbytes = static_cast<uint64_t>(a.numel()) * a.element_size();
    header["arrays"].push_back({{"name", names_[i]},
                                {"dtype", dtype_name(a.scalar_type())},
                                {"shape", a.sizes().vec()},
                                {"offset", offset},
                                {"nbytes", nbytes}});
    offset += nbytes;
  }
  const std::string text = header.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("archive: cannot open '" + path.string() + "' for writing");
  const uint64_t len = text.size();
  out.write(kMagic, sizeof(kMagic));
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& a : arrays_) {
    out.write(static_cast<const char*>(a.data_ptr()), static_cast<std::streamsize>(a.numel() * a.element_size()));
  }
  if (!out) throw IoError("archive: write to '" + path.string() + "' failed");
}

ArrayArchive ArrayArchive::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("archive: cannot open '" + path.string() + "'");
  in.seekg(0, std::ios::end);
  const auto file_size = static_cast<uint64_t>(in.tellg());
  in.seekg(0);

  char magic[8];
  uint64_t len = 0;
  if (file_size < sizeof(magic) + sizeof(len)) throw IoError("archive: '" + path.string() + "' truncated in preamble");
  in.read(magic, sizeof(magic));
  if (std::memcmp(magic, kMagic, sizeof(magic)) != 0) throw IoError("archive: '" + path.string() + "' has bad magic");
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  const uint64_t data_start = sizeof(magic) + sizeof(len) + len;
  if (data_start > file_size) throw IoError("archive: '" + path.string() + "' truncated in header");
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("archive: corrupt header: ") + e.what());
  }

  ArrayArchive archive;
  try {
    archive.metadata_ = header.at("metadata").dump();
    for (const auto& entry : header.at("arrays")) {
      const auto name = entry.at("name").get<std::string>();
      const auto dtype = dtype_from(entry.at("dtype").get<std::string>(), name);
      const auto shape = entry.at("shape").get<std::vector<int64_t>>();
      const auto offset = entry.at("offset").get<uint64_t>();
      const auto nbytes = entry.at("nbytes").get<uint64_t>();
      auto array = torch::empty(shape, torch::TensorOptions().dtype(dtype));
      if (static_cast<uint64_t>(array.numel()) * array.element_size() != nbytes) {
        throw IoError("archive: array '" + name + "' size does not match its shape");
      }
      if (data_start + offset + nbytes > file_size) throw IoError("archive: array '" + name + "' truncated");
      in.seekg(static_cast<std::streamoff>(data_start + offset));
      in.read(static_cast<char*>(array.data_ptr()), static_cast<std::streamsize>(nbytes));
      if (!in) throw IoError("archive: array '" + name + "' unreadable");
      archive.names_.push_back(name);
      archive.arrays_.push_back(array);
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("archive: corrupt header: ") + e.what());
  }
  return archive;
}

}  // namespace wgmri
