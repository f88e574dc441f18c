#pragma once

// Reader/writer for the safetensors container: an 8-byte little-endian header
// length, a JSON header mapping tensor names to {dtype, shape, data_offsets},
// then the raw tensor bytes.

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "magnet/error.hpp"

namespace magnet {

static_assert(std::endian::native == std::endian::little, "tensor archives assume a little-endian host");

struct TensorInfo {
  std::string dtype;
  std::vector<std::int64_t> shape;
  std::uint64_t begin = 0;
  std::uint64_t end = 0;

  std::int64_t numel() const {
    std::int64_t n = 1;
    for (auto s : shape) n *= s;
    return n;
  }
};

// Owning float32 tensor.
struct Tensor {
  std::vector<std::int64_t> shape;
  std::vector<float> data;
};

namespace detail {

inline float half_to_float(std::uint16_t h) {
  const std::uint32_t sign = static_cast<std::uint32_t>(h & 0x8000u) << 16;
  std::uint32_t exp = (h >> 10) & 0x1fu;
  std::uint32_t mant = h & 0x3ffu;
  std::uint32_t bits;
  if (exp == 0) {
    if (mant == 0) {
      bits = sign;
    } else {
      // subnormal: renormalize
      exp = 127 - 15 + 1;
      while ((mant & 0x400u) == 0) {
        mant <<= 1;
        --exp;
      }
      mant &= 0x3ffu;
      bits = sign | (exp << 23) | (mant << 13);
    }
  } else if (exp == 0x1f) {
    bits = sign | 0x7f800000u | (mant << 13);
  } else {
    bits = sign | ((exp + 127 - 15) << 23) | (mant << 13);
  }
  return std::bit_cast<float>(bits);
}

inline std::size_t dtype_size(const std::string& dtype) {
  if (dtype == "F32" || dtype == "I32") return 4;
  if (dtype == "F16" || dtype == "BF16") return 2;
  if (dtype == "F64" || dtype == "I64") return 8;
  return 0;
}

}  // namespace detail

class SafeTensorReader {
 public:
  explicit SafeTensorReader(std::filesystem::path path) : path_(std::move(path)) {
    in_.open(path_, std::ios::binary);
    if (!in_) throw IoError("cannot open tensor archive: " + path_.string());
    std::uint64_t header_len = 0;
    in_.read(reinterpret_cast<char*>(&header_len), 8);
    if (!in_) throw FormatError(path_.string(), 0, "truncated archive header");
    const auto file_size = std::filesystem::file_size(path_);
    if (header_len > file_size - 8) throw FormatError(path_.string(), 0, "header length exceeds file size");
    std::string header(header_len, '\0');
    in_.read(header.data(), static_cast<std::streamsize>(header_len));
    data_start_ = 8 + header_len;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(header);
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(path_.string(), 0, std::string("invalid JSON header: ") + e.what());
    }
    if (!j.is_object()) throw FormatError(path_.string(), 0, "header is not a JSON object");
    const std::uint64_t payload = file_size - data_start_;
    for (auto& [name, v] : j.items()) {
      if (name == "__metadata__") {
        for (auto& [k, mv] : v.items())
          if (mv.is_string()) metadata_[k] = mv.get<std::string>();
        continue;
      }
      try {
        TensorInfo info;
        info.dtype = v.at("dtype").get<std::string>();
        info.shape = v.at("shape").get<std::vector<std::int64_t>>();
        auto offs = v.at("data_offsets").get<std::vector<std::uint64_t>>();
        if (offs.size() != 2 || offs[0] > offs[1] || offs[1] > payload)
          throw FormatError(path_.string(), 0, "bad data_offsets for tensor '" + name + "'");
        info.begin = offs[0];
        info.end = offs[1];
        const auto es = detail::dtype_size(info.dtype);
        if (es != 0 && static_cast<std::uint64_t>(info.numel()) * es != info.end - info.begin)
          throw FormatError(path_.string(), 0, "byte size does not match shape for tensor '" + name + "'");
        tensors_.emplace(name, std::move(info));
      } catch (const nlohmann::json::exception& e) {
        throw FormatError(path_.string(), 0, "malformed entry '" + name + "': " + e.what());
      }
    }
  }

  const std::filesystem::path& path() const { return path_; }
  bool contains(const std::string& name) const { return tensors_.count(name) != 0; }
  const std::map<std::string, TensorInfo>& tensors() const { return tensors_; }
  const std::map<std::string, std::string>& metadata() const { return metadata_; }

  const TensorInfo& info(const std::string& name) const {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw LoadError("tensor '" + name + "' missing from " + path_.string());
    return it->second;
  }

  // Reads a tensor as float32, widening F16/BF16/F64 storage.
  Tensor read(const std::string& name) {
    const TensorInfo& ti = info(name);
    std::vector<char> raw(ti.end - ti.begin);
    in_.clear();
    in_.seekg(static_cast<std::streamoff>(data_start_ + ti.begin));
    in_.read(raw.data(), static_cast<std::streamsize>(raw.size()));
    if (!in_) throw IoError("short read for tensor '" + name + "' in " + path_.string());
    Tensor t;
    t.shape = ti.shape;
    const auto n = static_cast<std::size_t>(ti.numel());
    t.data.resize(n);
    if (ti.dtype == "F32") {
      std::memcpy(t.data.data(), raw.data(), n * 4);
    } else if (ti.dtype == "F16") {
      for (std::size_t i = 0; i < n; ++i) {
        std::uint16_t h;
        std::memcpy(&h, raw.data() + 2 * i, 2);
        t.data[i] = detail::half_to_float(h);
      }
    } else if (ti.dtype == "BF16") {
      for (std::size_t i = 0; i < n; ++i) {
        std::uint16_t h;
        std::memcpy(&h, raw.data() + 2 * i, 2);
        t.data[i] = std::bit_cast<float>(static_cast<std::uint32_t>(h) << 16);
      }
    } else if (ti.dtype == "F64") {
      for (std::size_t i = 0; i < n; ++i) {
        double d;
        std::memcpy(&d, raw.data() + 8 * i, 8);
        t.data[i] = static_cast<float>(d);
      }
    } else {
      throw LoadError("tensor '" + name + "' has unsupported dtype " + ti.dtype);
    }
    return t;
  }

 private:
  std::filesystem::path path_;
  std::ifstream in_;
  std::uint64_t data_start_ = 0;
  std::map<std::string, TensorInfo> tensors_;
  std::map<std::string, std::string> metadata_;
};

// Writes float32 tensors. Output is a pure function of the added tensors and
// metadata: names are laid out in sorted order and the header is padded with
// spaces to an 8-byte boundary.
class SafeTensorWriter {
 public:
  void add(const std::string& name, std::vector<std::int64_t> shape, std::span<const float> values) {
    std::int64_t n = 1;
    for (auto s : shape) n *= s;
    if (n != static_cast<std::int64_t>(values.size()))
      throw InputError("tensor '" + name + "': shape does not match value count");
    entries_[name] = Tensor{std::move(shape), std::vector<float>(values.begin(), values.end())};
  }
  void set_metadata(const std::string& key, const std::string& value) { metadata_[key] = value; }

  void write(const std::filesystem::path& path) const {
    nlohmann::json header = nlohmann::json::object();
    if (!metadata_.empty()) header["__metadata__"] = metadata_;
    std::uint64_t offset = 0;
    for (const auto& [name, t] : entries_) {
      const std::uint64_t bytes = t.data.size() * sizeof(float);
      header[name] = {{"dtype", "F32"}, {"shape", t.shape}, {"data_offsets", {offset, offset + bytes}}};
      offset += bytes;
    }
    std::string h = header.dump();
    while (h.size() % 8 != 0) h.push_back(' ');
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write tensor archive: " + path.string());
    const std::uint64_t len = h.size();
    out.write(reinterpret_cast<const char*>(&len), 8);
    out.write(h.data(), static_cast<std::streamsize>(h.size()));
    for (const auto& [name, t] : entries_)
      out.write(reinterpret_cast<const char*>(t.data.data()), static_cast<std::streamsize>(t.data.size() * sizeof(float)));
    if (!out) throw IoError("write failed: " + path.string());
  }

 private:
  std::map<std::string, Tensor> entries_;
  std::map<std::string, std::string> metadata_;
};

}  // namespace magnet
