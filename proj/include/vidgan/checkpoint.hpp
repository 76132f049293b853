// SPDX-License-Identifier: Apache-2.0
//
// Versioned container for named tensors plus a JSON metadata document.
//
// Layout (little-endian):
//   "VGCK"  u32 version  u64 header_bytes  header (JSON)  tensor data  u32 crc32
// The CRC covers every byte before it. The header lists each tensor's name,
// dtype ("f32" or "f64"), shape and byte offset into the data section.

#pragma once

#include <zlib.h>

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vidgan/tensor.hpp"

namespace vidgan {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

class Archive {
 public:
  nlohmann::json meta = nlohmann::json::object();

  void put(const std::string& name, const Tensor<float>& t) { check_new(name); f32_[name] = t; }
  void put(const std::string& name, const Tensor<double>& t) { check_new(name); f64_[name] = t; }

  bool has(const std::string& name) const { return f32_.count(name) || f64_.count(name); }

  const Tensor<float>& f32(const std::string& name) const {
    auto it = f32_.find(name);
    if (it == f32_.end()) throw CheckpointError("checkpoint has no f32 tensor '" + name + "'");
    return it->second;
  }
  const Tensor<double>& f64(const std::string& name) const {
    auto it = f64_.find(name);
    if (it == f64_.end()) throw CheckpointError("checkpoint has no f64 tensor '" + name + "'");
    return it->second;
  }

  template <class T>
  const Tensor<T>& get(const std::string& name) const {
    if constexpr (std::is_same_v<T, float>) {
      return f32(name);
    } else {
      return f64(name);
    }
  }

  std::size_t tensor_count() const { return f32_.size() + f64_.size(); }

  // Writes to a temporary file first and renames, so readers never see a partial file.
  void save(const std::filesystem::path& path) const {
    nlohmann::json table = nlohmann::json::array();
    std::string data;
    auto append = [&](const std::string& name, const char* dtype, const Shape& shape,
                      const void* bytes, std::size_t count) {
      table.push_back({{"name", name}, {"dtype", dtype}, {"shape", shape},
                       {"offset", data.size()}, {"bytes", count}});
      if (count > 0) data.append(static_cast<const char*>(bytes), count);
    };
    for (const auto& [name, t] : f32_) append(name, "f32", t.shape(), t.data(), sizeof(float) * t.storage().size());
    for (const auto& [name, t] : f64_) append(name, "f64", t.shape(), t.data(), sizeof(double) * t.storage().size());
    const std::string header = nlohmann::json{{"meta", meta}, {"tensors", table}}.dump();

    std::string blob = "VGCK";
    put_pod(blob, kCheckpointVersion);
    put_pod(blob, static_cast<std::uint64_t>(header.size()));
    blob += header;
    blob += data;
    const auto crc = static_cast<std::uint32_t>(
        crc32(0L, reinterpret_cast<const Bytef*>(blob.data()), static_cast<uInt>(blob.size())));
    put_pod(blob, crc);

    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      if (!out) throw CheckpointError("cannot write checkpoint " + tmp.string());
      out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
      if (!out) throw CheckpointError("short write to " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
  }

  static Archive load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
    const std::string blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const std::size_t fixed = 4 + sizeof(std::uint32_t) + sizeof(std::uint64_t);
    if (blob.size() < fixed + sizeof(std::uint32_t) || blob.compare(0, 4, "VGCK") != 0) {
      throw CheckpointError(path.string() + " is not a checkpoint file");
    }
    const auto version = get_pod<std::uint32_t>(blob, 4);
    if (version != kCheckpointVersion) {
      throw CheckpointError(path.string() + ": unsupported checkpoint version " +
                            std::to_string(version) + " (expected " +
                            std::to_string(kCheckpointVersion) + ")");
    }
    const std::size_t body = blob.size() - sizeof(std::uint32_t);
    const auto stored = get_pod<std::uint32_t>(blob, body);
    const auto actual = static_cast<std::uint32_t>(
        crc32(0L, reinterpret_cast<const Bytef*>(blob.data()), static_cast<uInt>(body)));
    if (stored != actual) throw CheckpointError(path.string() + ": checksum mismatch (corrupt file)");
    const auto header_len = get_pod<std::uint64_t>(blob, 8);
    if (fixed + header_len > body) throw CheckpointError(path.string() + ": truncated header");

    Archive a;
    nlohmann::json header;
    try {
      header = nlohmann::json::parse(blob.substr(fixed, header_len));
    } catch (const nlohmann::json::exception& e) {
      throw CheckpointError(path.string() + ": bad header: " + e.what());
    }
    a.meta = header.at("meta");
    const std::size_t data_start = fixed + header_len;
    for (const auto& entry : header.at("tensors")) {
      const auto name = entry.at("name").get<std::string>();
      const auto dtype = entry.at("dtype").get<std::string>();
      const auto shape = entry.at("shape").get<Shape>();
      const auto offset = entry.at("offset").get<std::size_t>();
      const auto bytes = entry.at("bytes").get<std::size_t>();
      if (data_start + offset + bytes > body) throw CheckpointError(path.string() + ": truncated data");
      const char* src = blob.data() + data_start + offset;
      if (dtype == "f32") {
        a.f32_[name] = read_tensor<float>(shape, src, bytes, name);
      } else if (dtype == "f64") {
        a.f64_[name] = read_tensor<double>(shape, src, bytes, name);
      } else {
        throw CheckpointError(path.string() + ": unknown dtype " + dtype);
      }
    }
    return a;
  }

 private:
  void check_new(const std::string& name) const {
    if (has(name)) throw CheckpointError("duplicate tensor name '" + name + "'");
  }

  template <class P>
  static void put_pod(std::string& out, P v) {
    char buf[sizeof(P)];
    std::memcpy(buf, &v, sizeof(P));
    out.append(buf, sizeof(P));
  }
  template <class P>
  static P get_pod(const std::string& in, std::size_t at) {
    P v;
    std::memcpy(&v, in.data() + at, sizeof(P));
    return v;
  }
  template <class T>
  static Tensor<T> read_tensor(const Shape& shape, const char* src, std::size_t bytes,
                               const std::string& name) {
    Tensor<T> t(shape);
    if (bytes != sizeof(T) * t.storage().size()) {
      throw CheckpointError("tensor '" + name + "' size does not match its shape");
    }
    if (bytes > 0) std::memcpy(t.data(), src, bytes);
    return t;
  }

  std::map<std::string, Tensor<float>> f32_;
  std::map<std::string, Tensor<double>> f64_;
};

}  // namespace vidgan
