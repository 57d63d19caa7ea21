#pragma once

#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "hodiff/hand.hpp"  // detail::crc32_of
#include "hodiff/nn.hpp"

namespace hodiff {

inline constexpr int kCheckpointFormatVersion = 1;

/// Write a parameter store as a JSON manifest plus one little-endian float32
/// blob. `kind` tags the producer ("denoiser" or "centroid"); `config_echo`
/// is stored verbatim for reproducibility.
template <typename S>
void save_checkpoint(const ParamStore<S>& params, const std::string& kind,
                     const nlohmann::json& config_echo, const std::string& json_path,
                     const std::string& blob_path) {
  std::vector<float> blob;
  blob.reserve(params.total_size());
  nlohmann::json tensors = nlohmann::json::array();
  size_t offset = 0;
  for (const auto& name : params.order) {
    const Tensor<S>& t = params.get(name);
    nlohmann::json entry;
    entry["name"] = name;
    entry["shape"] = t.dims;
    entry["dtype"] = "f32";
    entry["byte_offset"] = offset * sizeof(float);
    tensors.push_back(entry);
    for (S v : t.data) blob.push_back(static_cast<float>(v));
    offset += t.size();
  }
  {
    std::ofstream f(blob_path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write " + blob_path);
    f.write(reinterpret_cast<const char*>(blob.data()),
            std::streamsize(blob.size() * sizeof(float)));
  }
  nlohmann::json j;
  j["format_version"] = kCheckpointFormatVersion;
  j["kind"] = kind;
  j["tensors"] = tensors;
  j["blob"] = std::filesystem::path(blob_path).filename().string();
  j["blob_crc32"] = detail::crc32_of(blob.data(), blob.size() * sizeof(float));
  j["total_values"] = blob.size();
  j["config"] = config_echo;
  std::ofstream f(json_path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + json_path);
  f << j.dump(2) << "\n";
}

template <typename S>
ParamStore<S> load_checkpoint(const std::string& json_path, const std::string& expected_kind,
                              nlohmann::json* config_echo = nullptr) {
  std::ifstream f(json_path);
  if (!f) throw std::runtime_error("cannot read checkpoint " + json_path);
  nlohmann::json j;
  f >> j;
  if (j.at("format_version").get<int>() != kCheckpointFormatVersion)
    throw std::runtime_error("checkpoint: unsupported format version");
  if (j.at("kind").get<std::string>() != expected_kind)
    throw std::runtime_error("checkpoint: kind is '" + j.at("kind").get<std::string>() +
                             "', expected '" + expected_kind + "'");

  const std::string dir = std::filesystem::path(json_path).parent_path().string();
  const std::string blob_path =
      (std::filesystem::path(dir) / j.at("blob").get<std::string>()).string();
  std::ifstream bf(blob_path, std::ios::binary);
  if (!bf) throw std::runtime_error("cannot read checkpoint blob " + blob_path);
  std::vector<float> blob(j.at("total_values").get<size_t>());
  bf.read(reinterpret_cast<char*>(blob.data()), std::streamsize(blob.size() * sizeof(float)));
  if (bf.gcount() != std::streamsize(blob.size() * sizeof(float)))
    throw std::runtime_error("checkpoint: blob truncated: " + blob_path);
  if (detail::crc32_of(blob.data(), blob.size() * sizeof(float)) !=
      j.at("blob_crc32").get<uint32_t>())
    throw std::runtime_error("checkpoint: blob checksum mismatch: " + blob_path);

  ParamStore<S> params;
  for (const auto& entry : j.at("tensors")) {
    const std::string name = entry.at("name");
    const auto shape = entry.at("shape").get<std::vector<int>>();
    const size_t off = entry.at("byte_offset").get<size_t>() / sizeof(float);
    Tensor<S> t(shape);
    for (size_t i = 0; i < t.size(); ++i) t.data[i] = static_cast<S>(blob.at(off + i));
    params.add(name, std::move(t));
  }
  if (config_echo) *config_echo = j.at("config");
  return params;
}

}  // namespace hodiff
