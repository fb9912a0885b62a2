// Copyright 2026 The moeup Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace moeup::container {

// Layout: magic bytes, u64 little-endian header length, UTF-8 JSON header,
// payload. The header's "tensors" array lists {name, shape, dtype, offset}
// with offsets relative to the payload start, in payload order.
class Writer {
 public:
  explicit Writer(nlohmann::json header) : header_(std::move(header)) {}

  void add(const std::string& name, const std::vector<std::size_t>& shape,
           std::span<const float> values);
  void add(const std::string& name, const std::vector<std::size_t>& shape,
           std::span<const double> values);

  void write(const std::filesystem::path& path, std::string_view magic) const;

 private:
  nlohmann::json header_;
  nlohmann::json directory_ = nlohmann::json::array();
  std::vector<unsigned char> payload_;
};

class Reader {
 public:
  Reader(const std::filesystem::path& path, std::string_view magic, int version);

  const nlohmann::json& header() const { return header_; }
  bool has(const std::string& name) const;
  const std::vector<std::size_t>& shape(const std::string& name) const;

  std::vector<float> f32(const std::string& name, const std::vector<std::size_t>& shape) const;
  std::vector<double> f64(const std::string& name, const std::vector<std::size_t>& shape) const;

 private:
  struct Entry {
    std::string name;
    std::vector<std::size_t> shape;
    std::string dtype;
    std::uint64_t offset = 0;
  };
  const Entry& find(const std::string& name) const;

  nlohmann::json header_;
  std::vector<Entry> entries_;
  std::vector<unsigned char> payload_;
  std::string path_;
};

}  // namespace moeup::container
