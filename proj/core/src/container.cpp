// Copyright 2026 The moeup Authors
// SPDX-License-Identifier: Apache-2.0

#include "container.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "moeup/error.hpp"

namespace moeup::container {

namespace {

template <class U>
void put_le(std::vector<unsigned char>& out, U bits) {
  for (std::size_t i = 0; i < sizeof(U); ++i)
    out.push_back(static_cast<unsigned char>((bits >> (8 * i)) & 0xff));
}

template <class U>
U get_le(const unsigned char* p) {
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(p[i]) << (8 * i);
  return v;
}

std::size_t product(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

}  // namespace

void Writer::add(const std::string& name, const std::vector<std::size_t>& shape,
                 std::span<const float> values) {
  require(product(shape) == values.size(), ErrorCode::kShapeMismatch,
          "tensor " + name + " does not match its shape");
  directory_.push_back(
      {{"name", name}, {"shape", shape}, {"dtype", "f32"}, {"offset", payload_.size()}});
  for (float v : values) put_le(payload_, std::bit_cast<std::uint32_t>(v));
}

void Writer::add(const std::string& name, const std::vector<std::size_t>& shape,
                 std::span<const double> values) {
  require(product(shape) == values.size(), ErrorCode::kShapeMismatch,
          "tensor " + name + " does not match its shape");
  directory_.push_back(
      {{"name", name}, {"shape", shape}, {"dtype", "f64"}, {"offset", payload_.size()}});
  for (double v : values) put_le(payload_, std::bit_cast<std::uint64_t>(v));
}

void Writer::write(const std::filesystem::path& path, std::string_view magic) const {
  nlohmann::json header = header_;
  header["tensors"] = directory_;
  const std::string text = header.dump();
  std::vector<unsigned char> len;
  put_le(len, static_cast<std::uint64_t>(text.size()));
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::kIoError, "cannot write " + path.string());
  out.write(magic.data(), static_cast<std::streamsize>(magic.size()));
  out.write(reinterpret_cast<const char*>(len.data()), 8);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  out.write(reinterpret_cast<const char*>(payload_.data()),
            static_cast<std::streamsize>(payload_.size()));
  if (!out) fail(ErrorCode::kIoError, "failed writing " + path.string());
}

Reader::Reader(const std::filesystem::path& path, std::string_view magic, int version)
    : path_(path.string()) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kMissingArtifact, "cannot open " + path_);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  if (bytes.size() < magic.size() ||
      std::memcmp(bytes.data(), magic.data(), magic.size()) != 0)
    fail(ErrorCode::kMagicMismatch, path_ + ": unexpected magic bytes");
  std::size_t pos = magic.size();
  if (bytes.size() < pos + 8) fail(ErrorCode::kTruncatedFile, path_ + ": truncated header length");
  const auto hlen = get_le<std::uint64_t>(bytes.data() + pos);
  pos += 8;
  if (bytes.size() - pos < hlen) fail(ErrorCode::kTruncatedFile, path_ + ": truncated header");
  try {
    header_ = nlohmann::json::parse(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                                    bytes.begin() + static_cast<std::ptrdiff_t>(pos + hlen));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kTruncatedFile, path_ + ": unreadable header: " + e.what());
  }
  pos += hlen;
  if (header_.value("version", -1) != version)
    fail(ErrorCode::kVersionMismatch, path_ + ": unsupported format version " +
                                          std::to_string(header_.value("version", -1)));
  payload_.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos), bytes.end());
  try {
    for (const auto& e : header_.at("tensors")) {
      Entry entry{e.at("name").get<std::string>(), e.at("shape").get<std::vector<std::size_t>>(),
                  e.at("dtype").get<std::string>(), e.at("offset").get<std::uint64_t>()};
      const std::size_t width = entry.dtype == "f64" ? 8 : 4;
      if (entry.offset + product(entry.shape) * width > payload_.size())
        fail(ErrorCode::kTruncatedFile, path_ + ": payload truncated at " + entry.name);
      entries_.push_back(std::move(entry));
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kTruncatedFile, path_ + ": malformed tensor directory: " + e.what());
  }
}

const Reader::Entry& Reader::find(const std::string& name) const {
  for (const auto& e : entries_)
    if (e.name == name) return e;
  fail(ErrorCode::kShapeMismatch, path_ + ": missing tensor " + name);
}

bool Reader::has(const std::string& name) const {
  for (const auto& e : entries_)
    if (e.name == name) return true;
  return false;
}

const std::vector<std::size_t>& Reader::shape(const std::string& name) const {
  return find(name).shape;
}

std::vector<float> Reader::f32(const std::string& name,
                               const std::vector<std::size_t>& shape) const {
  const Entry& e = find(name);
  require(e.dtype == "f32", ErrorCode::kShapeMismatch, path_ + ": " + name + " is not f32");
  require(e.shape == shape, ErrorCode::kShapeMismatch, path_ + ": " + name + " has wrong shape");
  std::vector<float> out(product(shape));
  const unsigned char* p = payload_.data() + e.offset;
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = std::bit_cast<float>(get_le<std::uint32_t>(p + 4 * i));
  return out;
}

std::vector<double> Reader::f64(const std::string& name,
                                const std::vector<std::size_t>& shape) const {
  const Entry& e = find(name);
  require(e.dtype == "f64", ErrorCode::kShapeMismatch, path_ + ": " + name + " is not f64");
  require(e.shape == shape, ErrorCode::kShapeMismatch, path_ + ": " + name + " has wrong shape");
  std::vector<double> out(product(shape));
  const unsigned char* p = payload_.data() + e.offset;
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = std::bit_cast<double>(get_le<std::uint64_t>(p + 8 * i));
  return out;
}

}  // namespace moeup::container
