#pragma once

// Binary tensor container shared by checkpoints and datasets.
//
// Layout (little-endian): magic "RLT1", version u32, entry count u32, then per
// entry: name length u16, name bytes, dtype u8, ndim u8, dims u64 each, raw
// payload. dtype 0 is float64; dtype 1 is a raw byte blob (ndim 1), used for
// UTF-8 JSON entries such as "__config__".

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "rlt/tensor.hpp"

namespace rlt {

inline constexpr char kContainerMagic[4] = {'R', 'L', 'T', '1'};
inline constexpr std::uint32_t kContainerVersion = 1;

struct Container {
  std::vector<std::pair<std::string, Tensor>> tensors;
  std::vector<std::pair<std::string, std::string>> blobs;

  const Tensor& tensor(const std::string& name) const;
  const Tensor* find_tensor(const std::string& name) const;
  const std::string* find_blob(const std::string& name) const;
};

std::vector<std::uint8_t> encode_container(const Container& c);
// Throws FormatError on bad magic, version, or truncation; never returns partial state.
Container decode_container(const std::vector<std::uint8_t>& bytes);

// Written to a temporary sibling and renamed into place.
void write_container(const std::filesystem::path& path, const Container& c);
Container read_container(const std::filesystem::path& path);

}  // namespace rlt
