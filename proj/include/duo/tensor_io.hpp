#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>

#include "duo/tensor.hpp"

namespace duo {

// DUOT layout (all little-endian):
//   "DUOT" | u32 rank | u32 dims[rank] | f64 payload[prod(dims)]
void write_tensor(std::ostream& os, const Tensor& t);
Tensor read_tensor(std::istream& is);
void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);

// Named bundle used for checkpoints:
//   "DUOC" | u32 count | { u32 name_len | name bytes | DUOT tensor }*
using TensorBundle = std::map<std::string, Tensor>;
void save_bundle(const std::filesystem::path& path, const TensorBundle& bundle);
TensorBundle load_bundle(const std::filesystem::path& path);

}  // namespace duo
