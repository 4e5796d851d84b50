// Binary tensor dumps.
//
// Single tensor (version 1):
//   "COME" | u32 version=1 | u32 rank | u32 dims[rank] | f32 payload
// Named archive (version 2):
//   "COME" | u32 version=2 | u32 count
//   | count x (u32 name_len | name bytes | u64 offset)
//   | bodies, each "u32 rank | u32 dims[rank] | f32 payload" at its offset
// All integers and floats are little-endian; offsets are from file start.
#pragma once

#include "come/tensor.hpp"

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>

namespace come {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kDumpVersion = 1;
inline constexpr std::uint32_t kArchiveVersion = 2;

void write_tensor(std::ostream& out, const Tensor& t);
Tensor read_tensor(std::istream& in);

void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);

using TensorArchive = std::map<std::string, Tensor>;

void write_archive(std::ostream& out, const TensorArchive& archive);
TensorArchive read_archive(std::istream& in);

void save_archive(const std::filesystem::path& path, const TensorArchive& archive);
TensorArchive load_archive(const std::filesystem::path& path);

}  // namespace come
