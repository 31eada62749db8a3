#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "sepformer/tensor.hpp"

namespace sepformer {

// Binary layout, all integers little-endian:
//   "SEPF" | u32 version | u32 entry count |
//   per entry: u32 name length | UTF-8 name | u32 dtype (0 = f32, 1 = f64) |
//              u32 rank | u32 dims[rank] | raw little-endian values
inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <typename T>
using NamedTensors = std::vector<std::pair<std::string, BasicTensor<T>>>;

template <typename T>
std::vector<std::uint8_t> encode_checkpoint(const NamedTensors<T>& entries);
/// Values are converted to T when the stored dtype differs.
template <typename T>
NamedTensors<T> decode_checkpoint(const std::vector<std::uint8_t>& bytes);

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const NamedTensors<T>& entries);
template <typename T>
NamedTensors<T> load_checkpoint(const std::filesystem::path& path);

}  // namespace sepformer
