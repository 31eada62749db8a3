#include "sepformer/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace sepformer {

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_++]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_++]) << (8 * i);
    return v;
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s(bytes_.begin() + static_cast<std::ptrdiff_t>(pos_),
                  bytes_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw CheckpointError("checkpoint truncated");
  }
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

template <typename T>
std::vector<std::uint8_t> encode_checkpoint(const NamedTensors<T>& entries) {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  std::vector<std::uint8_t> out{'S', 'E', 'P', 'F'};
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(entries.size()));
  for (const auto& [name, tensor] : entries) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    put_u32(out, std::is_same_v<T, float> ? 0u : 1u);
    put_u32(out, static_cast<std::uint32_t>(tensor.rank()));
    for (auto d : tensor.shape()) put_u32(out, static_cast<std::uint32_t>(d));
    for (T v : tensor.data()) {
      if constexpr (std::is_same_v<T, float>) {
        put_u32(out, std::bit_cast<std::uint32_t>(v));
      } else {
        put_u64(out, std::bit_cast<std::uint64_t>(v));
      }
    }
  }
  return out;
}

template <typename T>
NamedTensors<T> decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "SEPF", 4) != 0) {
    throw CheckpointError("not a SEPF checkpoint");
  }
  Reader r(bytes);
  r.str(4);
  const auto version = r.u32();
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto count = r.u32();
  NamedTensors<T> entries;
  entries.reserve(count);
  for (std::uint32_t e = 0; e < count; ++e) {
    auto name = r.str(r.u32());
    const auto dtype = r.u32();
    if (dtype > 1) throw CheckpointError("unknown dtype code " + std::to_string(dtype));
    Shape shape(r.u32());
    for (auto& d : shape) d = r.u32();
    std::vector<T> values(shape_numel(shape));
    for (auto& v : values) {
      v = dtype == 0 ? static_cast<T>(std::bit_cast<float>(r.u32()))
                     : static_cast<T>(std::bit_cast<double>(r.u64()));
    }
    entries.emplace_back(std::move(name), BasicTensor<T>(std::move(shape), std::move(values)));
  }
  if (!r.done()) throw CheckpointError("trailing bytes after last checkpoint entry");
  return entries;
}

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const NamedTensors<T>& entries) {
  const auto bytes = encode_checkpoint(entries);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw CheckpointError("cannot open " + path.string() + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw CheckpointError("write failed for " + path.string());
}

template <typename T>
NamedTensors<T> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_checkpoint<T>(bytes);
}

template std::vector<std::uint8_t> encode_checkpoint<float>(const NamedTensors<float>&);
template std::vector<std::uint8_t> encode_checkpoint<double>(const NamedTensors<double>&);
template NamedTensors<float> decode_checkpoint<float>(const std::vector<std::uint8_t>&);
template NamedTensors<double> decode_checkpoint<double>(const std::vector<std::uint8_t>&);
template void save_checkpoint<float>(const std::filesystem::path&, const NamedTensors<float>&);
template void save_checkpoint<double>(const std::filesystem::path&, const NamedTensors<double>&);
template NamedTensors<float> load_checkpoint<float>(const std::filesystem::path&);
template NamedTensors<double> load_checkpoint<double>(const std::filesystem::path&);

}  // namespace sepformer
