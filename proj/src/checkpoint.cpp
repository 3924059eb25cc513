#include "muan/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <vector>

namespace muan {

namespace {

constexpr char kMagic[4] = {'M', 'U', 'A', 'N'};

template <typename T>
void put_le(std::ostream& out, T value) {
  unsigned char bytes[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i) bytes[i] = static_cast<unsigned char>((value >> (8 * i)) & 0xFF);
  out.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T get_le(std::istream& in, const char* what) {
  unsigned char bytes[sizeof(T)];
  if (!in.read(reinterpret_cast<char*>(bytes), sizeof(T))) {
    throw FormatError(std::string("checkpoint truncated while reading ") + what);
  }
  T value = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) value |= static_cast<T>(bytes[i]) << (8 * i);
  return value;
}

std::string get_bytes(std::istream& in, std::size_t n, const char* what) {
  std::string s(n, '\0');
  if (n && !in.read(s.data(), static_cast<std::streamsize>(n))) {
    throw FormatError(std::string("checkpoint truncated while reading ") + what);
  }
  return s;
}

}  // namespace

void write_checkpoint(std::ostream& out, const ParameterSet& params, const std::string& header_json) {
  if (header_json.size() > std::numeric_limits<std::uint32_t>::max()) throw FormatError("checkpoint header too large");
  out.write(kMagic, 4);
  put_le<std::uint16_t>(out, kCheckpointVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(header_json.size()));
  out.write(header_json.data(), static_cast<std::streamsize>(header_json.size()));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
  for (const Parameter& p : params) {
    if (p.name.size() > std::numeric_limits<std::uint16_t>::max()) throw FormatError("parameter name too long: " + p.name);
    if (p.value.rank() > std::numeric_limits<std::uint8_t>::max()) throw FormatError("tensor rank too large: " + p.name);
    put_le<std::uint16_t>(out, static_cast<std::uint16_t>(p.name.size()));
    out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    put_le<std::uint8_t>(out, static_cast<std::uint8_t>(p.value.rank()));
    for (std::size_t extent : p.value.shape()) {
      if (extent > std::numeric_limits<std::uint32_t>::max()) throw FormatError("tensor extent too large: " + p.name);
      put_le<std::uint32_t>(out, static_cast<std::uint32_t>(extent));
    }
    for (double v : p.value.values()) put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  }
  if (!out) throw FormatError("checkpoint write failed");
}

Checkpoint read_checkpoint(std::istream& in) {
  const std::string magic = get_bytes(in, 4, "magic");
  if (std::memcmp(magic.data(), kMagic, 4) != 0) throw FormatError("not a MUAN checkpoint (bad magic)");
  Checkpoint ckpt;
  ckpt.version = get_le<std::uint16_t>(in, "version");
  if (ckpt.version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(ckpt.version));
  }
  const auto header_len = get_le<std::uint32_t>(in, "header length");
  ckpt.header_json = get_bytes(in, header_len, "header");
  const auto count = get_le<std::uint32_t>(in, "tensor count");
  for (std::uint32_t t = 0; t < count; ++t) {
    const auto name_len = get_le<std::uint16_t>(in, "name length");
    std::string name = get_bytes(in, name_len, "tensor name");
    const auto rank = get_le<std::uint8_t>(in, "rank");
    Shape shape(rank);
    for (auto& extent : shape) extent = get_le<std::uint32_t>(in, "extent");
    std::vector<double> data(shape_numel(shape));
    for (double& v : data) v = static_cast<double>(std::bit_cast<float>(get_le<std::uint32_t>(in, "payload")));
    ckpt.tensors.add(std::move(name), Tensor(std::move(shape), std::move(data)));
  }
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const ParameterSet& params, const std::string& header_json) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot open " + tmp.string() + " for writing");
    write_checkpoint(out, params, header_json);
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint " + path.string());
  return read_checkpoint(in);
}

void round_to_float(ParameterSet& params) {
  for (Parameter& p : params)
    for (double& v : p.value.span()) v = static_cast<double>(static_cast<float>(v));
}

}  // namespace muan
