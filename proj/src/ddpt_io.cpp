#include "ddp/ddpt_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>

namespace ddp {
namespace {

constexpr char kMagic[4] = {'D', 'D', 'P', 'T'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<std::uint8_t>(v >> (8 * b)));
}

std::uint32_t get_u32(std::span<const std::uint8_t> bytes, std::size_t at) {
  std::uint32_t v = 0;
  for (int b = 0; b < 4; ++b) v |= static_cast<std::uint32_t>(bytes[at + b]) << (8 * b);
  return v;
}

}  // namespace

std::vector<std::uint8_t> encode_ddpt(const DenseTensor& t) {
  if (t.rank() > std::numeric_limits<std::uint8_t>::max())
    throw Error(ErrorKind::InvalidInput, "rank too large for DDPT");
  std::vector<std::uint8_t> out;
  out.reserve(6 + 4 * t.rank() + 4 * t.size());
  out.insert(out.end(), std::begin(kMagic), std::end(kMagic));
  out.push_back(kDdptVersion);
  out.push_back(static_cast<std::uint8_t>(t.rank()));
  for (std::size_t d : t.shape().dims()) {
    if (d > std::numeric_limits<std::uint32_t>::max())
      throw Error(ErrorKind::InvalidInput, "extent too large for DDPT");
    put_u32(out, static_cast<std::uint32_t>(d));
  }
  for (double x : t.data()) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(x)));
  return out;
}

DenseTensor decode_ddpt(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 6 || std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw Error(ErrorKind::InvalidInput, "not a DDPT container");
  if (bytes[4] != kDdptVersion)
    throw Error(ErrorKind::InvalidInput, "unsupported DDPT version " + std::to_string(bytes[4]));
  const std::size_t rank = bytes[5];
  if (rank == 0) throw Error(ErrorKind::InvalidInput, "DDPT rank 0");
  if (bytes.size() < 6 + 4 * rank) throw Error(ErrorKind::InvalidInput, "truncated DDPT header");
  std::vector<std::size_t> dims(rank);
  for (std::size_t i = 0; i < rank; ++i) dims[i] = get_u32(bytes, 6 + 4 * i);
  Shape shape(std::move(dims));
  const std::size_t header = 6 + 4 * rank;
  if (bytes.size() != header + 4 * shape.count())
    throw Error(ErrorKind::InvalidInput, "DDPT payload length does not match shape " + shape.str());
  std::vector<double> data(shape.count());
  for (std::size_t i = 0; i < data.size(); ++i)
    data[i] = static_cast<double>(std::bit_cast<float>(get_u32(bytes, header + 4 * i)));
  return DenseTensor(std::move(shape), std::move(data));
}

DenseTensor read_ddpt(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::IoError, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return decode_ddpt(bytes);
  } catch (const Error& e) {
    throw Error(e.kind(), path.string() + ": " + e.what());
  }
}

void write_ddpt(const std::filesystem::path& path, const DenseTensor& t) {
  const auto bytes = encode_ddpt(t);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::IoError, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorKind::IoError, "short write to " + path.string());
}

}  // namespace ddp
