#include "cea/serialize.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace cea {

namespace {

static_assert(std::endian::native == std::endian::little,
              "serialization assumes a little-endian host");

constexpr std::array<char, 4> kTensorMagic{'C', 'E', 'A', 'T'};
constexpr std::array<char, 4> kCheckpointMagic{'C', 'E', 'A', 'K'};
constexpr std::uint32_t kCheckpointVersion = 1;
constexpr std::uint32_t kMaxRank = 16;

template <class T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& is) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw IoError("truncated tensor stream");
  return v;
}

void expect_magic(std::istream& is, const std::array<char, 4>& magic, const char* what) {
  std::array<char, 4> got{};
  if (!is.read(got.data(), 4) || got != magic)
    throw IoError(std::string("bad magic for ") + what);
}

}  // namespace

void write_tensor(std::ostream& os, const Tensor& t) {
  os.write(kTensorMagic.data(), 4);
  put<std::uint32_t>(os, kTensorFormatVersion);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
  for (auto d : t.shape()) put<std::uint64_t>(os, d);
  auto d = t.data();
  os.write(reinterpret_cast<const char*>(d.data()),
           static_cast<std::streamsize>(d.size() * sizeof(double)));
  if (!os) throw IoError("tensor write failed");
}

Tensor read_tensor(std::istream& is) {
  expect_magic(is, kTensorMagic, "tensor");
  const auto version = get<std::uint32_t>(is);
  if (version != kTensorFormatVersion)
    throw IoError("unsupported tensor version " + std::to_string(version));
  const auto rank = get<std::uint32_t>(is);
  if (rank > kMaxRank) throw IoError("implausible tensor rank " + std::to_string(rank));
  Shape shape(rank);
  for (auto& d : shape) d = static_cast<std::size_t>(get<std::uint64_t>(is));
  std::vector<double> data(numel_of(shape));
  if (!is.read(reinterpret_cast<char*>(data.data()),
               static_cast<std::streamsize>(data.size() * sizeof(double))))
    throw IoError("truncated tensor payload");
  return Tensor::from(std::move(shape), std::move(data));
}

void save_tensor(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  write_tensor(os, t);
}

Tensor load_tensor(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  return read_tensor(is);
}

void save_checkpoint(const std::filesystem::path& path, const NamedTensors& entries) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os.write(kCheckpointMagic.data(), 4);
  put<std::uint32_t>(os, kCheckpointVersion);
  put<std::uint64_t>(os, entries.size());
  for (const auto& [name, tensor] : entries) {
    put<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_tensor(os, tensor);
  }
  if (!os) throw IoError("checkpoint write failed: " + path.string());
}

NamedTensors load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  expect_magic(is, kCheckpointMagic, "checkpoint");
  const auto version = get<std::uint32_t>(is);
  if (version != kCheckpointVersion)
    throw IoError("unsupported checkpoint version " + std::to_string(version));
  const auto count = get<std::uint64_t>(is);
  NamedTensors out;
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto len = get<std::uint32_t>(is);
    std::string name(len, '\0');
    if (!is.read(name.data(), len)) throw IoError("truncated checkpoint entry name");
    out.emplace(std::move(name), read_tensor(is));
  }
  return out;
}

}  // namespace cea
