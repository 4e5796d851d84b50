#include "come/tensor_io.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace come {
namespace {

constexpr std::array<char, 4> kMagic = {'C', 'O', 'M', 'E'};

template <typename U>
void put_le(std::ostream& out, U value) {
  std::array<char, sizeof(U)> bytes{};
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    bytes[i] = static_cast<char>((value >> (8 * i)) & 0xff);
  }
  out.write(bytes.data(), bytes.size());
}

template <typename U>
U get_le(std::istream& in) {
  std::array<unsigned char, sizeof(U)> bytes{};
  in.read(reinterpret_cast<char*>(bytes.data()), bytes.size());
  if (!in) throw FormatError("truncated tensor stream");
  U value = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) value |= static_cast<U>(bytes[i]) << (8 * i);
  return value;
}

void write_body(std::ostream& out, const Tensor& t) {
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
  for (Index d : t.shape()) put_le<std::uint32_t>(out, static_cast<std::uint32_t>(d));
  for (float v : t.data()) put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
}

Tensor read_body(std::istream& in) {
  const auto rank = get_le<std::uint32_t>(in);
  if (rank > 8) throw FormatError("implausible tensor rank " + std::to_string(rank));
  std::vector<Index> shape(rank);
  for (auto& d : shape) d = get_le<std::uint32_t>(in);
  Tensor t(shape);
  for (float& v : t.storage()) v = std::bit_cast<float>(get_le<std::uint32_t>(in));
  return t;
}

std::uint32_t read_header(std::istream& in) {
  std::array<char, 4> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kMagic) throw FormatError("bad magic: not a tensor dump");
  return get_le<std::uint32_t>(in);
}

void write_header(std::ostream& out, std::uint32_t version) {
  out.write(kMagic.data(), kMagic.size());
  put_le<std::uint32_t>(out, version);
}

template <typename F>
auto with_file(const std::filesystem::path& path, std::ios::openmode mode, F&& f) {
  std::fstream file(path, mode | std::ios::binary);
  if (!file) throw std::runtime_error("cannot open " + path.string());
  return f(file);
}

}  // namespace

void write_tensor(std::ostream& out, const Tensor& t) {
  write_header(out, kDumpVersion);
  write_body(out, t);
}

Tensor read_tensor(std::istream& in) {
  const auto version = read_header(in);
  if (version != kDumpVersion) {
    throw FormatError("expected single-tensor dump, found version " + std::to_string(version));
  }
  return read_body(in);
}

void write_archive(std::ostream& out, const TensorArchive& archive) {
  // Bodies are serialised first so that the index can carry their offsets.
  std::uint64_t index_bytes = 4 + 4 + 4;
  for (const auto& [name, t] : archive) index_bytes += 4 + name.size() + 8;

  std::vector<std::string> bodies;
  bodies.reserve(archive.size());
  for (const auto& [name, t] : archive) {
    std::ostringstream body(std::ios::binary);
    write_body(body, t);
    bodies.push_back(std::move(body).str());
  }

  write_header(out, kArchiveVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(archive.size()));
  std::uint64_t offset = index_bytes;
  std::size_t i = 0;
  for (const auto& [name, t] : archive) {
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_le<std::uint64_t>(out, offset);
    offset += bodies[i++].size();
  }
  for (const auto& b : bodies) out.write(b.data(), static_cast<std::streamsize>(b.size()));
}

TensorArchive read_archive(std::istream& in) {
  const auto start = in.tellg();
  const auto version = read_header(in);
  if (version != kArchiveVersion) {
    throw FormatError("expected tensor archive, found version " + std::to_string(version));
  }
  const auto count = get_le<std::uint32_t>(in);
  std::vector<std::pair<std::string, std::uint64_t>> index;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = get_le<std::uint32_t>(in);
    if (len > 4096) throw FormatError("section name too long");
    std::string name(len, '\0');
    in.read(name.data(), len);
    index.emplace_back(std::move(name), get_le<std::uint64_t>(in));
  }
  TensorArchive archive;
  for (const auto& [name, offset] : index) {
    in.seekg(start + static_cast<std::streamoff>(offset));
    archive.emplace(name, read_body(in));
  }
  return archive;
}

void save_tensor(const std::filesystem::path& path, const Tensor& t) {
  with_file(path, std::ios::out | std::ios::trunc, [&](std::fstream& f) { write_tensor(f, t); });
}

Tensor load_tensor(const std::filesystem::path& path) {
  return with_file(path, std::ios::in, [](std::fstream& f) { return read_tensor(f); });
}

void save_archive(const std::filesystem::path& path, const TensorArchive& archive) {
  with_file(path, std::ios::out | std::ios::trunc,
            [&](std::fstream& f) { write_archive(f, archive); });
}

TensorArchive load_archive(const std::filesystem::path& path) {
  return with_file(path, std::ios::in, [](std::fstream& f) { return read_archive(f); });
}

}  // namespace come
