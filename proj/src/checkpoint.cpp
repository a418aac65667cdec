#include "fbrl/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace fbrl::io {

namespace {
constexpr char kMagic[8] = {'F', 'B', 'R', 'L', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void write_raw(std::ofstream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_raw(std::ifstream& in) {
  T v;
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw std::runtime_error("checkpoint: truncated file");
  return v;
}
}  // namespace

void write_checkpoint(const std::filesystem::path& path, const nlohmann::json& header,
                      const std::vector<const Vec*>& arrays) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("checkpoint: cannot open " + path.string());
  out.write(kMagic, sizeof(kMagic));
  write_raw(out, kVersion);
  std::string h = header.dump();
  write_raw(out, static_cast<std::uint64_t>(h.size()));
  out.write(h.data(), static_cast<std::streamsize>(h.size()));
  write_raw(out, static_cast<std::uint64_t>(arrays.size()));
  for (const Vec* a : arrays) {
    write_raw(out, static_cast<std::uint64_t>(a->size()));
    out.write(reinterpret_cast<const char*>(a->data()),
              static_cast<std::streamsize>(a->size() * sizeof(double)));
  }
  if (!out) throw std::runtime_error("checkpoint: write failed for " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path.string());
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw std::runtime_error("checkpoint: bad magic in " + path.string());
  auto version = read_raw<std::uint32_t>(in);
  if (version != kVersion)
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  auto hlen = read_raw<std::uint64_t>(in);
  std::string h(hlen, '\0');
  in.read(h.data(), static_cast<std::streamsize>(hlen));
  if (!in) throw std::runtime_error("checkpoint: truncated header");
  Checkpoint ck;
  ck.header = nlohmann::json::parse(h);
  auto n_arrays = read_raw<std::uint64_t>(in);
  ck.arrays.resize(n_arrays);
  for (auto& a : ck.arrays) {
    auto len = read_raw<std::uint64_t>(in);
    a.resize(static_cast<Eigen::Index>(len));
    in.read(reinterpret_cast<char*>(a.data()), static_cast<std::streamsize>(len * sizeof(double)));
    if (!in) throw std::runtime_error("checkpoint: truncated array data");
  }
  return ck;
}

std::uint64_t hash_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("hash_file: cannot open " + path.string());
  std::uint64_t h = 0xCBF29CE484222325ULL;
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof(buf));
    h = fnv1a64(buf, static_cast<std::size_t>(in.gcount()), h);
  }
  return h;
}

}  // namespace fbrl::io
