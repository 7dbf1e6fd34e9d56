#include "lrr/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <set>

namespace lrr {

namespace {

constexpr char kMagic[4] = {'L', 'R', 'R', 'C'};
constexpr std::uint32_t kVersion = 1;

void put_uint(std::ostream& os, std::uint64_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) os.put(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint64_t get_uint(std::istream& is, int bytes) {
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) {
    const int c = is.get();
    if (c == std::char_traits<char>::eof()) throw FormatError("LRRC: truncated container");
    v |= std::uint64_t(static_cast<unsigned char>(c)) << (8 * i);
  }
  return v;
}

void check_unique(const Checkpoint& ck) {
  std::set<std::string_view> seen;
  for (const auto& [name, t] : ck.entries)
    if (!seen.insert(name).second) throw FormatError("LRRC: duplicate entry '" + name + "'");
}

}  // namespace

const TensorF* Checkpoint::find(std::string_view name) const {
  for (const auto& [n, t] : entries)
    if (n == name) return &t;
  return nullptr;
}

const TensorF& Checkpoint::get(std::string_view name) const {
  if (const TensorF* t = find(name)) return *t;
  throw FormatError("checkpoint has no entry '" + std::string(name) + "'");
}

void Checkpoint::put(std::string name, TensorF tensor) {
  for (auto& [n, t] : entries)
    if (n == name) {
      t = std::move(tensor);
      return;
    }
  entries.emplace_back(std::move(name), std::move(tensor));
}

void write_checkpoint(std::ostream& os, const Checkpoint& ck) {
  check_unique(ck);
  os.write(kMagic, 4);
  put_uint(os, kVersion, 4);
  put_uint(os, ck.entries.size(), 4);
  for (const auto& [name, t] : ck.entries) {
    if (name.size() > 0xFFFF) throw FormatError("LRRC: entry name too long");
    put_uint(os, name.size(), 2);
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_lrrt(os, t);
  }
  if (!os) throw FormatError("LRRC: write failed");
}

Checkpoint read_checkpoint(std::istream& is) {
  char magic[4];
  if (!is.read(magic, 4)) throw FormatError("LRRC: truncated container");
  if (std::memcmp(magic, kMagic, 4) != 0) throw FormatError("LRRC: bad magic");
  const auto version = get_uint(is, 4);
  if (version != kVersion) throw FormatError("LRRC: unsupported version " + std::to_string(version));
  const auto count = get_uint(is, 4);
  Checkpoint ck;
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto len = get_uint(is, 2);
    std::string name(len, '\0');
    if (!is.read(name.data(), static_cast<std::streamsize>(len))) throw FormatError("LRRC: truncated container");
    TensorF t = read_lrrt(is);
    ck.entries.emplace_back(std::move(name), std::move(t));
  }
  check_unique(ck);
  return ck;
}

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open " + path + " for writing");
  write_checkpoint(os, ck);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open " + path);
  return read_checkpoint(is);
}

TensorF encode_u64(std::uint64_t v) {
  TensorF t({4});
  for (std::size_t i = 0; i < 4; ++i) t[i] = static_cast<float>((v >> (16 * i)) & 0xFFFF);
  return t;
}

std::uint64_t decode_u64(const TensorF& t) {
  if (t.size() != 4) throw FormatError("encoded integer must have four chunks");
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < 4; ++i) v |= static_cast<std::uint64_t>(t[i]) << (16 * i);
  return v;
}

}  // namespace lrr
