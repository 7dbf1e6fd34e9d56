#pragma once

#include <iosfwd>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "lrr/tensor.hpp"

namespace lrr {

/// Ordered named-tensor container. On disk: "LRRC", u32 version = 1,
/// u32 entry count, then per entry a u16 name length, the name bytes and an
/// embedded LRRT tensor.
struct Checkpoint {
  std::vector<std::pair<std::string, TensorF>> entries;

  const TensorF* find(std::string_view name) const;
  const TensorF& get(std::string_view name) const;  // throws FormatError if absent
  /// Replaces an existing entry of the same name or appends.
  void put(std::string name, TensorF tensor);

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

void write_checkpoint(std::ostream& os, const Checkpoint& ck);
Checkpoint read_checkpoint(std::istream& is);
void save_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::string& path);

/// 64-bit integers stored exactly as four 16-bit float chunks.
TensorF encode_u64(std::uint64_t v);
std::uint64_t decode_u64(const TensorF& t);

}  // namespace lrr
