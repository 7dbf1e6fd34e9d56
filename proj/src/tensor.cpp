#include "lrr/tensor.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <functional>
#include <numeric>
#include <sstream>

namespace lrr {

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {

std::size_t element_count(const Shape& shape) {
  if (shape.size() > 4) throw ShapeError("tensor rank above 4: " + shape_str(shape));
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

}  // namespace

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : shape_(std::move(shape)) {
  data_.assign(element_count(shape_), fill);
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values)
    : shape_(std::move(shape)), data_(std::move(values)) {
  if (element_count(shape_) != data_.size())
    throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                     " does not match shape " + shape_str(shape_));
}

template <typename T>
void Tensor<T>::fill(T v) {
  std::fill(data_.begin(), data_.end(), v);
}

template <typename T>
Tensor<T> Tensor<T>::reshaped(Shape shape) const {
  return Tensor(std::move(shape), data_);
}

template <typename T>
bool Tensor<T>::all_finite() const {
  for (T v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

template <typename T>
Tensor<T>& Tensor<T>::operator+=(const Tensor& other) {
  if (other.shape_ != shape_)
    throw ShapeError("tensor add: " + shape_str(shape_) + " vs " + shape_str(other.shape_));
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

template <typename T>
Tensor<T>& Tensor<T>::operator*=(T scale) {
  for (T& v : data_) v *= scale;
  return *this;
}

template class Tensor<float>;
template class Tensor<double>;

template <typename T>
void require_finite(const Tensor<T>& t, const char* where) {
  if (!t.all_finite()) throw NumericError(std::string("non-finite values produced by ") + where);
}
template void require_finite(const Tensor<float>&, const char*);
template void require_finite(const Tensor<double>&, const char*);

ImageDims image_dims(const Shape& shape) {
  if (shape.size() == 3) return {1, shape[0], shape[1], shape[2]};
  if (shape.size() == 4) return {shape[0], shape[1], shape[2], shape[3]};
  throw ShapeError("expected a 3- or 4-axis image tensor, got " + shape_str(shape));
}

template <typename T>
T dot(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape())
    throw ShapeError("dot: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  T acc = 0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}
template float dot(const Tensor<float>&, const Tensor<float>&);
template double dot(const Tensor<double>&, const Tensor<double>&);

// ---- LRRT --------------------------------------------------------------------

namespace {

constexpr char kTensorMagic[4] = {'L', 'R', 'R', 'T'};
constexpr std::uint32_t kTensorVersion = 1;

void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw FormatError("LRRT: truncated header");
  return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) |
         (std::uint32_t(b[3]) << 24);
}

}  // namespace

void write_lrrt(std::ostream& os, const TensorF& t) {
  os.write(kTensorMagic, 4);
  put_u32(os, kTensorVersion);
  put_u32(os, static_cast<std::uint32_t>(t.ndim()));
  for (std::size_t e : t.shape()) put_u32(os, static_cast<std::uint32_t>(e));
  for (float v : t.values()) put_u32(os, std::bit_cast<std::uint32_t>(v));
  if (!os) throw FormatError("LRRT: write failed");
}

TensorF read_lrrt(std::istream& is) {
  char magic[4];
  if (!is.read(magic, 4)) throw FormatError("LRRT: truncated header");
  if (std::memcmp(magic, kTensorMagic, 4) != 0) throw FormatError("LRRT: bad magic");
  const std::uint32_t version = get_u32(is);
  if (version != kTensorVersion)
    throw FormatError("LRRT: unsupported version " + std::to_string(version));
  const std::uint32_t ndim = get_u32(is);
  if (ndim > 4) throw FormatError("LRRT: rank " + std::to_string(ndim) + " above 4");
  Shape shape(ndim);
  std::size_t count = 1;
  for (auto& e : shape) {
    e = get_u32(is);
    count *= e;
  }
  if (count > (std::size_t{1} << 32)) throw FormatError("LRRT: implausible element count");
  std::vector<unsigned char> raw(count * 4);
  if (!is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size())))
    throw FormatError("LRRT: truncated payload");
  std::vector<float> values(count);
  for (std::size_t i = 0; i < count; ++i) {
    const unsigned char* b = &raw[4 * i];
    const std::uint32_t bits = std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) |
                               (std::uint32_t(b[2]) << 16) | (std::uint32_t(b[3]) << 24);
    values[i] = std::bit_cast<float>(bits);
  }
  return TensorF(std::move(shape), std::move(values));
}

void save_lrrt(const std::string& path, const TensorF& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open " + path + " for writing");
  write_lrrt(os, t);
}

TensorF load_lrrt(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open " + path);
  return read_lrrt(is);
}

}  // namespace lrr
