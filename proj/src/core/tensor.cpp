#include "hsrgan/core/tensor.hpp"

#include <cmath>
#include <sstream>

#include "hsrgan/core/error.hpp"

namespace hsrgan {

int64_t numel(const Shape& shape) {
  int64_t n = 1;
  for (int64_t d : shape) n *= d;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < shape.size(); ++i) os << (i ? ", " : "") << shape[i];
  os << ']';
  return os.str();
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (static_cast<int64_t>(data_.size()) != hsrgan::numel(shape_))
    throw ShapeError("tensor data size " + std::to_string(data_.size()) + " does not match shape " +
                     to_string(shape_));
}

template <typename T>
T Tensor<T>::item() const {
  if (data_.size() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape_));
  return data_[0];
}

template <typename T>
Tensor<T> Tensor<T>::reshaped(Shape shape) const& {
  Tensor copy = *this;
  return std::move(copy).reshaped(std::move(shape));
}

template <typename T>
Tensor<T> Tensor<T>::reshaped(Shape shape) && {
  if (hsrgan::numel(shape) != numel())
    throw ShapeError("cannot reshape " + to_string(shape_) + " to " + to_string(shape));
  shape_ = std::move(shape);
  return std::move(*this);
}

template <typename T>
void Tensor<T>::fill(T value) {
  for (auto& x : data_) x = value;
}

template <typename T>
bool Tensor<T>::all_finite() const {
  for (T x : data_)
    if (!std::isfinite(x)) return false;
  return true;
}

template class Tensor<float>;
template class Tensor<double>;

const char* error_kind_name(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::runtime: return "runtime";
    case ErrorKind::range: return "range";
    case ErrorKind::config: return "config";
    case ErrorKind::shape: return "shape";
    case ErrorKind::io: return "io";
    case ErrorKind::schema: return "schema";
    case ErrorKind::missing_artifact: return "missing_artifact";
    case ErrorKind::hash_mismatch: return "hash_mismatch";
    case ErrorKind::exists: return "exists";
    case ErrorKind::locked: return "locked";
    case ErrorKind::non_finite: return "non_finite";
    case ErrorKind::convergence: return "convergence";
  }
  return "runtime";
}

}  // namespace hsrgan
