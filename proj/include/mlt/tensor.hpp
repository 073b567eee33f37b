#ifndef MLT_TENSOR_HPP_
#define MLT_TENSOR_HPP_

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <new>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mlt/errors.hpp"

namespace mlt {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

// Number of scalar elements currently held by live tensor data buffers of
// element type T. Gradient buffers are not counted.
template <typename T>
std::atomic<std::int64_t>& live_elements() {
  static std::atomic<std::int64_t> counter{0};
  return counter;
}

namespace detail {

// Buffers start on a fixed boundary so vectorized kernels split every
// buffer the same way. Results are then independent of where the
// allocator happens to place a buffer.
inline constexpr std::size_t kBufferAlignment = 64;

template <typename T>
struct AlignedAllocator {
  using value_type = T;
  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) {}
  T* allocate(std::size_t n) {
    return static_cast<T*>(
        ::operator new(n * sizeof(T), std::align_val_t{kBufferAlignment}));
  }
  void deallocate(T* p, std::size_t) {
    ::operator delete(p, std::align_val_t{kBufferAlignment});
  }
  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const {
    return true;
  }
};

template <typename T>
using AlignedVector = std::vector<T, AlignedAllocator<T>>;

template <typename T>
struct Storage {
  Shape shape;
  AlignedVector<T> data;
  AlignedVector<T> grad;  // empty until first needed
  bool requires_grad = false;

  Storage(Shape s, AlignedVector<T> d, bool rg)
      : shape(std::move(s)), data(std::move(d)), requires_grad(rg) {
    live_elements<T>() += static_cast<std::int64_t>(data.size());
  }
  Storage(const Storage&) = delete;
  Storage& operator=(const Storage&) = delete;
  ~Storage() { live_elements<T>() -= static_cast<std::int64_t>(data.size()); }
};

}  // namespace detail

// A dense row-major array with an optional gradient accumulator.
//
// Tensor is a handle: copying a Tensor aliases the same storage. Use clone()
// for a deep copy.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape, bool requires_grad = false)
      : Tensor(Adopt{}, shape, detail::AlignedVector<T>(shape_numel(shape), T{0}),
               requires_grad) {}

  Tensor(Shape shape, const std::vector<T>& values, bool requires_grad = false)
      : Tensor(Adopt{}, std::move(shape),
               detail::AlignedVector<T>(values.begin(), values.end()), requires_grad) {}

  static Tensor scalar(T value, bool requires_grad = false) {
    return Tensor(Shape{1}, std::vector<T>{value}, requires_grad);
  }

  bool defined() const { return impl_ != nullptr; }

  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return impl_->shape.at(axis); }
  std::size_t numel() const { return impl_->data.size(); }

  // Extent of the last axis and the number of slices along it.
  std::size_t cols() const { return impl_->shape.back(); }
  std::size_t rows() const { return numel() / cols(); }

  std::span<T> data() { return impl_->data; }
  std::span<const T> data() const { return impl_->data; }
  T* ptr() { return impl_->data.data(); }
  const T* ptr() const { return impl_->data.data(); }

  T item() const {
    if (numel() != 1) {
      throw ContractError("item() requires a single-element tensor, got " +
                          shape_string(shape()));
    }
    return impl_->data[0];
  }

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool value) { impl_->requires_grad = value; }

  bool has_grad() const { return !impl_->grad.empty(); }

  // Allocates a zeroed gradient buffer on first use. The gradient is an
  // accumulator attached to the storage, so it stays writable through a
  // const handle.
  std::span<T> grad() const {
    ensure_grad();
    return impl_->grad;
  }
  T* grad_ptr() const {
    ensure_grad();
    return impl_->grad.data();
  }

  void zero_grad() const {
    if (has_grad()) {
      std::fill(impl_->grad.begin(), impl_->grad.end(), T{0});
    }
  }

  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

  Tensor clone() const {
    return Tensor(Adopt{}, impl_->shape, impl_->data, false);
  }

  void copy_from(const Tensor& other) {
    if (other.shape() != shape()) {
      throw DimensionError("copy_from: shape " + shape_string(other.shape()) +
                           " does not match " + shape_string(shape()));
    }
    std::copy(other.impl_->data.begin(), other.impl_->data.end(),
              impl_->data.begin());
  }

  void fill(T value) { std::fill(impl_->data.begin(), impl_->data.end(), value); }

 private:
  struct Adopt {};
  Tensor(Adopt, Shape shape, detail::AlignedVector<T> values, bool requires_grad) {
    for (std::size_t extent : shape) {
      if (extent == 0) {
        throw DimensionError("tensor extents must be positive, got " +
                             shape_string(shape));
      }
    }
    if (shape.empty()) {
      throw DimensionError("tensor rank must be at least 1");
    }
    if (shape_numel(shape) != values.size()) {
      throw DimensionError("tensor of shape " + shape_string(shape) +
                           " cannot hold " + std::to_string(values.size()) +
                           " values");
    }
    impl_ = std::make_shared<detail::Storage<T>>(std::move(shape),
                                                 std::move(values),
                                                 requires_grad);
  }

  void ensure_grad() const {
    if (impl_->grad.empty()) {
      impl_->grad.assign(impl_->data.size(), T{0});
    }
  }

  std::shared_ptr<detail::Storage<T>> impl_;
};

template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
};

}  // namespace mlt

#endif  // MLT_TENSOR_HPP_
