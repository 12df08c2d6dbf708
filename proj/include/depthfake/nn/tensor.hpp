#pragma once

#include <cstddef>
#include <string>
#include <new>
#include <vector>

namespace depthfake::nn {

// NHWC extents. Feature vectors use h = w = 1.
struct Shape {
  int n = 0;
  int h = 0;
  int w = 0;
  int c = 0;

  std::size_t numel() const {
    return static_cast<std::size_t>(n) * h * w * c;
  }
  std::size_t sample_size() const { return static_cast<std::size_t>(h) * w * c; }
  bool resolved() const { return n > 0 && h > 0 && w > 0 && c > 0; }
  std::string str() const;
  bool operator==(const Shape&) const = default;
};

// 64-byte aligned allocation. Vectorized reductions peel according to the
// base address, so a fixed alignment keeps summation order (and results)
// independent of where the heap put a buffer.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }
  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

template <typename T>
using Buffer = std::vector<T, AlignedAllocator<T>>;

template <typename T>
struct Tensor {
  Shape shape;
  Buffer<T> data;

  Tensor() = default;
  explicit Tensor(Shape s, T fill = T(0)) : shape(s), data(s.numel(), fill) {}

  void reset(Shape s) {
    shape = s;
    data.assign(s.numel(), T(0));
  }
  T* sample(int i) { return data.data() + i * shape.sample_size(); }
  const T* sample(int i) const { return data.data() + i * shape.sample_size(); }
  T& at(int n, int y, int x, int ch) {
    return data[((static_cast<std::size_t>(n) * shape.h + y) * shape.w + x) * shape.c + ch];
  }
  const T& at(int n, int y, int x, int ch) const {
    return data[((static_cast<std::size_t>(n) * shape.h + y) * shape.w + x) * shape.c + ch];
  }
};

}  // namespace depthfake::nn
