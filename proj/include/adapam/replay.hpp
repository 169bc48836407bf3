#pragma once

#include <cstddef>
#include <stdexcept>
#include <vector>

#include "adapam/errors.hpp"
#include "adapam/rng.hpp"

namespace adapam {

/// Fixed-capacity FIFO replay storage; the oldest item is overwritten first.
template <class T>
class RingBuffer {
 public:
  explicit RingBuffer(std::size_t capacity) : capacity_(capacity) {
    if (capacity == 0) throw ConfigError("replay capacity must be positive");
    items_.reserve(capacity);
  }

  void push(T item) {
    if (items_.size() < capacity_) {
      items_.push_back(std::move(item));
    } else {
      items_[head_] = std::move(item);
      head_ = (head_ + 1) % capacity_;
    }
  }

  std::size_t size() const { return items_.size(); }
  std::size_t capacity() const { return capacity_; }
  bool empty() const { return items_.empty(); }

  /// i-th item in insertion order (0 = oldest retained).
  const T& operator[](std::size_t i) const { return items_[(head_ + i) % items_.size()]; }

  /// Uniform sample with replacement.
  std::vector<std::size_t> sample(Rng& rng, std::size_t batch) const {
    std::vector<std::size_t> idx(batch);
    for (auto& i : idx) i = rng.index(items_.size());
    return idx;
  }

 private:
  std::size_t capacity_;
  std::size_t head_ = 0;
  std::vector<T> items_;
};

}  // namespace adapam
