#pragma once

#include <cassert>
#include <cstddef>
#include <span>
#include <vector>

namespace bevtrack {

// Dense channel-major grid: element (c, r, x) lives at (c * rows + r) * cols + x.
template <typename T>
class Grid {
 public:
  Grid() = default;
  Grid(int channels, int rows, int cols, T fill = T{})
      : channels_(channels), rows_(rows), cols_(cols),
        data_(static_cast<std::size_t>(channels) * rows * cols, fill) {}

  int channels() const { return channels_; }
  int rows() const { return rows_; }
  int cols() const { return cols_; }
  std::size_t plane_size() const { return static_cast<std::size_t>(rows_) * cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  bool same_shape(const Grid& o) const {
    return channels_ == o.channels_ && rows_ == o.rows_ && cols_ == o.cols_;
  }
  template <typename U>
  bool same_plane(const Grid<U>& o) const {
    return rows_ == o.rows() && cols_ == o.cols();
  }
  bool contains(int r, int x) const { return r >= 0 && r < rows_ && x >= 0 && x < cols_; }

  T& operator()(int c, int r, int x) {
    assert(c >= 0 && c < channels_ && contains(r, x));
    return data_[(static_cast<std::size_t>(c) * rows_ + r) * cols_ + x];
  }
  const T& operator()(int c, int r, int x) const {
    assert(c >= 0 && c < channels_ && contains(r, x));
    return data_[(static_cast<std::size_t>(c) * rows_ + r) * cols_ + x];
  }
  T& at(int r, int x) { return (*this)(0, r, x); }
  const T& at(int r, int x) const { return (*this)(0, r, x); }

  std::span<T> plane(int c) {
    return {data_.data() + static_cast<std::size_t>(c) * plane_size(), plane_size()};
  }
  std::span<const T> plane(int c) const {
    return {data_.data() + static_cast<std::size_t>(c) * plane_size(), plane_size()};
  }

  std::vector<T>& data() { return data_; }
  const std::vector<T>& data() const { return data_; }

  bool operator==(const Grid&) const = default;

 private:
  int channels_ = 0;
  int rows_ = 0;
  int cols_ = 0;
  std::vector<T> data_;
};

using GridD = Grid<double>;
using Mask = Grid<unsigned char>;

}  // namespace bevtrack
