#pragma once

#include "mbsde/types.hpp"

#include <cstddef>

namespace mbsde {

/// Knot range [first, last] of a time grid (inclusive on both ends).
struct Window {
  std::size_t first = 0;
  std::size_t last = 0;

  std::size_t steps() const { return last - first; }
  bool contains(std::size_t k) const { return k >= first && k <= last; }
  friend bool operator==(const Window&, const Window&) = default;
};

/// Uniform grid t_k = k T / N on [0, T]; t_N is T exactly.
class TimeGrid {
 public:
  TimeGrid() = default;
  TimeGrid(double horizon, std::size_t steps);

  double horizon() const { return horizon_; }
  std::size_t steps() const { return steps_; }
  double dt() const { return dt_; }
  double time(std::size_t k) const;
  Window full() const { return {0, steps_}; }

  /// Window [t_first, t_last]; throws if it does not lie inside the grid.
  Window window(std::size_t first, std::size_t last) const;

  friend bool operator==(const TimeGrid&, const TimeGrid&) = default;

 private:
  double horizon_ = 1.0;
  std::size_t steps_ = 1;
  double dt_ = 1.0;
};

/// Read-only view of one Brownian path up to (and including) knot `knot()`.
/// Evaluators receive this so that path-dependent drivers and terminal
/// conditions can be expressed; Markovian ones only read `state()`.
class PathView {
 public:
  PathView(const double* base, std::ptrdiff_t knot_stride, std::ptrdiff_t coord_stride,
           std::size_t knot, Index dim, const TimeGrid* grid)
      : base_(base), knot_stride_(knot_stride), coord_stride_(coord_stride),
        knot_(knot), dim_(dim), grid_(grid) {}

  std::size_t knot() const { return knot_; }
  Index dim() const { return dim_; }
  double time() const { return grid_->time(knot_); }
  double time(std::size_t j) const { return grid_->time(j); }
  const TimeGrid& grid() const { return *grid_; }

  double operator()(std::size_t j, Index i) const {
    return base_[static_cast<std::ptrdiff_t>(j) * knot_stride_ + i * coord_stride_];
  }
  double operator()(Index i) const { return (*this)(knot_, i); }

  Vector at(std::size_t j) const {
    Vector w(dim_);
    for (Index i = 0; i < dim_; ++i) w[i] = (*this)(j, i);
    return w;
  }
  Vector state() const { return at(knot_); }

  /// Same path, truncated at an earlier knot.
  PathView prefix(std::size_t j) const {
    return {base_, knot_stride_, coord_stride_, j, dim_, grid_};
  }

 private:
  const double* base_;
  std::ptrdiff_t knot_stride_;
  std::ptrdiff_t coord_stride_;
  std::size_t knot_;
  Index dim_;
  const TimeGrid* grid_;
};

}  // namespace mbsde
