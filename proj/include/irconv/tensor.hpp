#pragma once

#include <algorithm>
#include <cmath>
#include <initializer_list>
#include <vector>

#include "irconv/common.hpp"
#include "irconv/random.hpp"

namespace irconv {

// Dense row-major tensor.  Plain value type: no autodiff state (the tape in
// tape.hpp owns that), no views — desk-scale data is small enough to copy.
template <class Real> struct Tensor {
  Shape shape;
  std::vector<Real> data;

  Tensor() = default;
  explicit Tensor(Shape s) : shape(std::move(s)) {
    check_shape();
    data.assign(static_cast<std::size_t>(numel(shape)), Real(0));
  }
  Tensor(Shape s, std::vector<Real> d) : shape(std::move(s)), data(std::move(d)) {
    check_shape();
    if (static_cast<std::int64_t>(data.size()) != numel(shape))
      throw std::invalid_argument("tensor: data size " +
                                  std::to_string(data.size()) +
                                  " does not match shape " + shape_str(shape));
  }

  void check_shape() const {
    for (auto e : shape)
      if (e < 0)
        throw std::invalid_argument("tensor: negative extent in shape " +
                                    shape_str(shape));
  }

  std::int64_t size() const { return static_cast<std::int64_t>(data.size()); }
  std::int64_t rank() const { return static_cast<std::int64_t>(shape.size()); }

  Real &operator[](std::int64_t i) { return data[static_cast<std::size_t>(i)]; }
  const Real &operator[](std::int64_t i) const {
    return data[static_cast<std::size_t>(i)];
  }

  // 2-D accessors (the dominant case: point/feature matrices).
  Real &at(std::int64_t r, std::int64_t c) {
    return data[static_cast<std::size_t>(r * shape[1] + c)];
  }
  const Real &at(std::int64_t r, std::int64_t c) const {
    return data[static_cast<std::size_t>(r * shape[1] + c)];
  }

  bool all_finite() const {
    for (Real v : data)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  template <class Other> Tensor<Other> cast() const {
    Tensor<Other> out;
    out.shape = shape;
    out.data.resize(data.size());
    for (std::size_t i = 0; i < data.size(); ++i)
      out.data[i] = static_cast<Other>(data[i]);
    return out;
  }

  static Tensor zeros(Shape s) { return Tensor(std::move(s)); }

  static Tensor full(Shape s, Real v) {
    Tensor t(std::move(s));
    std::fill(t.data.begin(), t.data.end(), v);
    return t;
  }

  static Tensor scalar(Real v) { return Tensor({1}, {v}); }

  static Tensor from_rows(std::initializer_list<std::initializer_list<Real>> rows) {
    std::int64_t r = static_cast<std::int64_t>(rows.size());
    std::int64_t c = r ? static_cast<std::int64_t>(rows.begin()->size()) : 0;
    Tensor t({r, c});
    std::int64_t i = 0;
    for (auto &row : rows) {
      if (static_cast<std::int64_t>(row.size()) != c)
        throw std::invalid_argument("tensor: ragged row list");
      for (Real v : row) t.data[static_cast<std::size_t>(i++)] = v;
    }
    return t;
  }

  static Tensor uniform(Shape s, Rng &rng, Real lo, Real hi) {
    Tensor t(std::move(s));
    for (auto &v : t.data)
      v = static_cast<Real>(rng.uniform(static_cast<double>(lo),
                                        static_cast<double>(hi)));
    return t;
  }

  static Tensor normal(Shape s, Rng &rng, Real mean = 0, Real stddev = 1) {
    Tensor t(std::move(s));
    for (auto &v : t.data)
      v = static_cast<Real>(static_cast<double>(mean) +
                            static_cast<double>(stddev) * rng.normal());
    return t;
  }

  // He/Kaiming uniform fan-in initialisation: U(-b, b), b = sqrt(6 / fan_in).
  static Tensor he_uniform(Shape s, std::int64_t fan_in, Rng &rng) {
    if (fan_in <= 0) throw std::invalid_argument("he_uniform: fan_in must be positive");
    double b = std::sqrt(6.0 / static_cast<double>(fan_in));
    return uniform(std::move(s), rng, static_cast<Real>(-b), static_cast<Real>(b));
  }
};

// numpy-style broadcast of two shapes (align trailing axes; extents must
// match or one of them be 1).
inline Shape broadcast_shapes(const Shape &a, const Shape &b) {
  Shape out(std::max(a.size(), b.size()));
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::int64_t ea = i < out.size() - a.size() ? 1 : a[i - (out.size() - a.size())];
    std::int64_t eb = i < out.size() - b.size() ? 1 : b[i - (out.size() - b.size())];
    if (ea != eb && ea != 1 && eb != 1)
      throw std::invalid_argument("broadcast: incompatible shapes " +
                                  shape_str(a) + " vs " + shape_str(b));
    out[i] = std::max(ea, eb);
  }
  return out;
}

// Row-major strides, with stride 0 on broadcast (extent-1) axes relative to
// the given output rank.
inline std::vector<std::int64_t> broadcast_strides(const Shape &in,
                                                   std::size_t out_rank) {
  std::vector<std::int64_t> strides(out_rank, 0);
  std::int64_t s = 1;
  for (std::size_t i = in.size(); i-- > 0;) {
    std::size_t o = i + (out_rank - in.size());
    strides[o] = (in[i] == 1) ? 0 : s;
    s *= in[i];
  }
  return strides;
}

} // namespace irconv
