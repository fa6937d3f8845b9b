#pragma once

#include <Eigen/Core>

#include <initializer_list>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace mtc {

/// Error raised when tensor shapes do not match an operation's contract.
class ShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Index = Eigen::Index;
using Shape = std::vector<Index>;

inline Index shape_count(const Shape& shape) {
  Index n = 1;
  for (Index d : shape) n *= d;
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + ")";
}

/// Dense n-dimensional array with row-major index order (last axis fastest),
/// backed by a flat Eigen array.
template <class Scalar>
struct Tensor {
  using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

  Shape shape;
  Array data;

  Tensor() = default;
  explicit Tensor(Shape dims) : shape(std::move(dims)), data(Array::Zero(shape_count(shape))) {}
  Tensor(Shape dims, Array values) : shape(std::move(dims)), data(std::move(values)) {
    if (data.size() != shape_count(shape))
      throw ShapeError("tensor data size does not match shape " + shape_str(shape));
  }

  static Tensor zeros(Shape dims) { return Tensor(std::move(dims)); }
  static Tensor full(Shape dims, Scalar v) {
    Tensor t;
    t.shape = std::move(dims);
    t.data = Array::Constant(shape_count(t.shape), v);
    return t;
  }
  static Tensor scalar(Scalar v) { return full({1}, v); }

  Index size() const { return data.size(); }
  Index dim(std::size_t i) const { return shape[i]; }
  Index ndim() const { return static_cast<Index>(shape.size()); }

  Scalar& operator[](Index i) { return data[i]; }
  Scalar operator[](Index i) const { return data[i]; }

  Scalar& at(std::initializer_list<Index> idx) { return data[offset(idx)]; }
  Scalar at(std::initializer_list<Index> idx) const { return data[offset(idx)]; }

  Index offset(std::initializer_list<Index> idx) const {
    Index off = 0;
    std::size_t k = 0;
    for (Index i : idx) {
      off = off * shape[k] + i;
      ++k;
    }
    return off;
  }

  Tensor reshaped(Shape dims) const {
    if (shape_count(dims) != size())
      throw ShapeError("reshape " + shape_str(shape) + " -> " + shape_str(dims));
    return Tensor(std::move(dims), data);
  }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  template <class S2>
  Tensor<S2> cast() const {
    Tensor<S2> out;
    out.shape = shape;
    out.data = data.template cast<S2>();
    return out;
  }
};

template <class Scalar>
void require_same_shape(const Tensor<Scalar>& a, const Tensor<Scalar>& b, const char* what) {
  if (!a.same_shape(b))
    throw ShapeError(std::string(what) + ": shape mismatch " + shape_str(a.shape) + " vs " +
                     shape_str(b.shape));
}

/// Videos and chunks are stored as T x H x W x C in [0,1]; the conv stack
/// works on N x C x T x H x W feature maps. These two helpers convert.
template <class Scalar>
Tensor<Scalar> thwc_to_cthw(const Tensor<Scalar>& v) {
  const Index t = v.shape[0], h = v.shape[1], w = v.shape[2], c = v.shape[3];
  Tensor<Scalar> out({c, t, h, w});
  for (Index it = 0; it < t; ++it)
    for (Index iy = 0; iy < h; ++iy)
      for (Index ix = 0; ix < w; ++ix)
        for (Index ic = 0; ic < c; ++ic)
          out.data[((ic * t + it) * h + iy) * w + ix] = v.data[((it * h + iy) * w + ix) * c + ic];
  return out;
}

template <class Scalar>
Tensor<Scalar> cthw_to_thwc(const Tensor<Scalar>& v) {
  const Index c = v.shape[0], t = v.shape[1], h = v.shape[2], w = v.shape[3];
  Tensor<Scalar> out({t, h, w, c});
  for (Index ic = 0; ic < c; ++ic)
    for (Index it = 0; it < t; ++it)
      for (Index iy = 0; iy < h; ++iy)
        for (Index ix = 0; ix < w; ++ix)
          out.data[((it * h + iy) * w + ix) * c + ic] = v.data[((ic * t + it) * h + iy) * w + ix];
  return out;
}

/// Stacks per-sample tensors of identical shape into one tensor with a
/// leading batch axis.
template <class Scalar>
Tensor<Scalar> stack(const std::vector<Tensor<Scalar>>& items) {
  if (items.empty()) throw ShapeError("stack: empty input");
  Shape s = items[0].shape;
  for (const auto& t : items) require_same_shape(items[0], t, "stack");
  Shape out_shape;
  out_shape.push_back(static_cast<Index>(items.size()));
  out_shape.insert(out_shape.end(), s.begin(), s.end());
  Tensor<Scalar> out(out_shape);
  const Index elem = items[0].size();
  for (std::size_t i = 0; i < items.size(); ++i)
    out.data.segment(static_cast<Index>(i) * elem, elem) = items[i].data;
  return out;
}

/// Extracts sample `n` from a batched tensor (drops the leading axis).
template <class Scalar>
Tensor<Scalar> slice_batch(const Tensor<Scalar>& batched, Index n) {
  Shape s(batched.shape.begin() + 1, batched.shape.end());
  const Index elem = shape_count(s);
  Tensor<Scalar> out;
  out.shape = std::move(s);
  out.data = batched.data.segment(n * elem, elem);
  return out;
}

}  // namespace mtc
