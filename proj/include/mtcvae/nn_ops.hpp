#pragma once

#include <Eigen/Dense>

#include "mtcvae/graph.hpp"

namespace mtc {

struct Dims3 {
  Index t = 0, h = 0, w = 0;
  bool operator==(const Dims3&) const = default;
  Index count() const { return t * h * w; }
};

struct Conv3dSpec {
  Index kt = 3, kh = 3, kw = 3;
  Index st = 1, sh = 1, sw = 1;
  Index pt = 1, ph = 1, pw = 1;

  Dims3 out_dims(Dims3 in) const {
    return {(in.t + 2 * pt - kt) / st + 1, (in.h + 2 * ph - kh) / sh + 1,
            (in.w + 2 * pw - kw) / sw + 1};
  }
};

namespace detail {

template <class Scalar>
using MatX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <class Scalar>
using RowMajorMap = Eigen::Map<Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <class Scalar>
using ConstRowMajorMap =
    Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

/// Unfolds one sample (C x T x H x W, flat) into a (C*kt*kh*kw) x (To*Ho*Wo)
/// matrix; out-of-bounds taps read zero.
template <class Scalar>
void im2col(const Scalar* x, Index c_in, Dims3 in, const Conv3dSpec& s, Dims3 out,
            MatX<Scalar>& cols) {
  const Index patch = c_in * s.kt * s.kh * s.kw;
  cols.resize(patch, out.count());
  Index col = 0;
  for (Index to = 0; to < out.t; ++to) {
    for (Index ho = 0; ho < out.h; ++ho) {
      for (Index wo = 0; wo < out.w; ++wo, ++col) {
        Scalar* dst = cols.data() + col * patch;
        const Index t0 = to * s.st - s.pt;
        const Index h0 = ho * s.sh - s.ph;
        const Index w0 = wo * s.sw - s.pw;
        for (Index ci = 0; ci < c_in; ++ci) {
          const Scalar* xc = x + ci * in.count();
          for (Index dt = 0; dt < s.kt; ++dt) {
            const Index it = t0 + dt;
            const bool t_ok = it >= 0 && it < in.t;
            for (Index dh = 0; dh < s.kh; ++dh) {
              const Index ih = h0 + dh;
              const bool th_ok = t_ok && ih >= 0 && ih < in.h;
              const Scalar* row = xc + (it * in.h + ih) * in.w;
              for (Index dw = 0; dw < s.kw; ++dw, ++dst) {
                const Index iw = w0 + dw;
                *dst = (th_ok && iw >= 0 && iw < in.w) ? row[iw] : Scalar(0);
              }
            }
          }
        }
      }
    }
  }
}

/// Scatter-adds column gradients back to the input sample (adjoint of im2col).
template <class Scalar>
void col2im_add(const MatX<Scalar>& dcols, Index c_in, Dims3 in, const Conv3dSpec& s, Dims3 out,
                Scalar* dx) {
  const Index patch = c_in * s.kt * s.kh * s.kw;
  Index col = 0;
  for (Index to = 0; to < out.t; ++to) {
    for (Index ho = 0; ho < out.h; ++ho) {
      for (Index wo = 0; wo < out.w; ++wo, ++col) {
        const Scalar* src = dcols.data() + col * patch;
        const Index t0 = to * s.st - s.pt;
        const Index h0 = ho * s.sh - s.ph;
        const Index w0 = wo * s.sw - s.pw;
        for (Index ci = 0; ci < c_in; ++ci) {
          Scalar* xc = dx + ci * in.count();
          for (Index dt = 0; dt < s.kt; ++dt) {
            const Index it = t0 + dt;
            const bool t_ok = it >= 0 && it < in.t;
            for (Index dh = 0; dh < s.kh; ++dh) {
              const Index ih = h0 + dh;
              const bool th_ok = t_ok && ih >= 0 && ih < in.h;
              Scalar* row = xc + (it * in.h + ih) * in.w;
              for (Index dw = 0; dw < s.kw; ++dw, ++src) {
                const Index iw = w0 + dw;
                if (th_ok && iw >= 0 && iw < in.w) row[iw] += *src;
              }
            }
          }
        }
      }
    }
  }
}

}  // namespace detail

/// 3D convolution on N x C x T x H x W maps. Weight is C_out x C_in x kt x
/// kh x kw, bias C_out. Samples are processed independently (one GEMM per
/// sample), so batched evaluation is bit-identical to per-sample calls.
template <class Scalar>
Var<Scalar> conv3d(Graph<Scalar>& g, const Var<Scalar>& x, const Var<Scalar>& w,
                   const Var<Scalar>& b, const Conv3dSpec& spec) {
  const auto& xs = x->value.shape;
  const auto& ws = w->value.shape;
  if (xs.size() != 5 || ws.size() != 5 || xs[1] != ws[1] || ws[2] != spec.kt || ws[3] != spec.kh ||
      ws[4] != spec.kw || b->value.size() != ws[0])
    throw ShapeError("conv3d: bad shapes x=" + shape_str(xs) + " w=" + shape_str(ws));
  const Index n = xs[0], c_in = xs[1], c_out = ws[0];
  const Dims3 in{xs[2], xs[3], xs[4]};
  const Dims3 out_d = spec.out_dims(in);
  const Index patch = c_in * spec.kt * spec.kh * spec.kw;

  Tensor<Scalar> y({n, c_out, out_d.t, out_d.h, out_d.w});
  detail::MatX<Scalar> cols;
  detail::ConstRowMajorMap<Scalar> wmat(w->value.data.data(), c_out, patch);
  const auto bias = b->value.data.matrix();
  for (Index i = 0; i < n; ++i) {
    detail::im2col(x->value.data.data() + i * c_in * in.count(), c_in, in, spec, out_d, cols);
    detail::RowMajorMap<Scalar> ymat(y.data.data() + i * c_out * out_d.count(), c_out, out_d.count());
    ymat.noalias() = wmat * cols;
    ymat.colwise() += bias;
  }

  auto out = g.result(std::move(y), detail::any_grad<Scalar>({&x, &w, &b}));
  if (out->requires_grad)
    g.record([x, w, b, out, spec, n, c_in, c_out, in, out_d, patch] {
      detail::MatX<Scalar> cols, dcols;
      detail::ConstRowMajorMap<Scalar> wmat(w->value.data.data(), c_out, patch);
      if (x->requires_grad) x->ensure_grad();
      if (w->requires_grad) w->ensure_grad();
      if (b->requires_grad) b->ensure_grad();
      for (Index i = 0; i < n; ++i) {
        detail::ConstRowMajorMap<Scalar> dymat(out->grad.data.data() + i * c_out * out_d.count(),
                                               c_out, out_d.count());
        if (b->requires_grad) b->grad.data.matrix() += dymat.rowwise().sum();
        if (w->requires_grad) {
          detail::im2col(x->value.data.data() + i * c_in * in.count(), c_in, in, spec, out_d, cols);
          detail::RowMajorMap<Scalar> dwmat(w->grad.data.data(), c_out, patch);
          dwmat.noalias() += dymat * cols.transpose();
        }
        if (x->requires_grad) {
          dcols.resize(patch, out_d.count());
          dcols.noalias() = wmat.transpose() * dymat;
          detail::col2im_add(dcols, c_in, in, spec, out_d,
                             x->grad.data.data() + i * c_in * in.count());
        }
      }
    });
  return out;
}

/// Running statistics of one normalization layer (updated only through
/// Graph::commit_stat_updates).
template <class Scalar>
struct BatchNormState {
  Tensor<Scalar> run_mean;
  Tensor<Scalar> run_var;
  Scalar momentum = Scalar(0.1);
  Scalar eps = Scalar(1e-5);

  explicit BatchNormState(Index channels = 0)
      : run_mean(Tensor<Scalar>::zeros({channels})), run_var(Tensor<Scalar>::full({channels}, Scalar(1))) {}
};

/// Channel-wise batch normalization over N x C x T x H x W. Training mode
/// normalizes by batch statistics and queues a running-average update;
/// evaluation mode uses the stored running averages.
template <class Scalar>
Var<Scalar> batchnorm3d(Graph<Scalar>& g, const Var<Scalar>& x, const Var<Scalar>& gamma,
                        const Var<Scalar>& beta, BatchNormState<Scalar>* state, bool training) {
  const auto& xs = x->value.shape;
  const Index n = xs[0], c = xs[1];
  const Index plane = xs[2] * xs[3] * xs[4];
  const Index m = n * plane;
  if (gamma->value.size() != c || beta->value.size() != c || state->run_mean.size() != c)
    throw ShapeError("batchnorm3d: channel mismatch");

  using Vec = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
  Vec mean(c), var(c);
  if (training) {
    mean.setZero();
    var.setZero();
    for (Index i = 0; i < n; ++i)
      for (Index ci = 0; ci < c; ++ci) {
        auto seg = x->value.data.segment((i * c + ci) * plane, plane);
        mean[ci] += seg.sum();
      }
    mean /= Scalar(m);
    for (Index i = 0; i < n; ++i)
      for (Index ci = 0; ci < c; ++ci) {
        auto seg = x->value.data.segment((i * c + ci) * plane, plane);
        var[ci] += (seg - mean[ci]).square().sum();
      }
    var /= Scalar(m);
    // Unbiased variance feeds the running average, biased normalizes.
    Vec run_var_update = m > 1 ? Vec(var * Scalar(m) / Scalar(m - 1)) : var;
    const Scalar mom = state->momentum;
    g.queue_stat_update([state, mean, run_var_update, mom] {
      state->run_mean.data = (Scalar(1) - mom) * state->run_mean.data + mom * mean;
      state->run_var.data = (Scalar(1) - mom) * state->run_var.data + mom * run_var_update;
    });
  } else {
    mean = state->run_mean.data;
    var = state->run_var.data;
  }
  const Vec inv_std = (var + state->eps).rsqrt();

  Tensor<Scalar> y(xs);
  for (Index i = 0; i < n; ++i)
    for (Index ci = 0; ci < c; ++ci) {
      auto seg = x->value.data.segment((i * c + ci) * plane, plane);
      y.data.segment((i * c + ci) * plane, plane) =
          (seg - mean[ci]) * inv_std[ci] * gamma->value.data[ci] + beta->value.data[ci];
    }

  auto out = g.result(std::move(y), detail::any_grad<Scalar>({&x, &gamma, &beta}));
  if (out->requires_grad)
    g.record([x, gamma, beta, out, mean, inv_std, n, c, plane, m, training] {
      using VecL = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
      if (x->requires_grad) x->ensure_grad();
      if (gamma->requires_grad) gamma->ensure_grad();
      if (beta->requires_grad) beta->ensure_grad();
      VecL sum_dy(c), sum_dy_xhat(c);
      sum_dy.setZero();
      sum_dy_xhat.setZero();
      for (Index i = 0; i < n; ++i)
        for (Index ci = 0; ci < c; ++ci) {
          auto dy = out->grad.data.segment((i * c + ci) * plane, plane);
          auto xv = x->value.data.segment((i * c + ci) * plane, plane);
          sum_dy[ci] += dy.sum();
          sum_dy_xhat[ci] += (dy * (xv - mean[ci]) * inv_std[ci]).sum();
        }
      if (beta->requires_grad) beta->grad.data += sum_dy;
      if (gamma->requires_grad) gamma->grad.data += sum_dy_xhat;
      if (x->requires_grad) {
        for (Index i = 0; i < n; ++i)
          for (Index ci = 0; ci < c; ++ci) {
            auto dy = out->grad.data.segment((i * c + ci) * plane, plane);
            auto xv = x->value.data.segment((i * c + ci) * plane, plane);
            auto dx = x->grad.data.segment((i * c + ci) * plane, plane);
            const Scalar gs = gamma->value.data[ci] * inv_std[ci];
            if (training) {
              const auto xhat = (xv - mean[ci]) * inv_std[ci];
              dx += gs * (dy - sum_dy[ci] / Scalar(m) - xhat * (sum_dy_xhat[ci] / Scalar(m)));
            } else {
              dx += gs * dy;
            }
          }
      }
    });
  return out;
}

/// Fully connected layer on N x D_in rows: y = x W^T + b with W D_out x D_in.
/// Rows are processed independently.
template <class Scalar>
Var<Scalar> linear(Graph<Scalar>& g, const Var<Scalar>& x, const Var<Scalar>& w,
                   const Var<Scalar>& b) {
  const Index n = x->value.shape[0], d_in = x->value.shape[1];
  const Index d_out = w->value.shape[0];
  if (w->value.shape[1] != d_in || b->value.size() != d_out)
    throw ShapeError("linear: shape mismatch");
  detail::ConstRowMajorMap<Scalar> wmat(w->value.data.data(), d_out, d_in);
  Tensor<Scalar> y({n, d_out});
  for (Index i = 0; i < n; ++i) {
    Eigen::Map<Eigen::Matrix<Scalar, Eigen::Dynamic, 1>> yrow(y.data.data() + i * d_out, d_out);
    Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>> xrow(x->value.data.data() + i * d_in,
                                                                    d_in);
    yrow.noalias() = wmat * xrow;
    yrow += b->value.data.matrix();
  }
  auto out = g.result(std::move(y), detail::any_grad<Scalar>({&x, &w, &b}));
  if (out->requires_grad)
    g.record([x, w, b, out, n, d_in, d_out] {
      detail::ConstRowMajorMap<Scalar> wmat(w->value.data.data(), d_out, d_in);
      if (x->requires_grad) x->ensure_grad();
      if (w->requires_grad) w->ensure_grad();
      if (b->requires_grad) b->ensure_grad();
      for (Index i = 0; i < n; ++i) {
        Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>> dyrow(
            out->grad.data.data() + i * d_out, d_out);
        Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>> xrow(
            x->value.data.data() + i * d_in, d_in);
        if (b->requires_grad) b->grad.data.matrix() += dyrow;
        if (w->requires_grad) {
          detail::RowMajorMap<Scalar> dwmat(w->grad.data.data(), d_out, d_in);
          dwmat.noalias() += dyrow * xrow.transpose();
        }
        if (x->requires_grad) {
          Eigen::Map<Eigen::Matrix<Scalar, Eigen::Dynamic, 1>> dxrow(x->grad.data.data() + i * d_in,
                                                                     d_in);
          dxrow.noalias() += wmat.transpose() * dyrow;
        }
      }
    });
  return out;
}

/// Nearest-neighbour resize of N x C x T x H x W to the target dims
/// (source index = floor(i * in / out); exact duplication for 2x upsampling).
template <class Scalar>
Var<Scalar> upsample_nearest3d(Graph<Scalar>& g, const Var<Scalar>& x, Dims3 to) {
  const auto& xs = x->value.shape;
  const Index n = xs[0], c = xs[1];
  const Dims3 in{xs[2], xs[3], xs[4]};
  Tensor<Scalar> y({n, c, to.t, to.h, to.w});
  std::vector<Index> mt(to.t), mh(to.h), mw(to.w);
  for (Index i = 0; i < to.t; ++i) mt[i] = i * in.t / to.t;
  for (Index i = 0; i < to.h; ++i) mh[i] = i * in.h / to.h;
  for (Index i = 0; i < to.w; ++i) mw[i] = i * in.w / to.w;
  for (Index i = 0; i < n * c; ++i) {
    const Scalar* src = x->value.data.data() + i * in.count();
    Scalar* dst = y.data.data() + i * to.count();
    for (Index t = 0; t < to.t; ++t)
      for (Index h = 0; h < to.h; ++h) {
        const Scalar* row = src + (mt[t] * in.h + mh[h]) * in.w;
        for (Index w2 = 0; w2 < to.w; ++w2) *dst++ = row[mw[w2]];
      }
  }
  auto out = g.result(std::move(y), x->requires_grad);
  if (out->requires_grad)
    g.record([x, out, n, c, in, to, mt = std::move(mt), mh = std::move(mh), mw = std::move(mw)] {
      x->ensure_grad();
      for (Index i = 0; i < n * c; ++i) {
        Scalar* dst = x->grad.data.data() + i * in.count();
        const Scalar* src = out->grad.data.data() + i * to.count();
        for (Index t = 0; t < to.t; ++t)
          for (Index h = 0; h < to.h; ++h) {
            Scalar* row = dst + (mt[t] * in.h + mh[h]) * in.w;
            for (Index w2 = 0; w2 < to.w; ++w2) row[mw[w2]] += *src++;
          }
      }
    });
  return out;
}

}  // namespace mtc
