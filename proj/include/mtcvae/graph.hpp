#pragma once

#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "mtcvae/tensor.hpp"

namespace mtc {

/// Reverse-mode autodiff over whole tensors. Operations record a backward
/// closure on a tape owned by the Graph; Graph::backward replays the tape
/// in reverse. Graphs are single-use and cheap to construct.
template <class Scalar>
class Graph {
 public:
  struct Node {
    Tensor<Scalar> value;
    Tensor<Scalar> grad;  // allocated on first use
    bool requires_grad = false;

    void ensure_grad() {
      if (grad.size() != value.size()) grad = Tensor<Scalar>::zeros(value.shape);
    }
  };

  using Var = std::shared_ptr<Node>;

  explicit Graph(bool recording = true) : recording_(recording) {}

  bool recording() const { return recording_; }

  Var leaf(Tensor<Scalar> value, bool requires_grad = false) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->requires_grad = requires_grad && recording_;
    return n;
  }

  Var constant(Tensor<Scalar> value) { return leaf(std::move(value), false); }

  Var result(Tensor<Scalar> value, bool requires_grad) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->requires_grad = requires_grad && recording_;
    return n;
  }

  void record(std::function<void()> backward) {
    if (recording_) tape_.push_back(std::move(backward));
  }

  /// Normalization layers queue running-statistic updates here instead of
  /// mutating state mid-forward; the trainer commits them once per step in
  /// a fixed order. Forward values never depend on these updates.
  void queue_stat_update(std::function<void()> update) { stat_updates_.push_back(std::move(update)); }

  void commit_stat_updates() {
    for (auto& u : stat_updates_) u();
    stat_updates_.clear();
  }

  /// Seeds d(root)/d(root) = seed and replays the tape. `root` must hold a
  /// single element.
  void backward(const Var& root, Scalar seed = Scalar(1)) {
    if (root->value.size() != 1) throw ShapeError("backward: root is not a scalar");
    root->ensure_grad();
    root->grad.data[0] += seed;
    for (auto it = tape_.rbegin(); it != tape_.rend(); ++it) (*it)();
  }

 private:
  bool recording_;
  std::vector<std::function<void()>> tape_;
  std::vector<std::function<void()>> stat_updates_;
};

template <class Scalar>
using Var = typename Graph<Scalar>::Var;

namespace detail {
template <class Scalar>
bool any_grad(std::initializer_list<const Var<Scalar>*> vars) {
  for (const auto* v : vars)
    if ((*v)->requires_grad) return true;
  return false;
}
}  // namespace detail

// ---- elementwise ops -------------------------------------------------------

template <class Scalar>
Var<Scalar> add(Graph<Scalar>& g, const Var<Scalar>& a, const Var<Scalar>& b) {
  require_same_shape(a->value, b->value, "add");
  auto out = g.result(Tensor<Scalar>(a->value.shape, a->value.data + b->value.data),
                      detail::any_grad<Scalar>({&a, &b}));
  if (out->requires_grad)
    g.record([a, b, out] {
      if (a->requires_grad) {
        a->ensure_grad();
        a->grad.data += out->grad.data;
      }
      if (b->requires_grad) {
        b->ensure_grad();
        b->grad.data += out->grad.data;
      }
    });
  return out;
}

template <class Scalar>
Var<Scalar> mul(Graph<Scalar>& g, const Var<Scalar>& a, const Var<Scalar>& b) {
  require_same_shape(a->value, b->value, "mul");
  auto out = g.result(Tensor<Scalar>(a->value.shape, a->value.data * b->value.data),
                      detail::any_grad<Scalar>({&a, &b}));
  if (out->requires_grad)
    g.record([a, b, out] {
      if (a->requires_grad) {
        a->ensure_grad();
        a->grad.data += out->grad.data * b->value.data;
      }
      if (b->requires_grad) {
        b->ensure_grad();
        b->grad.data += out->grad.data * a->value.data;
      }
    });
  return out;
}

template <class Scalar>
Var<Scalar> scale(Graph<Scalar>& g, const Var<Scalar>& a, Scalar s) {
  auto out = g.result(Tensor<Scalar>(a->value.shape, a->value.data * s), a->requires_grad);
  if (out->requires_grad)
    g.record([a, out, s] {
      a->ensure_grad();
      a->grad.data += out->grad.data * s;
    });
  return out;
}

template <class Scalar>
Var<Scalar> relu(Graph<Scalar>& g, const Var<Scalar>& a) {
  auto out = g.result(Tensor<Scalar>(a->value.shape, a->value.data.max(Scalar(0))), a->requires_grad);
  if (out->requires_grad)
    g.record([a, out] {
      a->ensure_grad();
      a->grad.data +=
          out->grad.data * (a->value.data > Scalar(0)).template cast<Scalar>();
    });
  return out;
}

template <class Scalar>
Var<Scalar> sum_all(Graph<Scalar>& g, const Var<Scalar>& a) {
  auto out = g.result(Tensor<Scalar>::scalar(a->value.data.sum()), a->requires_grad);
  if (out->requires_grad)
    g.record([a, out] {
      a->ensure_grad();
      a->grad.data += out->grad.data[0];
    });
  return out;
}

/// sample = mean + exp(log_var / 2) .* noise   (noise enters as a constant)
template <class Scalar>
Var<Scalar> reparameterize(Graph<Scalar>& g, const Var<Scalar>& mean, const Var<Scalar>& log_var,
                           const Tensor<Scalar>& noise) {
  require_same_shape(mean->value, log_var->value, "reparameterize");
  require_same_shape(mean->value, noise, "reparameterize noise");
  Tensor<Scalar> std_dev(mean->value.shape, (log_var->value.data * Scalar(0.5)).exp());
  auto out = g.result(Tensor<Scalar>(mean->value.shape, mean->value.data + std_dev.data * noise.data),
                      detail::any_grad<Scalar>({&mean, &log_var}));
  if (out->requires_grad)
    g.record([mean, log_var, out, std_dev, noise] {
      if (mean->requires_grad) {
        mean->ensure_grad();
        mean->grad.data += out->grad.data;
      }
      if (log_var->requires_grad) {
        log_var->ensure_grad();
        log_var->grad.data += out->grad.data * std_dev.data * noise.data * Scalar(0.5);
      }
    });
  return out;
}

// ---- row/column plumbing on N x D matrices ---------------------------------

/// Concatenates two N x Da and N x Db tensors along the feature axis.
template <class Scalar>
Var<Scalar> concat_cols(Graph<Scalar>& g, const Var<Scalar>& a, const Var<Scalar>& b) {
  const Index n = a->value.shape[0];
  if (b->value.shape[0] != n) throw ShapeError("concat_cols: row mismatch");
  const Index da = a->value.shape[1], db = b->value.shape[1];
  Tensor<Scalar> v({n, da + db});
  for (Index i = 0; i < n; ++i) {
    v.data.segment(i * (da + db), da) = a->value.data.segment(i * da, da);
    v.data.segment(i * (da + db) + da, db) = b->value.data.segment(i * db, db);
  }
  auto out = g.result(std::move(v), detail::any_grad<Scalar>({&a, &b}));
  if (out->requires_grad)
    g.record([a, b, out, n, da, db] {
      for (Index i = 0; i < n; ++i) {
        if (a->requires_grad) {
          a->ensure_grad();
          a->grad.data.segment(i * da, da) += out->grad.data.segment(i * (da + db), da);
        }
        if (b->requires_grad) {
          b->ensure_grad();
          b->grad.data.segment(i * db, db) += out->grad.data.segment(i * (da + db) + da, db);
        }
      }
    });
  return out;
}

/// Gathers rows of an N x D tensor; duplicate indices accumulate gradient.
template <class Scalar>
Var<Scalar> gather_rows(Graph<Scalar>& g, const Var<Scalar>& x, std::vector<Index> rows) {
  const Index d = x->value.shape[1];
  Tensor<Scalar> v({static_cast<Index>(rows.size()), d});
  for (std::size_t i = 0; i < rows.size(); ++i)
    v.data.segment(static_cast<Index>(i) * d, d) = x->value.data.segment(rows[i] * d, d);
  auto out = g.result(std::move(v), x->requires_grad);
  if (out->requires_grad)
    g.record([x, out, rows = std::move(rows), d] {
      x->ensure_grad();
      for (std::size_t i = 0; i < rows.size(); ++i)
        x->grad.data.segment(rows[i] * d, d) += out->grad.data.segment(static_cast<Index>(i) * d, d);
    });
  return out;
}

/// Extracts one row of an N x D tensor as a 1 x D tensor.
template <class Scalar>
Var<Scalar> take_row(Graph<Scalar>& g, const Var<Scalar>& x, Index row) {
  return gather_rows(g, x, std::vector<Index>{row});
}

}  // namespace mtc
