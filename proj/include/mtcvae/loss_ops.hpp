#pragma once

#include <cmath>
#include <optional>

#include "mtcvae/graph.hpp"

namespace mtc {

namespace detail {
template <class Scalar>
Scalar sigmoid(Scalar v) {
  return v >= Scalar(0) ? Scalar(1) / (Scalar(1) + std::exp(-v))
                        : std::exp(v) / (Scalar(1) + std::exp(v));
}
}  // namespace detail

/// Sum over elements of the Bernoulli log-likelihood in logits form:
///   sum x*rho - max(rho,0) - log1p(exp(-|rho|))
/// `target` is a constant in [0,1]; an optional 0/1 `mask` drops elements
/// (padding frames) from both the value and the gradient.
template <class Scalar>
Var<Scalar> bernoulli_ll_sum(Graph<Scalar>& g, const Var<Scalar>& logits,
                             const Tensor<Scalar>& target,
                             const Tensor<Scalar>* mask = nullptr) {
  require_same_shape(logits->value, target, "bernoulli_ll_sum");
  if (mask) require_same_shape(logits->value, *mask, "bernoulli_ll_sum mask");
  const auto& rho = logits->value.data;
  auto per_elem = (target.data * rho - rho.max(Scalar(0)) - (-rho.abs()).exp().log1p()).eval();
  if (mask) per_elem *= mask->data;
  auto out = g.result(Tensor<Scalar>::scalar(per_elem.sum()), logits->requires_grad);
  if (out->requires_grad) {
    Tensor<Scalar> mask_copy = mask ? *mask : Tensor<Scalar>();
    const bool has_mask = mask != nullptr;
    g.record([logits, target, out, mask_copy = std::move(mask_copy), has_mask] {
      logits->ensure_grad();
      const Scalar dl = out->grad.data[0];
      auto grad = (target.data - logits->value.data.unaryExpr([](Scalar v) {
                    return detail::sigmoid(v);
                  })).eval();
      if (has_mask) grad *= mask_copy.data;
      logits->grad.data += dl * grad;
    });
  }
  return out;
}

/// KL( N(mean, exp(log_var)) || N(0, I) ) summed over all elements:
///   1/2 sum mean^2 + v - 1 - log v,  v = clamp(exp(log_var), 1e-8, 1e8).
template <class Scalar>
Var<Scalar> gaussian_kl_sum(Graph<Scalar>& g, const Var<Scalar>& mean, const Var<Scalar>& log_var) {
  require_same_shape(mean->value, log_var->value, "gaussian_kl_sum");
  constexpr Scalar kVarLo = Scalar(1e-8), kVarHi = Scalar(1e8);
  auto v = log_var->value.data.exp().max(kVarLo).min(kVarHi).eval();
  const Scalar kl =
      Scalar(0.5) * (mean->value.data.square() + v - Scalar(1) - v.log()).sum();
  auto out =
      g.result(Tensor<Scalar>::scalar(kl), detail::any_grad<Scalar>({&mean, &log_var}));
  if (out->requires_grad)
    g.record([mean, log_var, out, v = std::move(v), kVarLo, kVarHi] {
      const Scalar dl = out->grad.data[0];
      if (mean->requires_grad) {
        mean->ensure_grad();
        mean->grad.data += dl * mean->value.data;
      }
      if (log_var->requires_grad) {
        log_var->ensure_grad();
        // d/dlv [v - log v] = v - 1 where the clamp is inactive, else 0.
        auto active = (v > kVarLo && v < kVarHi).template cast<Scalar>();
        log_var->grad.data += dl * Scalar(0.5) * (v - Scalar(1)) * active;
      }
    });
  return out;
}

/// Symmetrized KL between pixelwise Bernoulli distributions given by two
/// logit tensors, summed over elements:
///   1/2 (p - q)(logit p - logit q), p,q clamped to [1e-7, 1-1e-7].
/// The expression is exactly antisymmetric in (a,b), so skl(a,b) == skl(b,a)
/// bitwise and skl(a,a) == 0 exactly.
template <class Scalar>
Var<Scalar> bernoulli_skl_sum(Graph<Scalar>& g, const Var<Scalar>& logits_a,
                              const Var<Scalar>& logits_b) {
  require_same_shape(logits_a->value, logits_b->value, "bernoulli_skl_sum");
  constexpr Scalar kLo = Scalar(1e-7), kHi = Scalar(1) - Scalar(1e-7);
  auto clamp_prob = [](const auto& logits) {
    return logits.unaryExpr([](Scalar v) { return detail::sigmoid(v); }).max(kLo).min(kHi).eval();
  };
  auto p = clamp_prob(logits_a->value.data);
  auto q = clamp_prob(logits_b->value.data);
  auto lp = (p.log() - (Scalar(1) - p).log()).eval();
  auto lq = (q.log() - (Scalar(1) - q).log()).eval();
  const Scalar skl = (Scalar(0.5) * (p - q) * (lp - lq)).sum();
  auto out = g.result(Tensor<Scalar>::scalar(skl),
                      detail::any_grad<Scalar>({&logits_a, &logits_b}));
  if (out->requires_grad)
    g.record([logits_a, logits_b, out, p = std::move(p), q = std::move(q), lp = std::move(lp),
              lq = std::move(lq), kLo, kHi] {
      const Scalar dl = out->grad.data[0];
      // ds/dp = 1/2 [(lp - lq) + (p - q)/(p(1-p))]; zero where p is clamped.
      if (logits_a->requires_grad) {
        logits_a->ensure_grad();
        auto sig = logits_a->value.data.unaryExpr([](Scalar v) { return detail::sigmoid(v); });
        auto active = (sig > kLo && sig < kHi).template cast<Scalar>();
        auto ds_dp = Scalar(0.5) * ((lp - lq) + (p - q) / (p * (Scalar(1) - p)));
        logits_a->grad.data += dl * ds_dp * sig * (Scalar(1) - sig) * active;
      }
      if (logits_b->requires_grad) {
        logits_b->ensure_grad();
        auto sig = logits_b->value.data.unaryExpr([](Scalar v) { return detail::sigmoid(v); });
        auto active = (sig > kLo && sig < kHi).template cast<Scalar>();
        auto ds_dq = Scalar(-0.5) * ((lp - lq) + (p - q) / (q * (Scalar(1) - q)));
        logits_b->grad.data += dl * ds_dq * sig * (Scalar(1) - sig) * active;
      }
    });
  return out;
}

}  // namespace mtc
