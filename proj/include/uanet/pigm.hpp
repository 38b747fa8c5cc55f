#pragma once

#include "uanet/ops.hpp"

namespace uanet {

enum class PigmMode { Off, SpatialOnly, ChannelOnly, SpatialChannel };

template <typename S>
struct PigmParams {
  Tensor<S> alpha, beta;
  PigmMode mode = PigmMode::SpatialChannel;

  // Zero gains make the module an exact identity at initialization.
  static PigmParams init(PigmMode mode) {
    PigmParams p;
    p.mode = mode;
    p.alpha = Tensor<S>::zeros({1});
    p.alpha.set_requires_grad(true);
    p.beta = Tensor<S>::zeros({1});
    p.beta.set_requires_grad(true);
    return p;
  }
};

namespace detail {

template <typename S>
void check_prior_extents(const char* op, const Tensor<S>& f, const Tensor<S>& m) {
  check_rank(op, f, 3);
  check_rank(op, m, 3);
  if (m.dim(0) != 1 || m.dim(1) != f.dim(1) || m.dim(2) != f.dim(2))
    throw shape_error(std::string(op) + ": prior map " + shape_str(m.shape()) +
                      " does not match feature " + shape_str(f.shape()));
}

}  // namespace detail

// Per-channel spatial cross-attention against the prior map. For channel i
// with v = flatten(F5[i]) and k = flatten(M5), attention row n is
// softmax(v[n] * k) and the attended map is o[j] = sum_n v[n] * T[n,j].
// Rows are recomputed in backward, so peak memory is O(N) per channel.
template <typename S>
Tensor<S> prior_cross_attention(const Tensor<S>& f5, const Tensor<S>& m5) {
  detail::check_prior_extents("prior_cross_attention", f5, m5);
  const int c = f5.dim(0);
  const std::int64_t n = static_cast<std::int64_t>(f5.dim(1)) * f5.dim(2);
  Tensor<S> out = Tensor<S>::empty(f5.shape());
  const auto& k = m5.val();
  ArrayX<S> row(n);
  for (int ci = 0; ci < c; ++ci) {
    const auto v = f5.val().segment(ci * n, n);
    ArrayX<S> o = ArrayX<S>::Zero(n);
    for (std::int64_t q = 0; q < n; ++q) {
      row = v[q] * k;
      row = (row - row.maxCoeff()).exp();
      row /= row.sum();
      o += v[q] * row;
    }
    out.val().segment(ci * n, n) = o;
  }
  return detail::finish_op<S>("prior_cross_attention", std::move(out), {f5, m5},
      [pf = f5.node_ptr(), pm = m5.node_ptr(), c, n](TensorNode<S>& node) {
        const auto& k = pm->value;
        ArrayX<S> row(n), dT(n), dA(n);
        ArrayX<S> dk = ArrayX<S>::Zero(n);
        for (int ci = 0; ci < c; ++ci) {
          const auto v = pf->value.segment(ci * n, n);
          const auto go = node.grad.segment(ci * n, n);
          ArrayX<S> dv = ArrayX<S>::Zero(n);
          for (std::int64_t q = 0; q < n; ++q) {
            row = v[q] * k;
            row = (row - row.maxCoeff()).exp();
            row /= row.sum();
            dT = v[q] * go;
            const S s = (dT * row).sum();
            dA = row * (dT - s);
            dv[q] = (row * go).sum() + (dA * k).sum();
            if (pm->requires_grad) dk += v[q] * dA;
          }
          if (pf->requires_grad) pf->grad_buffer().segment(ci * n, n) += dv;
        }
        if (pm->requires_grad) pm->grad_buffer() += dk;
      });
}

// One channel's attention matrix, for inspection; row q is
// softmax(v[q] * k).
template <typename S>
MatrixRM<S> attention_rows(const Tensor<S>& f5, const Tensor<S>& m5, int channel) {
  detail::check_prior_extents("attention_rows", f5, m5);
  if (channel < 0 || channel >= f5.dim(0))
    throw param_error("attention_rows: channel out of range");
  const std::int64_t n = static_cast<std::int64_t>(f5.dim(1)) * f5.dim(2);
  const auto v = f5.val().segment(channel * n, n);
  const auto& k = m5.val();
  MatrixRM<S> t(n, n);
  for (std::int64_t q = 0; q < n; ++q) {
    ArrayX<S> row = v[q] * k;
    row = (row - row.maxCoeff()).exp();
    row /= row.sum();
    t.row(q) = row.matrix().transpose();
  }
  return t;
}

template <typename S>
Tensor<S> spatial_cross_attention(const Tensor<S>& f5, const Tensor<S>& m5,
                                  const Tensor<S>& alpha) {
  return add(mul_scalar(prior_cross_attention(f5, m5), alpha), f5);
}

// Channel gate: s = sigmoid(reshape(R5, CxN) * flatten(M5)), applied as
// G5 = beta * s (.) R5 + R5 with s broadcast over the spatial extent.
template <typename S>
Tensor<S> channel_gate(const Tensor<S>& r5, const Tensor<S>& m5, const Tensor<S>& beta) {
  detail::check_prior_extents("channel_gate", r5, m5);
  const int c = r5.dim(0);
  const int n = r5.dim(1) * r5.dim(2);
  Tensor<S> q = reshape(m5, {n, 1});
  Tensor<S> keys = reshape(r5, {c, n});
  Tensor<S> s = sigmoid(matmul(keys, q));  // C x 1
  return add(mul_scalar(mul_channelwise(r5, s), beta), r5);
}

template <typename S>
Tensor<S> pigm_forward(const Tensor<S>& f5, const Tensor<S>& m5, const PigmParams<S>& p) {
  switch (p.mode) {
    case PigmMode::Off:
      return f5;
    case PigmMode::SpatialOnly:
      return spatial_cross_attention(f5, m5, p.alpha);
    case PigmMode::ChannelOnly:
      return channel_gate(f5, m5, p.beta);
    case PigmMode::SpatialChannel:
      return channel_gate(spatial_cross_attention(f5, m5, p.alpha), m5, p.beta);
  }
  throw contract_error("pigm_forward: bad mode");
}

}  // namespace uanet
