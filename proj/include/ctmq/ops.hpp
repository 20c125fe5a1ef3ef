#ifndef CTMQ_OPS_HPP
#define CTMQ_OPS_HPP

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "ctmq/autodiff.hpp"
#include "ctmq/parallel.hpp"
#include "ctmq/tensor.hpp"

namespace ctmq::ops {

namespace detail {

template <class T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class T>
void accumulate(const Var<T>& v, const Tensor<T>& g) {
  if (v.requires_grad()) v.node()->accumulate(g);
}

struct ConvGeometry {
  std::size_t n, c, h, w;        // input
  std::size_t o, kh, kw;         // weight
  std::size_t stride, pad;
  std::size_t oh, ow;

  std::size_t patch() const { return c * kh * kw; }
  std::size_t out_area() const { return oh * ow; }
};

template <class T>
void im2col(const T* x, const ConvGeometry& g, T* cols) {
  const std::size_t area = g.out_area();
  for (std::size_t c = 0; c < g.c; ++c) {
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        T* row = cols + ((c * g.kh + ki) * g.kw + kj) * area;
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ki) - static_cast<std::ptrdiff_t>(g.pad);
          for (std::size_t ox = 0; ox < g.ow; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kj) - static_cast<std::ptrdiff_t>(g.pad);
            const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<std::ptrdiff_t>(g.h) &&
                                ix < static_cast<std::ptrdiff_t>(g.w);
            row[oy * g.ow + ox] = inside ? x[(c * g.h + static_cast<std::size_t>(iy)) * g.w + static_cast<std::size_t>(ix)] : T{0};
          }
        }
      }
    }
  }
}

template <class T>
void col2im_add(const T* cols, const ConvGeometry& g, T* x) {
  const std::size_t area = g.out_area();
  for (std::size_t c = 0; c < g.c; ++c) {
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        const T* row = cols + ((c * g.kh + ki) * g.kw + kj) * area;
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ki) - static_cast<std::ptrdiff_t>(g.pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
          for (std::size_t ox = 0; ox < g.ow; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kj) - static_cast<std::ptrdiff_t>(g.pad);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) continue;
            x[(c * g.h + static_cast<std::size_t>(iy)) * g.w + static_cast<std::size_t>(ix)] += row[oy * g.ow + ox];
          }
        }
      }
    }
  }
}

inline std::size_t pooled_extent(std::size_t in, std::size_t window, std::size_t stride, std::size_t pad) {
  return (in + 2 * pad - window) / stride + 1;
}

}  // namespace detail

/// 2-D convolution without bias, NCHW input and OIHW weight.
template <class T>
Var<T> conv2d(Tape<T>& tape, const Var<T>& input, const Var<T>& weight, std::size_t stride, std::size_t pad) {
  const auto& xs = input.shape();
  const auto& ws = weight.shape();
  if (xs.size() != 4 || ws.size() != 4 || xs[1] != ws[1]) {
    throw Error("conv2d: incompatible input " + shape_str(xs) + " and weight " + shape_str(ws));
  }
  if (stride == 0) throw Error("conv2d: stride must be positive");
  if (xs[2] + 2 * pad < ws[2] || xs[3] + 2 * pad < ws[3]) {
    throw Error("conv2d: kernel " + shape_str(ws) + " does not fit padded input " + shape_str(xs));
  }
  detail::ConvGeometry g{xs[0], xs[1], xs[2], xs[3], ws[0], ws[2], ws[3], stride, pad, 0, 0};
  g.oh = detail::pooled_extent(g.h, g.kh, stride, pad);
  g.ow = detail::pooled_extent(g.w, g.kw, stride, pad);

  using Mat = detail::MatRM<T>;
  Tensor<T> out({g.n, g.o, g.oh, g.ow});
  const T* xp = input.value().ptr();
  const T* wp = weight.value().ptr();
  T* op = out.ptr();
  const std::size_t in_stride = g.c * g.h * g.w;
  const std::size_t out_stride = g.o * g.out_area();

  parallel_for(g.n, [&](std::size_t begin, std::size_t end, std::size_t) {
    std::vector<T> cols(g.patch() * g.out_area());
    Eigen::Map<const Mat> wm(wp, g.o, g.patch());
    for (std::size_t n = begin; n < end; ++n) {
      detail::im2col(xp + n * in_stride, g, cols.data());
      Eigen::Map<const Mat> cm(cols.data(), g.patch(), g.out_area());
      Eigen::Map<Mat> om(op + n * out_stride, g.o, g.out_area());
      om.noalias() = wm * cm;
    }
  });

  return tape.record("conv2d", std::move(out), {input, weight}, [input, weight, g](const Tensor<T>& gout) {
    const std::size_t in_stride = g.c * g.h * g.w;
    const std::size_t out_stride = g.o * g.out_area();
    const std::size_t chunks = parallel_chunks(g.n);
    const bool want_x = input.requires_grad();
    const bool want_w = weight.requires_grad();
    Tensor<T> gx = want_x ? Tensor<T>::zeros_like(input.value()) : Tensor<T>();
    std::vector<std::vector<T>> gw_parts(chunks);
    Eigen::Map<const Mat> wm(weight.value().ptr(), g.o, g.patch());

    parallel_for(g.n, [&](std::size_t begin, std::size_t end, std::size_t chunk) {
      std::vector<T> cols(g.patch() * g.out_area());
      std::vector<T> gcols(want_x ? cols.size() : 0);
      auto& gw_part = gw_parts[chunk];
      if (want_w) gw_part.assign(g.o * g.patch(), T{0});
      for (std::size_t n = begin; n < end; ++n) {
        Eigen::Map<const Mat> gm(gout.ptr() + n * out_stride, g.o, g.out_area());
        if (want_w) {
          detail::im2col(input.value().ptr() + n * in_stride, g, cols.data());
          Eigen::Map<const Mat> cm(cols.data(), g.patch(), g.out_area());
          Eigen::Map<Mat> gwm(gw_part.data(), g.o, g.patch());
          gwm.noalias() += gm * cm.transpose();
        }
        if (want_x) {
          Eigen::Map<Mat> gcm(gcols.data(), g.patch(), g.out_area());
          gcm.noalias() = wm.transpose() * gm;
          detail::col2im_add(gcols.data(), g, gx.ptr() + n * in_stride);
        }
      }
    });

    if (want_w) {
      Tensor<T> gw = Tensor<T>::zeros_like(weight.value());
      for (const auto& part : gw_parts) {
        for (std::size_t i = 0; i < part.size(); ++i) gw[i] += part[i];
      }
      weight.node()->accumulate(gw);
    }
    if (want_x) input.node()->accumulate(gx);
  });
}

/// Running statistics owned by a batch-norm layer.
template <class T>
struct BatchNormState {
  Var<T> running_mean;
  Var<T> running_var;
  T momentum = T(0.1);
  T eps = T(1e-5);
};

/// Per-channel batch normalization over (N, H, W) for rank-4 input, or over N for rank-2 input.
template <class T>
Var<T> batch_norm(Tape<T>& tape, const Var<T>& input, const Var<T>& gamma, const Var<T>& beta,
                  BatchNormState<T>& state, bool training) {
  const auto& xs = input.shape();
  if (xs.size() != 4 && xs.size() != 2) throw Error("batch_norm: expected rank 2 or 4 input, got " + shape_str(xs));
  const std::size_t n = xs[0], c = xs[1];
  const std::size_t area = xs.size() == 4 ? xs[2] * xs[3] : 1;
  if (gamma.value().size() != c || beta.value().size() != c) {
    throw Error("batch_norm: gamma/beta " + shape_str(gamma.shape()) + "/" + shape_str(beta.shape()) +
                " do not match channel count of " + shape_str(xs));
  }
  const std::size_t count = n * area;
  const T* x = input.value().ptr();

  std::vector<T> mean(c), invstd(c);
  if (training) {
    auto& rm = state.running_mean.mutable_value();
    auto& rv = state.running_var.mutable_value();
    for (std::size_t ch = 0; ch < c; ++ch) {
      double sum = 0.0;
      for (std::size_t b = 0; b < n; ++b) {
        const T* p = x + (b * c + ch) * area;
        for (std::size_t i = 0; i < area; ++i) sum += p[i];
      }
      const double mu = sum / static_cast<double>(count);
      double sq = 0.0;
      for (std::size_t b = 0; b < n; ++b) {
        const T* p = x + (b * c + ch) * area;
        for (std::size_t i = 0; i < area; ++i) sq += (p[i] - mu) * (p[i] - mu);
      }
      const double var = sq / static_cast<double>(count);
      mean[ch] = static_cast<T>(mu);
      invstd[ch] = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(state.eps)));
      const double unbiased = count > 1 ? sq / static_cast<double>(count - 1) : var;
      rm[ch] = static_cast<T>((1.0 - state.momentum) * rm[ch] + state.momentum * mu);
      rv[ch] = static_cast<T>((1.0 - state.momentum) * rv[ch] + state.momentum * unbiased);
    }
  } else {
    const auto& rm = state.running_mean.value();
    const auto& rv = state.running_var.value();
    for (std::size_t ch = 0; ch < c; ++ch) {
      mean[ch] = rm[ch];
      invstd[ch] = T{1} / std::sqrt(rv[ch] + state.eps);
    }
  }

  Tensor<T> xhat(xs);
  Tensor<T> out(xs);
  const T* gp = gamma.value().ptr();
  const T* bp = beta.value().ptr();
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t off = (b * c + ch) * area;
      for (std::size_t i = 0; i < area; ++i) {
        const T h = (x[off + i] - mean[ch]) * invstd[ch];
        xhat[off + i] = h;
        out[off + i] = gp[ch] * h + bp[ch];
      }
    }
  }

  return tape.record(
      "batch_norm", std::move(out), {input, gamma, beta},
      [input, gamma, beta, xhat = std::move(xhat), invstd, n, c, area, count, training](const Tensor<T>& gout) {
        std::vector<double> sum_dy(c, 0.0), sum_dy_xhat(c, 0.0);
        for (std::size_t b = 0; b < n; ++b) {
          for (std::size_t ch = 0; ch < c; ++ch) {
            const std::size_t off = (b * c + ch) * area;
            for (std::size_t i = 0; i < area; ++i) {
              sum_dy[ch] += gout[off + i];
              sum_dy_xhat[ch] += gout[off + i] * xhat[off + i];
            }
          }
        }
        if (gamma.requires_grad()) {
          Tensor<T> gg(gamma.shape());
          for (std::size_t ch = 0; ch < c; ++ch) gg[ch] = static_cast<T>(sum_dy_xhat[ch]);
          gamma.node()->accumulate(gg);
        }
        if (beta.requires_grad()) {
          Tensor<T> gb(beta.shape());
          for (std::size_t ch = 0; ch < c; ++ch) gb[ch] = static_cast<T>(sum_dy[ch]);
          beta.node()->accumulate(gb);
        }
        if (!input.requires_grad()) return;
        Tensor<T> gx(input.shape());
        const T* gp = gamma.value().ptr();
        const double m = static_cast<double>(count);
        for (std::size_t b = 0; b < n; ++b) {
          for (std::size_t ch = 0; ch < c; ++ch) {
            const std::size_t off = (b * c + ch) * area;
            const T scale = gp[ch] * invstd[ch];
            for (std::size_t i = 0; i < area; ++i) {
              if (training) {
                const double centered =
                    gout[off + i] - sum_dy[ch] / m - xhat[off + i] * sum_dy_xhat[ch] / m;
                gx[off + i] = static_cast<T>(scale * centered);
              } else {
                gx[off + i] = scale * gout[off + i];
              }
            }
          }
        }
        input.node()->accumulate(gx);
      });
}

/// y = x * weight^T + bias with weight laid out [out, in].
template <class T>
Var<T> linear(Tape<T>& tape, const Var<T>& input, const Var<T>& weight, const Var<T>& bias) {
  const auto& xs = input.shape();
  const auto& ws = weight.shape();
  if (xs.size() != 2 || ws.size() != 2 || xs[1] != ws[1] || bias.value().size() != ws[0]) {
    throw Error("linear: incompatible input " + shape_str(xs) + ", weight " + shape_str(ws) + ", bias " +
                shape_str(bias.shape()));
  }
  const std::size_t n = xs[0], in = xs[1], outf = ws[0];
  Tensor<T> out({n, outf});
  const T* x = input.value().ptr();
  const T* w = weight.value().ptr();
  const T* b = bias.value().ptr();
  // Plain loops keep each row independent of batch size.
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t o = 0; o < outf; ++o) {
      T acc = b[o];
      for (std::size_t i = 0; i < in; ++i) acc += x[r * in + i] * w[o * in + i];
      out[r * outf + o] = acc;
    }
  }
  return tape.record("linear", std::move(out), {input, weight, bias},
                     [input, weight, bias, n, in, outf](const Tensor<T>& gout) {
                       const T* x = input.value().ptr();
                       const T* w = weight.value().ptr();
                       if (input.requires_grad()) {
                         Tensor<T> gx(input.shape());
                         for (std::size_t r = 0; r < n; ++r)
                           for (std::size_t o = 0; o < outf; ++o)
                             for (std::size_t i = 0; i < in; ++i) gx[r * in + i] += gout[r * outf + o] * w[o * in + i];
                         input.node()->accumulate(gx);
                       }
                       if (weight.requires_grad()) {
                         Tensor<T> gw(weight.shape());
                         for (std::size_t r = 0; r < n; ++r)
                           for (std::size_t o = 0; o < outf; ++o)
                             for (std::size_t i = 0; i < in; ++i) gw[o * in + i] += gout[r * outf + o] * x[r * in + i];
                         weight.node()->accumulate(gw);
                       }
                       if (bias.requires_grad()) {
                         Tensor<T> gb(bias.shape());
                         for (std::size_t r = 0; r < n; ++r)
                           for (std::size_t o = 0; o < outf; ++o) gb[o] += gout[r * outf + o];
                         bias.node()->accumulate(gb);
                       }
                     });
}

/// Max pooling; padded positions never win. Ties route to the lowest flat index.
template <class T>
Var<T> max_pool2d(Tape<T>& tape, const Var<T>& input, std::size_t window, std::size_t stride, std::size_t pad = 0) {
  const auto& xs = input.shape();
  if (xs.size() != 4) throw Error("max_pool2d: expected NCHW input, got " + shape_str(xs));
  if (window == 0 || stride == 0) throw Error("max_pool2d: window and stride must be positive");
  if (xs[2] + 2 * pad < window || xs[3] + 2 * pad < window || pad >= window) {
    throw Error("max_pool2d: window " + std::to_string(window) + " does not fit padded input " + shape_str(xs));
  }
  const std::size_t n = xs[0], c = xs[1], h = xs[2], w = xs[3];
  const std::size_t oh = detail::pooled_extent(h, window, stride, pad);
  const std::size_t ow = detail::pooled_extent(w, window, stride, pad);
  Tensor<T> out({n, c, oh, ow});
  std::vector<std::size_t> argmax(out.size());
  const T* x = input.value().ptr();
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        T best = -std::numeric_limits<T>::infinity();
        std::size_t best_idx = 0;
        bool found = false;
        for (std::size_t ky = 0; ky < window; ++ky) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
          for (std::size_t kx = 0; kx < window; ++kx) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(pad);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
            const std::size_t idx = (plane * h + static_cast<std::size_t>(iy)) * w + static_cast<std::size_t>(ix);
            if (!found || x[idx] > best) {
              best = x[idx];
              best_idx = idx;
              found = true;
            }
          }
        }
        const std::size_t o = (plane * oh + oy) * ow + ox;
        out[o] = best;
        argmax[o] = best_idx;
      }
    }
  }
  return tape.record("max_pool2d", std::move(out), {input}, [input, argmax = std::move(argmax)](const Tensor<T>& gout) {
    Tensor<T> gx(input.shape());
    for (std::size_t o = 0; o < argmax.size(); ++o) gx[argmax[o]] += gout[o];
    input.node()->accumulate(gx);
  });
}

/// Average pooling without padding.
template <class T>
Var<T> avg_pool2d(Tape<T>& tape, const Var<T>& input, std::size_t window, std::size_t stride) {
  const auto& xs = input.shape();
  if (xs.size() != 4) throw Error("avg_pool2d: expected NCHW input, got " + shape_str(xs));
  if (window == 0 || stride == 0) throw Error("avg_pool2d: window and stride must be positive");
  if (xs[2] < window || xs[3] < window) {
    throw Error("avg_pool2d: window " + std::to_string(window) + " larger than input " + shape_str(xs));
  }
  const std::size_t n = xs[0], c = xs[1], h = xs[2], w = xs[3];
  const std::size_t oh = detail::pooled_extent(h, window, stride, 0);
  const std::size_t ow = detail::pooled_extent(w, window, stride, 0);
  const T inv = T{1} / static_cast<T>(window * window);
  Tensor<T> out({n, c, oh, ow});
  const T* x = input.value().ptr();
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        T acc{0};
        for (std::size_t ky = 0; ky < window; ++ky)
          for (std::size_t kx = 0; kx < window; ++kx) acc += x[(plane * h + oy * stride + ky) * w + ox * stride + kx];
        out[(plane * oh + oy) * ow + ox] = acc * inv;
      }
    }
  }
  return tape.record("avg_pool2d", std::move(out), {input},
                     [input, n, c, h, w, oh, ow, window, stride, inv](const Tensor<T>& gout) {
                       Tensor<T> gx(input.shape());
                       for (std::size_t plane = 0; plane < n * c; ++plane)
                         for (std::size_t oy = 0; oy < oh; ++oy)
                           for (std::size_t ox = 0; ox < ow; ++ox) {
                             const T g = gout[(plane * oh + oy) * ow + ox] * inv;
                             for (std::size_t ky = 0; ky < window; ++ky)
                               for (std::size_t kx = 0; kx < window; ++kx)
                                 gx[(plane * h + oy * stride + ky) * w + ox * stride + kx] += g;
                           }
                       input.node()->accumulate(gx);
                     });
}

/// Mean negative log-likelihood of softmax(logits) over the batch. Output shape [1].
template <class T>
Var<T> softmax_cross_entropy(Tape<T>& tape, const Var<T>& logits, std::span<const std::int32_t> labels) {
  const auto& ls = logits.shape();
  if (ls.size() != 2 || ls[0] != labels.size()) {
    throw Error("softmax_cross_entropy: logits " + shape_str(ls) + " vs " + std::to_string(labels.size()) +
                " labels");
  }
  const std::size_t n = ls[0], k = ls[1];
  Tensor<T> probs(ls);
  double loss = 0.0;
  const T* z = logits.value().ptr();
  for (std::size_t r = 0; r < n; ++r) {
    const auto label = labels[r];
    if (label < 0 || static_cast<std::size_t>(label) >= k) {
      throw Error("softmax_cross_entropy: label " + std::to_string(label) + " outside [0, " + std::to_string(k) + ")");
    }
    const T* row = z + r * k;
    const T mx = *std::max_element(row, row + k);
    double denom = 0.0;
    for (std::size_t j = 0; j < k; ++j) denom += std::exp(static_cast<double>(row[j] - mx));
    for (std::size_t j = 0; j < k; ++j) probs[r * k + j] = static_cast<T>(std::exp(static_cast<double>(row[j] - mx)) / denom);
    loss += std::log(denom) - static_cast<double>(row[label] - mx);
  }
  std::vector<std::int32_t> kept(labels.begin(), labels.end());
  Tensor<T> out({1}, static_cast<T>(loss / static_cast<double>(n)));
  return tape.record("softmax_cross_entropy", std::move(out), {logits},
                     [logits, probs = std::move(probs), kept = std::move(kept), n, k](const Tensor<T>& gout) {
                       Tensor<T> gz = probs;
                       const T scale = gout[0] / static_cast<T>(n);
                       for (std::size_t r = 0; r < n; ++r) gz[r * k + static_cast<std::size_t>(kept[r])] -= T{1};
                       for (std::size_t i = 0; i < gz.size(); ++i) gz[i] *= scale;
                       logits.node()->accumulate(gz);
                     });
}

/// Elementwise sum. `b` may also be a single element, broadcast over `a`.
template <class T>
Var<T> add(Tape<T>& tape, const Var<T>& a, const Var<T>& b) {
  const bool scalar_b = b.value().size() == 1 && a.value().size() != 1;
  if (!scalar_b) require_same_shape(a.shape(), b.shape(), "add");
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += scalar_b ? b.value()[0] : b.value()[i];
  return tape.record("add", std::move(out), {a, b}, [a, b, scalar_b](const Tensor<T>& gout) {
    detail::accumulate(a, gout);
    if (!b.requires_grad()) return;
    if (scalar_b) {
      T s{0};
      for (std::size_t i = 0; i < gout.size(); ++i) s += gout[i];
      b.node()->accumulate(Tensor<T>(b.shape(), s));
    } else {
      b.node()->accumulate(gout);
    }
  });
}

/// Clamp to [lo, hi]; gradient flows only where lo < x < hi.
template <class T>
Var<T> clamp(Tape<T>& tape, const Var<T>& x, T lo, T hi) {
  Tensor<T> out = x.value();
  for (auto& v : out.data()) v = std::clamp(v, lo, hi);
  return tape.record("clamp", std::move(out), {x}, [x, lo, hi](const Tensor<T>& gout) {
    Tensor<T> gx(x.shape());
    const auto& in = x.value();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] = (in[i] > lo && in[i] < hi) ? gout[i] : T{0};
    x.node()->accumulate(gx);
  });
}

template <class T>
Var<T> scale(Tape<T>& tape, const Var<T>& x, T factor) {
  Tensor<T> out = x.value();
  for (auto& v : out.data()) v *= factor;
  return tape.record("scale", std::move(out), {x}, [x, factor](const Tensor<T>& gout) {
    Tensor<T> gx = gout;
    for (auto& v : gx.data()) v *= factor;
    x.node()->accumulate(gx);
  });
}

template <class T>
Var<T> add_scalar(Tape<T>& tape, const Var<T>& x, T offset) {
  Tensor<T> out = x.value();
  for (auto& v : out.data()) v += offset;
  return tape.record("add_scalar", std::move(out), {x}, [x](const Tensor<T>& gout) { x.node()->accumulate(gout); });
}

/// Collapses trailing dimensions: [N, ...] -> [N, prod(...)].
template <class T>
Var<T> flatten(Tape<T>& tape, const Var<T>& x) {
  const auto& xs = x.shape();
  const std::size_t n = xs.at(0);
  Tensor<T> out = x.value().reshaped({n, x.value().size() / n});
  return tape.record("flatten", std::move(out), {x},
                     [x](const Tensor<T>& gout) { x.node()->accumulate(gout.reshaped(x.shape())); });
}

}  // namespace ctmq::ops

#endif  // CTMQ_OPS_HPP
