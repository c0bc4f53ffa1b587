#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "dsnet/common.hpp"
#include "dsnet/parallel.hpp"
#include "dsnet/tensor.hpp"

namespace dsnet {

// All primitives return fresh tensors and register their reverse rules on the
// differentiation graph. Backward accumulation is ownership-partitioned: every
// gradient element is written by exactly one thread in a fixed order, so
// results are bitwise identical for any thread count.

namespace detail {

inline std::int64_t conv_out_extent(std::int64_t in, std::int64_t k, std::int64_t stride,
                                    std::int64_t pad, const char* what) {
  const std::int64_t out = (in + 2 * pad - k) / stride + 1;
  if (in + 2 * pad < k || out < 1) {
    throw ShapeError(std::string(what) + ": input extent " + std::to_string(in) +
                     " with kernel " + std::to_string(k) + ", stride " +
                     std::to_string(stride) + ", pad " + std::to_string(pad) +
                     " yields empty output");
  }
  return out;
}

}  // namespace detail

// Cross-correlation with square odd kernels, no bias.
// x: (n, c_in, h, w); w: (c_out, c_in, k, k). Output extent floors.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, std::int64_t stride,
                 std::int64_t pad) {
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  if (ws.h != ws.w) {
    throw ShapeError("conv2d: kernel must be square, got " + ws.str());
  }
  const std::int64_t k = ws.h;
  if (k != 1 && k != 3 && k != 7) {
    throw ShapeError("conv2d: kernel size must be 1, 3, or 7, got " + std::to_string(k));
  }
  if (ws.c != xs.c) {
    throw ShapeError("conv2d: weight expects " + std::to_string(ws.c) +
                     " input channels, tensor has " + std::to_string(xs.c));
  }
  if (stride < 1 || pad < 0) {
    throw ShapeError("conv2d: stride must be >= 1 and pad >= 0");
  }
  const std::int64_t ho = detail::conv_out_extent(xs.h, k, stride, pad, "conv2d");
  const std::int64_t wo = detail::conv_out_extent(xs.w, k, stride, pad, "conv2d");

  Tensor<T> y(Shape{xs.n, ws.n, ho, wo});
  const T* xp = x.data();
  const T* wp = w.data();
  T* yp = y.data();
  const std::int64_t cin = xs.c, hin = xs.h, win = xs.w, cout = ws.n;
  const std::int64_t planes = xs.n * cout;

  DSNET_PARALLEL_FOR
  for (std::int64_t plane = 0; plane < planes; ++plane) {
    const std::int64_t n = plane / cout;
    const std::int64_t co = plane % cout;
    T* yplane = yp + plane * ho * wo;
    for (std::int64_t ci = 0; ci < cin; ++ci) {
      const T* xch = xp + (n * cin + ci) * hin * win;
      const T* wch = wp + (co * cin + ci) * k * k;
      for (std::int64_t kh = 0; kh < k; ++kh) {
        for (std::int64_t kw = 0; kw < k; ++kw) {
          const T wv = wch[kh * k + kw];
          if (wv == T(0)) continue;
          for (std::int64_t oh = 0; oh < ho; ++oh) {
            const std::int64_t ih = oh * stride - pad + kh;
            if (ih < 0 || ih >= hin) continue;
            const T* xrow = xch + ih * win;
            T* yrow = yplane + oh * wo;
            for (std::int64_t ow = 0; ow < wo; ++ow) {
              const std::int64_t iw = ow * stride - pad + kw;
              if (iw >= 0 && iw < win) yrow[ow] += wv * xrow[iw];
            }
          }
        }
      }
    }
  }

  auto xn = x.node();
  auto wn = w.node();
  auto xdata = x.storage();
  auto wdata = w.storage();
  detail::record<T>(y, {&x, &w}, [=](const std::vector<T>& gy) {
    if (xn) {
      auto& gx = xn->grad_buf();
      DSNET_PARALLEL_FOR
      for (std::int64_t n = 0; n < xs.n; ++n) {
        for (std::int64_t co = 0; co < cout; ++co) {
          const T* gyplane = gy.data() + (n * cout + co) * ho * wo;
          for (std::int64_t ci = 0; ci < cin; ++ci) {
            T* gxch = gx.data() + (n * cin + ci) * hin * win;
            const T* wch = wdata->data() + (co * cin + ci) * k * k;
            for (std::int64_t kh = 0; kh < k; ++kh) {
              for (std::int64_t kw = 0; kw < k; ++kw) {
                const T wv = wch[kh * k + kw];
                if (wv == T(0)) continue;
                for (std::int64_t oh = 0; oh < ho; ++oh) {
                  const std::int64_t ih = oh * stride - pad + kh;
                  if (ih < 0 || ih >= hin) continue;
                  T* gxrow = gxch + ih * win;
                  const T* gyrow = gyplane + oh * wo;
                  for (std::int64_t ow = 0; ow < wo; ++ow) {
                    const std::int64_t iw = ow * stride - pad + kw;
                    if (iw >= 0 && iw < win) gxrow[iw] += wv * gyrow[ow];
                  }
                }
              }
            }
          }
        }
      }
    }
    if (wn) {
      auto& gw = wn->grad_buf();
      DSNET_PARALLEL_FOR
      for (std::int64_t co = 0; co < cout; ++co) {
        for (std::int64_t n = 0; n < xs.n; ++n) {
          const T* gyplane = gy.data() + (n * cout + co) * ho * wo;
          for (std::int64_t ci = 0; ci < cin; ++ci) {
            const T* xch = xdata->data() + (n * cin + ci) * hin * win;
            T* gwch = gw.data() + (co * cin + ci) * k * k;
            for (std::int64_t kh = 0; kh < k; ++kh) {
              for (std::int64_t kw = 0; kw < k; ++kw) {
                T acc = T(0);
                for (std::int64_t oh = 0; oh < ho; ++oh) {
                  const std::int64_t ih = oh * stride - pad + kh;
                  if (ih < 0 || ih >= hin) continue;
                  const T* xrow = xch + ih * win;
                  const T* gyrow = gyplane + oh * wo;
                  for (std::int64_t ow = 0; ow < wo; ++ow) {
                    const std::int64_t iw = ow * stride - pad + kw;
                    if (iw >= 0 && iw < win) acc += gyrow[ow] * xrow[iw];
                  }
                }
                gwch[kh * k + kw] += acc;
              }
            }
          }
        }
      }
    }
  });
  return y;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  if (!(a.shape() == b.shape())) {
    throw ShapeError("add: shape mismatch " + a.shape().str() + " vs " + b.shape().str());
  }
  Tensor<T> y(a.shape());
  const std::int64_t m = y.numel();
  const T* ap = a.data();
  const T* bp = b.data();
  T* yp = y.data();
  DSNET_PARALLEL_FOR
  for (std::int64_t i = 0; i < m; ++i) yp[i] = ap[i] + bp[i];

  auto an = a.node();
  auto bn = b.node();
  detail::record<T>(y, {&a, &b}, [=](const std::vector<T>& gy) {
    if (an) detail::accumulate(an, gy);
    if (bn) detail::accumulate(bn, gy);
  });
  return y;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  Tensor<T> y(x.shape());
  const std::int64_t m = y.numel();
  const T* xp = x.data();
  T* yp = y.data();
  DSNET_PARALLEL_FOR
  for (std::int64_t i = 0; i < m; ++i) yp[i] = xp[i] > T(0) ? xp[i] : T(0);

  auto xn = x.node();
  auto xdata = x.storage();
  detail::record<T>(y, {&x}, [=](const std::vector<T>& gy) {
    if (!xn) return;
    auto& gx = xn->grad_buf();
    const T* xv = xdata->data();
    DSNET_PARALLEL_FOR
    for (std::int64_t i = 0; i < m; ++i) {
      if (xv[i] > T(0)) gx[i] += gy[i];
    }
  });
  return y;
}

// y[n,c,h,w] = x[n,c,h,w] * g[c]; g has shape (1, c, 1, 1).
template <typename T>
Tensor<T> channelwise_scale(const Tensor<T>& x, const Tensor<T>& g) {
  const Shape& xs = x.shape();
  if (g.shape().n != 1 || g.shape().c != xs.c || g.shape().h != 1 || g.shape().w != 1) {
    throw ShapeError("channelwise_scale: factor shape " + g.shape().str() +
                     " does not match " + std::to_string(xs.c) + " channels");
  }
  Tensor<T> y(xs);
  const std::int64_t hw = xs.h * xs.w;
  const std::int64_t nc = xs.n * xs.c;
  const T* xp = x.data();
  const T* gp = g.data();
  T* yp = y.data();
  DSNET_PARALLEL_FOR
  for (std::int64_t p = 0; p < nc; ++p) {
    const T gv = gp[p % xs.c];
    const T* xr = xp + p * hw;
    T* yr = yp + p * hw;
    for (std::int64_t i = 0; i < hw; ++i) yr[i] = xr[i] * gv;
  }

  auto xn = x.node();
  auto gn = g.node();
  auto xdata = x.storage();
  auto gdata = g.storage();
  detail::record<T>(y, {&x, &g}, [=](const std::vector<T>& gy) {
    if (xn) {
      auto& gx = xn->grad_buf();
      const T* gv = gdata->data();
      DSNET_PARALLEL_FOR
      for (std::int64_t p = 0; p < nc; ++p) {
        const T s = gv[p % xs.c];
        const T* gyr = gy.data() + p * hw;
        T* gxr = gx.data() + p * hw;
        for (std::int64_t i = 0; i < hw; ++i) gxr[i] += gyr[i] * s;
      }
    }
    if (gn) {
      auto& gg = gn->grad_buf();
      const T* xv = xdata->data();
      DSNET_PARALLEL_FOR
      for (std::int64_t c = 0; c < xs.c; ++c) {
        T acc = T(0);
        for (std::int64_t n = 0; n < xs.n; ++n) {
          const std::int64_t base = (n * xs.c + c) * hw;
          for (std::int64_t i = 0; i < hw; ++i) acc += gy[base + i] * xv[base + i];
        }
        gg[c] += acc;
      }
    }
  });
  return y;
}

// y[n,c,h,w] = x[n,c,h,w] + b[c]; b has shape (1, c, 1, 1).
template <typename T>
Tensor<T> channelwise_shift(const Tensor<T>& x, const Tensor<T>& b) {
  const Shape& xs = x.shape();
  if (b.shape().n != 1 || b.shape().c != xs.c || b.shape().h != 1 || b.shape().w != 1) {
    throw ShapeError("channelwise_shift: offset shape " + b.shape().str() +
                     " does not match " + std::to_string(xs.c) + " channels");
  }
  Tensor<T> y(xs);
  const std::int64_t hw = xs.h * xs.w;
  const std::int64_t nc = xs.n * xs.c;
  const T* xp = x.data();
  const T* bp = b.data();
  T* yp = y.data();
  DSNET_PARALLEL_FOR
  for (std::int64_t p = 0; p < nc; ++p) {
    const T bv = bp[p % xs.c];
    const T* xr = xp + p * hw;
    T* yr = yp + p * hw;
    for (std::int64_t i = 0; i < hw; ++i) yr[i] = xr[i] + bv;
  }

  auto xn = x.node();
  auto bn = b.node();
  detail::record<T>(y, {&x, &b}, [=](const std::vector<T>& gy) {
    if (xn) detail::accumulate(xn, gy);
    if (bn) {
      auto& gb = bn->grad_buf();
      DSNET_PARALLEL_FOR
      for (std::int64_t c = 0; c < xs.c; ++c) {
        T acc = T(0);
        for (std::int64_t n = 0; n < xs.n; ++n) {
          const std::int64_t base = (n * xs.c + c) * hw;
          for (std::int64_t i = 0; i < hw; ++i) acc += gy[base + i];
        }
        gb[c] += acc;
      }
    }
  });
  return y;
}

// Constant (non-learnable) uniform scaling.
template <typename T>
Tensor<T> scalar_mul(const Tensor<T>& x, T alpha) {
  Tensor<T> y(x.shape());
  const std::int64_t m = y.numel();
  const T* xp = x.data();
  T* yp = y.data();
  DSNET_PARALLEL_FOR
  for (std::int64_t i = 0; i < m; ++i) yp[i] = xp[i] * alpha;

  auto xn = x.node();
  detail::record<T>(y, {&x}, [=](const std::vector<T>& gy) {
    if (!xn) return;
    auto& gx = xn->grad_buf();
    DSNET_PARALLEL_FOR
    for (std::int64_t i = 0; i < m; ++i) gx[i] += gy[i] * alpha;
  });
  return y;
}

// Max pooling; ties resolve to the first candidate in scan order.
template <typename T>
Tensor<T> max_pool2d(const Tensor<T>& x, std::int64_t k, std::int64_t stride,
                     std::int64_t pad) {
  const Shape& xs = x.shape();
  if (k < 1 || stride < 1 || pad < 0) {
    throw ShapeError("max_pool2d: window must be >= 1, stride >= 1, pad >= 0");
  }
  const std::int64_t ho = detail::conv_out_extent(xs.h, k, stride, pad, "max_pool2d");
  const std::int64_t wo = detail::conv_out_extent(xs.w, k, stride, pad, "max_pool2d");

  Tensor<T> y(Shape{xs.n, xs.c, ho, wo});
  auto argmax = std::make_shared<std::vector<std::int64_t>>(
      static_cast<std::size_t>(y.numel()), -1);
  const T* xp = x.data();
  T* yp = y.data();
  std::int64_t* am = argmax->data();
  const std::int64_t planes = xs.n * xs.c;

  DSNET_PARALLEL_FOR
  for (std::int64_t p = 0; p < planes; ++p) {
    const T* xch = xp + p * xs.h * xs.w;
    T* ych = yp + p * ho * wo;
    std::int64_t* ach = am + p * ho * wo;
    for (std::int64_t oh = 0; oh < ho; ++oh) {
      for (std::int64_t ow = 0; ow < wo; ++ow) {
        T best = T(0);
        std::int64_t besti = -1;
        for (std::int64_t kh = 0; kh < k; ++kh) {
          const std::int64_t ih = oh * stride - pad + kh;
          if (ih < 0 || ih >= xs.h) continue;
          for (std::int64_t kw = 0; kw < k; ++kw) {
            const std::int64_t iw = ow * stride - pad + kw;
            if (iw < 0 || iw >= xs.w) continue;
            const std::int64_t idx = ih * xs.w + iw;
            if (besti < 0 || xch[idx] > best) {
              best = xch[idx];
              besti = idx;
            }
          }
        }
        ych[oh * wo + ow] = besti < 0 ? T(0) : best;
        ach[oh * wo + ow] = besti;
      }
    }
  }

  auto xn = x.node();
  detail::record<T>(y, {&x}, [=](const std::vector<T>& gy) {
    if (!xn) return;
    auto& gx = xn->grad_buf();
    DSNET_PARALLEL_FOR
    for (std::int64_t p = 0; p < planes; ++p) {
      const std::int64_t* ach = argmax->data() + p * ho * wo;
      const T* gyr = gy.data() + p * ho * wo;
      T* gxch = gx.data() + p * xs.h * xs.w;
      for (std::int64_t i = 0; i < ho * wo; ++i) {
        if (ach[i] >= 0) gxch[ach[i]] += gyr[i];
      }
    }
  });
  return y;
}

// (n, c, h, w) -> (n, c, 1, 1) spatial mean.
template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  const Shape& xs = x.shape();
  Tensor<T> y(Shape{xs.n, xs.c, 1, 1});
  const std::int64_t hw = xs.h * xs.w;
  const std::int64_t planes = xs.n * xs.c;
  const T* xp = x.data();
  T* yp = y.data();
  DSNET_PARALLEL_FOR
  for (std::int64_t p = 0; p < planes; ++p) {
    T acc = T(0);
    const T* xch = xp + p * hw;
    for (std::int64_t i = 0; i < hw; ++i) acc += xch[i];
    yp[p] = acc / static_cast<T>(hw);
  }

  auto xn = x.node();
  detail::record<T>(y, {&x}, [=](const std::vector<T>& gy) {
    if (!xn) return;
    auto& gx = xn->grad_buf();
    const T inv = T(1) / static_cast<T>(hw);
    DSNET_PARALLEL_FOR
    for (std::int64_t p = 0; p < planes; ++p) {
      const T gv = gy[p] * inv;
      T* gxch = gx.data() + p * hw;
      for (std::int64_t i = 0; i < hw; ++i) gxch[i] += gv;
    }
  });
  return y;
}

// Fully connected head. x: (n, in, 1, 1); w: (out, in, 1, 1); b: (1, out, 1, 1).
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  if (xs.h != 1 || xs.w != 1) {
    throw ShapeError("linear: expects pooled input (n, c, 1, 1), got " + xs.str());
  }
  if (ws.c != xs.c || ws.h != 1 || ws.w != 1) {
    throw ShapeError("linear: weight shape " + ws.str() + " does not accept " +
                     std::to_string(xs.c) + " features");
  }
  if (b.shape().n != 1 || b.shape().c != ws.n || b.shape().h != 1 || b.shape().w != 1) {
    throw ShapeError("linear: bias shape " + b.shape().str() + " does not match " +
                     std::to_string(ws.n) + " outputs");
  }
  const std::int64_t nin = xs.c, nout = ws.n, nb = xs.n;
  Tensor<T> y(Shape{nb, nout, 1, 1});
  const T* xp = x.data();
  const T* wp = w.data();
  const T* bp = b.data();
  T* yp = y.data();
  DSNET_PARALLEL_FOR
  for (std::int64_t n = 0; n < nb; ++n) {
    const T* xr = xp + n * nin;
    T* yr = yp + n * nout;
    for (std::int64_t o = 0; o < nout; ++o) {
      T acc = bp[o];
      const T* wr = wp + o * nin;
      for (std::int64_t i = 0; i < nin; ++i) acc += wr[i] * xr[i];
      yr[o] = acc;
    }
  }

  auto xn = x.node();
  auto wn = w.node();
  auto bn = b.node();
  auto xdata = x.storage();
  auto wdata = w.storage();
  detail::record<T>(y, {&x, &w, &b}, [=](const std::vector<T>& gy) {
    if (xn) {
      auto& gx = xn->grad_buf();
      const T* wv = wdata->data();
      DSNET_PARALLEL_FOR
      for (std::int64_t n = 0; n < nb; ++n) {
        const T* gyr = gy.data() + n * nout;
        T* gxr = gx.data() + n * nin;
        for (std::int64_t o = 0; o < nout; ++o) {
          const T gv = gyr[o];
          const T* wr = wv + o * nin;
          for (std::int64_t i = 0; i < nin; ++i) gxr[i] += gv * wr[i];
        }
      }
    }
    if (wn) {
      auto& gw = wn->grad_buf();
      const T* xv = xdata->data();
      DSNET_PARALLEL_FOR
      for (std::int64_t o = 0; o < nout; ++o) {
        T* gwr = gw.data() + o * nin;
        for (std::int64_t n = 0; n < nb; ++n) {
          const T gv = gy[n * nout + o];
          const T* xr = xv + n * nin;
          for (std::int64_t i = 0; i < nin; ++i) gwr[i] += gv * xr[i];
        }
      }
    }
    if (bn) {
      auto& gb = bn->grad_buf();
      DSNET_PARALLEL_FOR
      for (std::int64_t o = 0; o < nout; ++o) {
        T acc = T(0);
        for (std::int64_t n = 0; n < nb; ++n) acc += gy[n * nout + o];
        gb[o] += acc;
      }
    }
  });
  return y;
}

// Mean cross-entropy over the batch with max-subtracted softmax.
// logits: (n, classes, 1, 1); labels: one class id per sample.
template <typename T>
Tensor<T> softmax_cross_entropy(const Tensor<T>& logits,
                                const std::vector<std::int64_t>& labels) {
  const Shape& ls = logits.shape();
  if (ls.h != 1 || ls.w != 1) {
    throw ShapeError("softmax_cross_entropy: expects (n, classes, 1, 1), got " + ls.str());
  }
  if (static_cast<std::int64_t>(labels.size()) != ls.n) {
    throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                     " labels for batch of " + std::to_string(ls.n));
  }
  const std::int64_t nb = ls.n, nk = ls.c;
  for (std::int64_t n = 0; n < nb; ++n) {
    if (labels[n] < 0 || labels[n] >= nk) {
      throw DataError("softmax_cross_entropy: label " + std::to_string(labels[n]) +
                      " outside [0, " + std::to_string(nk) + ")");
    }
  }

  auto probs = std::make_shared<std::vector<T>>(static_cast<std::size_t>(nb * nk));
  const T* lp = logits.data();
  T* pp = probs->data();
  std::vector<T> losses(static_cast<std::size_t>(nb));
  DSNET_PARALLEL_FOR
  for (std::int64_t n = 0; n < nb; ++n) {
    const T* lr = lp + n * nk;
    T* pr = pp + n * nk;
    T mx = lr[0];
    for (std::int64_t j = 1; j < nk; ++j) mx = std::max(mx, lr[j]);
    T denom = T(0);
    for (std::int64_t j = 0; j < nk; ++j) {
      pr[j] = std::exp(lr[j] - mx);
      denom += pr[j];
    }
    for (std::int64_t j = 0; j < nk; ++j) pr[j] /= denom;
    losses[static_cast<std::size_t>(n)] = -std::log(pr[labels[n]]);
  }
  T total = T(0);
  for (std::int64_t n = 0; n < nb; ++n) total += losses[static_cast<std::size_t>(n)];

  Tensor<T> y = Tensor<T>::from(Shape{1, 1, 1, 1}, {total / static_cast<T>(nb)});
  auto ln = logits.node();
  auto labels_copy = std::make_shared<std::vector<std::int64_t>>(labels);
  detail::record<T>(y, {&logits}, [=](const std::vector<T>& gy) {
    if (!ln) return;
    auto& gl = ln->grad_buf();
    const T scale = gy[0] / static_cast<T>(nb);
    const T* pv = probs->data();
    DSNET_PARALLEL_FOR
    for (std::int64_t n = 0; n < nb; ++n) {
      const T* pr = pv + n * nk;
      T* gr = gl.data() + n * nk;
      const std::int64_t lab = (*labels_copy)[static_cast<std::size_t>(n)];
      for (std::int64_t j = 0; j < nk; ++j) {
        gr[j] += scale * (pr[j] - (j == lab ? T(1) : T(0)));
      }
    }
  });
  return y;
}

// Scalar sum of all elements.
template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  const std::int64_t m = x.numel();
  const T* xp = x.data();
  T acc = T(0);
  for (std::int64_t i = 0; i < m; ++i) acc += xp[i];
  Tensor<T> y = Tensor<T>::from(Shape{1, 1, 1, 1}, {acc});

  auto xn = x.node();
  detail::record<T>(y, {&x}, [=](const std::vector<T>& gy) {
    if (!xn) return;
    auto& gx = xn->grad_buf();
    const T gv = gy[0];
    DSNET_PARALLEL_FOR
    for (std::int64_t i = 0; i < m; ++i) gx[i] += gv;
  });
  return y;
}

}  // namespace dsnet
