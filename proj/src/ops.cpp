#include "fmpi/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>

namespace fmpi {

namespace {

std::atomic<std::uint64_t> g_conv_macs{0};

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    fail(ErrorCode::kDimension, std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                    " vs " + shape_str(b.shape()));
  }
}

template <typename T>
void require_rank(const Tensor<T>& x, Index rank, const char* op) {
  if (x.rank() != rank) {
    fail(ErrorCode::kDimension, std::string(op) + ": expected rank " + std::to_string(rank) +
                                    ", got shape " + shape_str(x.shape()));
  }
}

Index normalize_axis(Index axis, Index rank, const char* op) {
  const Index a = axis < 0 ? axis + rank : axis;
  if (a < 0 || a >= rank) {
    fail(ErrorCode::kDimension, std::string(op) + ": axis " + std::to_string(axis) + " out of range");
  }
  return a;
}

// Product of extents before / after an axis.
std::pair<Index, Index> outer_inner(const Shape& shape, Index axis) {
  Index outer = 1;
  Index inner = 1;
  for (Index i = 0; i < axis; ++i) outer *= shape[i];
  for (Index i = axis + 1; i < static_cast<Index>(shape.size()); ++i) inner *= shape[i];
  return {outer, inner};
}

template <typename T, typename F, typename DF>
Tensor<T> unary(const Tensor<T>& x, F f, DF df) {
  auto in = x.data();
  std::vector<T> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = f(in[i]);
  return make_result<T>(x.shape(), std::move(out), {x}, [x, df](std::span<const T> g) {
    auto gx = grad_sink(x);
    if (gx.empty()) return;
    auto xv = x.data();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * df(xv[i]);
  });
}

}  // namespace

// ---------------------------------------------------------------------------
// Elementwise

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "add");
  auto av = a.data();
  auto bv = b.data();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return make_result<T>(a.shape(), std::move(out), {a, b}, [a, b](std::span<const T> g) {
    for (const Tensor<T>* t : {&a, &b}) {
      auto gt = grad_sink(*t);
      for (std::size_t i = 0; i < gt.size(); ++i) gt[i] += g[i];
    }
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "sub");
  auto av = a.data();
  auto bv = b.data();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  return make_result<T>(a.shape(), std::move(out), {a, b}, [a, b](std::span<const T> g) {
    auto ga = grad_sink(a);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i];
    auto gb = grad_sink(b);
    for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= g[i];
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "mul");
  auto av = a.data();
  auto bv = b.data();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return make_result<T>(a.shape(), std::move(out), {a, b}, [a, b](std::span<const T> g) {
    auto av = a.data();
    auto bv = b.data();
    auto ga = grad_sink(a);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * bv[i];
    auto gb = grad_sink(b);
    for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[i] * av[i];
  });
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "div");
  auto av = a.data();
  auto bv = b.data();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] / bv[i];
  return make_result<T>(a.shape(), std::move(out), {a, b}, [a, b](std::span<const T> g) {
    auto av = a.data();
    auto bv = b.data();
    auto ga = grad_sink(a);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] / bv[i];
    auto gb = grad_sink(b);
    for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= g[i] * av[i] / (bv[i] * bv[i]);
  });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T c) {
  return unary(x, [c](T v) { return v + c; }, [](T) { return T(1); });
}

template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& x, T c) {
  return unary(x, [c](T v) { return v * c; }, [c](T) { return c; });
}

template <typename T>
Tensor<T> neg(const Tensor<T>& x) {
  return unary(x, [](T v) { return -v; }, [](T) { return T(-1); });
}

template <typename T>
Tensor<T> abs(const Tensor<T>& x) {
  return unary(
      x, [](T v) { return std::abs(v); },
      [](T v) { return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)); });
}

template <typename T>
Tensor<T> square(const Tensor<T>& x) {
  return unary(x, [](T v) { return v * v; }, [](T v) { return T(2) * v; });
}

template <typename T>
Tensor<T> exp(const Tensor<T>& x) {
  return unary(x, [](T v) { return std::exp(v); }, [](T v) { return std::exp(v); });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  return unary(
      x, [](T v) { return v > T(0) ? v : T(0); }, [](T v) { return v > T(0) ? T(1) : T(0); });
}

namespace {
template <typename T>
T logistic(T v) {
  return v >= T(0) ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v));
}
}  // namespace

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return unary(x, [](T v) { return logistic(v); },
               [](T v) {
                 const T s = logistic(v);
                 return s * (T(1) - s);
               });
}

// ---------------------------------------------------------------------------
// Reductions

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  auto xv = x.data();
  const T total = std::accumulate(xv.begin(), xv.end(), T(0));
  return make_result<T>(Shape{}, {total}, {x}, [x](std::span<const T> g) {
    auto gx = grad_sink(x);
    for (auto& v : gx) v += g[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  auto xv = x.data();
  const T n = static_cast<T>(xv.size());
  const T total = std::accumulate(xv.begin(), xv.end(), T(0));
  return make_result<T>(Shape{}, {total / n}, {x}, [x, n](std::span<const T> g) {
    auto gx = grad_sink(x);
    const T share = g[0] / n;
    for (auto& v : gx) v += share;
  });
}

// ---------------------------------------------------------------------------
// Shape manipulation

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    fail(ErrorCode::kDimension,
         "reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  auto xv = x.data();
  return make_result<T>(std::move(shape), std::vector<T>(xv.begin(), xv.end()), {x},
                        [x](std::span<const T> g) {
                          auto gx = grad_sink(x);
                          for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i];
                        });
}

template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<Index>& axes) {
  const Shape& in_shape = x.shape();
  const Index r = x.rank();
  if (static_cast<Index>(axes.size()) != r) fail(ErrorCode::kDimension, "permute: axis count mismatch");
  std::vector<bool> seen(static_cast<std::size_t>(r), false);
  for (Index a : axes) {
    if (a < 0 || a >= r || seen[a]) fail(ErrorCode::kDimension, "permute: invalid axis list");
    seen[a] = true;
  }
  std::vector<Index> in_strides(static_cast<std::size_t>(r), 1);
  for (Index i = r - 2; i >= 0; --i) in_strides[i] = in_strides[i + 1] * in_shape[i + 1];
  Shape out_shape(static_cast<std::size_t>(r));
  std::vector<Index> src_stride(static_cast<std::size_t>(r));
  for (Index i = 0; i < r; ++i) {
    out_shape[i] = in_shape[axes[i]];
    src_stride[i] = in_strides[axes[i]];
  }
  // Output flat index -> input flat index.
  const Index n = x.numel();
  std::vector<Index> source(static_cast<std::size_t>(n));
  std::vector<Index> counter(static_cast<std::size_t>(r), 0);
  Index offset = 0;
  for (Index flat = 0; flat < n; ++flat) {
    source[flat] = offset;
    for (Index i = r - 1; i >= 0; --i) {
      ++counter[i];
      offset += src_stride[i];
      if (counter[i] < out_shape[i]) break;
      offset -= src_stride[i] * out_shape[i];
      counter[i] = 0;
    }
  }
  auto xv = x.data();
  std::vector<T> out(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) out[i] = xv[source[i]];
  return make_result<T>(std::move(out_shape), std::move(out), {x},
                        [x, source = std::move(source)](std::span<const T> g) {
                          auto gx = grad_sink(x);
                          if (gx.empty()) return;
                          for (std::size_t i = 0; i < g.size(); ++i) gx[source[i]] += g[i];
                        });
}

template <typename T>
Tensor<T> concat(std::span<const Tensor<T>> parts, Index axis) {
  if (parts.empty()) fail(ErrorCode::kDimension, "concat: no inputs");
  const Shape& first = parts.front().shape();
  const Index r = static_cast<Index>(first.size());
  const Index a = normalize_axis(axis, r, "concat");
  Shape out_shape = first;
  out_shape[a] = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (static_cast<Index>(s.size()) != r) fail(ErrorCode::kDimension, "concat: rank mismatch");
    for (Index i = 0; i < r; ++i) {
      if (i != a && s[i] != first[i]) {
        fail(ErrorCode::kDimension, "concat: incompatible shapes " + shape_str(first) + " and " +
                                        shape_str(s));
      }
    }
    out_shape[a] += s[a];
  }
  auto [outer, inner] = outer_inner(out_shape, a);
  const Index out_row = out_shape[a] * inner;
  std::vector<T> out(static_cast<std::size_t>(shape_numel(out_shape)));
  std::vector<Index> offsets;
  Index offset = 0;
  for (const auto& p : parts) {
    offsets.push_back(offset);
    const Index row = p.shape()[a] * inner;
    auto pv = p.data();
    for (Index o = 0; o < outer; ++o) {
      std::copy_n(pv.begin() + o * row, row, out.begin() + o * out_row + offset);
    }
    offset += row;
  }
  std::vector<Tensor<T>> inputs(parts.begin(), parts.end());
  return make_result<T>(std::move(out_shape), std::move(out), parts,
                        [inputs, offsets, outer, inner, out_row, a](std::span<const T> g) {
                          for (std::size_t k = 0; k < inputs.size(); ++k) {
                            auto gp = grad_sink(inputs[k]);
                            if (gp.empty()) continue;
                            const Index row = inputs[k].shape()[a] * inner;
                            for (Index o = 0; o < outer; ++o) {
                              const T* src = g.data() + o * out_row + offsets[k];
                              T* dst = gp.data() + o * row;
                              for (Index i = 0; i < row; ++i) dst[i] += src[i];
                            }
                          }
                        });
}

template <typename T>
Tensor<T> slice(const Tensor<T>& x, Index axis, Index start, Index length) {
  const Index a = normalize_axis(axis, x.rank(), "slice");
  const Shape& in_shape = x.shape();
  if (start < 0 || length < 0 || start + length > in_shape[a]) {
    fail(ErrorCode::kDimension, "slice: range [" + std::to_string(start) + ", " +
                                    std::to_string(start + length) + ") outside " +
                                    shape_str(in_shape));
  }
  Shape out_shape = in_shape;
  out_shape[a] = length;
  auto [outer, inner] = outer_inner(in_shape, a);
  const Index in_row = in_shape[a] * inner;
  const Index row = length * inner;
  const Index offset = start * inner;
  auto xv = x.data();
  std::vector<T> out(static_cast<std::size_t>(outer * row));
  for (Index o = 0; o < outer; ++o) {
    std::copy_n(xv.begin() + o * in_row + offset, row, out.begin() + o * row);
  }
  return make_result<T>(std::move(out_shape), std::move(out), {x},
                        [x, outer, in_row, row, offset](std::span<const T> g) {
                          auto gx = grad_sink(x);
                          if (gx.empty()) return;
                          for (Index o = 0; o < outer; ++o) {
                            for (Index i = 0; i < row; ++i) gx[o * in_row + offset + i] += g[o * row + i];
                          }
                        });
}

// ---------------------------------------------------------------------------
// Convolution

std::uint64_t conv_mac_count() { return g_conv_macs.load(); }
void reset_conv_mac_count() { g_conv_macs.store(0); }

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias, int stride,
                 int padding) {
  require_rank(input, 3, "conv2d input");
  require_rank(weight, 4, "conv2d weight");
  require_rank(bias, 1, "conv2d bias");
  const Index cin = input.dim(0);
  const Index h = input.dim(1);
  const Index w = input.dim(2);
  const Index cout = weight.dim(0);
  const Index k = weight.dim(2);
  if (weight.dim(1) != cin) {
    fail(ErrorCode::kDimension, "conv2d: input has " + std::to_string(cin) +
                                    " channels but weight expects " + std::to_string(weight.dim(1)));
  }
  if (weight.dim(3) != k) fail(ErrorCode::kDimension, "conv2d: kernel must be square");
  if (bias.dim(0) != cout) fail(ErrorCode::kDimension, "conv2d: bias length mismatch");
  if (stride < 1 || padding < 0) fail(ErrorCode::kInvalidArgument, "conv2d: bad stride/padding");
  const Index hout = (h + 2 * padding - k) / stride + 1;
  const Index wout = (w + 2 * padding - k) / stride + 1;
  if (hout <= 0 || wout <= 0) fail(ErrorCode::kDimension, "conv2d: input smaller than kernel");

  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using ConstMap = Eigen::Map<const Mat>;
  using MutMap = Eigen::Map<Mat>;

  const Index rows = cin * k * k;
  const Index cols_n = hout * wout;
  auto in = input.data();

  // im2col of output rows [oy0, oy1): row (ci, ky, kx), column (oy, ox).
  auto im2col = [&](T* dst, Index oy0, Index oy1) {
    for (Index ci = 0; ci < cin; ++ci) {
      const T* plane = in.data() + ci * h * w;
      for (Index ky = 0; ky < k; ++ky) {
        for (Index kx = 0; kx < k; ++kx) {
          for (Index oy = oy0; oy < oy1; ++oy) {
            const Index iy = oy * stride - padding + ky;
            if (iy < 0 || iy >= h) {
              std::fill_n(dst, wout, T(0));
              dst += wout;
              continue;
            }
            const T* src_row = plane + iy * w;
            for (Index ox = 0; ox < wout; ++ox) {
              const Index ix = ox * stride - padding + kx;
              *dst++ = (ix >= 0 && ix < w) ? src_row[ix] : T(0);
            }
          }
        }
      }
    }
  };

  const bool recording = is_recording(input, weight, bias);
  std::vector<T> out(static_cast<std::size_t>(cout * cols_n));
  MutMap omat(out.data(), cout, cols_n);
  ConstMap wmat(weight.data().data(), cout, rows);
  std::shared_ptr<std::vector<T>> cols;
  if (recording) {
    // The backward pass needs the whole column matrix.
    cols = std::make_shared<std::vector<T>>(static_cast<std::size_t>(rows * cols_n));
    im2col(cols->data(), 0, hout);
    omat.noalias() = wmat * ConstMap(cols->data(), rows, cols_n);
  } else {
    // Inference: blocks of output rows keep the column buffer cache-sized.
    constexpr Index kBlockElems = Index(1) << 18;
    const Index block_rows = std::clamp<Index>(kBlockElems / std::max<Index>(rows * wout, 1), 1, hout);
    thread_local std::vector<T> scratch;
    scratch.resize(static_cast<std::size_t>(rows * block_rows * wout));
    for (Index oy0 = 0; oy0 < hout; oy0 += block_rows) {
      const Index oy1 = std::min(hout, oy0 + block_rows);
      const Index n = (oy1 - oy0) * wout;
      im2col(scratch.data(), oy0, oy1);
      omat.middleCols(oy0 * wout, n).noalias() = wmat * ConstMap(scratch.data(), rows, n);
    }
  }
  {
    auto b = bias.data();
    for (Index co = 0; co < cout; ++co) omat.row(co).array() += b[co];
  }
  g_conv_macs.fetch_add(static_cast<std::uint64_t>(cout * rows * cols_n));

  return make_result<T>(
      Shape{cout, hout, wout}, std::move(out), {input, weight, bias},
      [input, weight, bias, cols, cin, h, w, k, stride, padding, hout, wout, cout, rows,
       cols_n](std::span<const T> g) {
        ConstMap gmat(g.data(), cout, cols_n);
        if (auto gw = grad_sink(weight); !gw.empty()) {
          MutMap gwmat(gw.data(), cout, rows);
          gwmat.noalias() += gmat * ConstMap(cols->data(), rows, cols_n).transpose();
        }
        if (auto gb = grad_sink(bias); !gb.empty()) {
          for (Index co = 0; co < cout; ++co) gb[co] += gmat.row(co).sum();
        }
        auto gi = grad_sink(input);
        if (gi.empty()) return;
        Mat gcols = ConstMap(weight.data().data(), cout, rows).transpose() * gmat;
        const T* src = gcols.data();
        for (Index ci = 0; ci < cin; ++ci) {
          T* plane = gi.data() + ci * h * w;
          for (Index ky = 0; ky < k; ++ky) {
            for (Index kx = 0; kx < k; ++kx) {
              for (Index oy = 0; oy < hout; ++oy) {
                const Index iy = oy * stride - padding + ky;
                if (iy < 0 || iy >= h) {
                  src += wout;
                  continue;
                }
                T* dst_row = plane + iy * w;
                for (Index ox = 0; ox < wout; ++ox, ++src) {
                  const Index ix = ox * stride - padding + kx;
                  if (ix >= 0 && ix < w) dst_row[ix] += *src;
                }
              }
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Upsampling

UpsampleMode parse_upsample_mode(std::string_view name) {
  if (name == "bilinear") return UpsampleMode::kBilinear;
  if (name == "nearest") return UpsampleMode::kNearest;
  fail(ErrorCode::kInvalidArgument, "unknown upsample mode '" + std::string(name) + "'");
}

std::string_view upsample_mode_name(UpsampleMode mode) {
  return mode == UpsampleMode::kBilinear ? "bilinear" : "nearest";
}

namespace {

struct Tap {
  Index lo;
  Index hi;
  double t;  // weight of `hi`
};

// Half-pixel-center source positions for a 2x upsampled axis of length n.
std::vector<Tap> upsample_taps(Index n) {
  std::vector<Tap> taps(static_cast<std::size_t>(2 * n));
  for (Index o = 0; o < 2 * n; ++o) {
    const double src = (static_cast<double>(o) + 0.5) / 2.0 - 0.5;
    const double fl = std::floor(src);
    const Index lo = static_cast<Index>(fl);
    const double t = src - fl;
    taps[o] = Tap{std::clamp<Index>(lo, 0, n - 1), std::clamp<Index>(lo + 1, 0, n - 1), t};
  }
  return taps;
}

}  // namespace

template <typename T>
Tensor<T> upsample2x(const Tensor<T>& x, UpsampleMode mode) {
  require_rank(x, 3, "upsample2x");
  const Index c = x.dim(0);
  const Index h = x.dim(1);
  const Index w = x.dim(2);
  const Index ho = 2 * h;
  const Index wo = 2 * w;
  auto xv = x.data();
  std::vector<T> out(static_cast<std::size_t>(c * ho * wo));

  if (mode == UpsampleMode::kNearest) {
    for (Index ch = 0; ch < c; ++ch) {
      for (Index y = 0; y < ho; ++y) {
        for (Index xo = 0; xo < wo; ++xo) {
          out[(ch * ho + y) * wo + xo] = xv[(ch * h + y / 2) * w + xo / 2];
        }
      }
    }
    return make_result<T>(Shape{c, ho, wo}, std::move(out), {x},
                          [x, c, h, w, ho, wo](std::span<const T> g) {
                            auto gx = grad_sink(x);
                            if (gx.empty()) return;
                            for (Index ch = 0; ch < c; ++ch)
                              for (Index y = 0; y < ho; ++y)
                                for (Index xo = 0; xo < wo; ++xo)
                                  gx[(ch * h + y / 2) * w + xo / 2] += g[(ch * ho + y) * wo + xo];
                          });
  }

  const auto ty = upsample_taps(h);
  const auto tx = upsample_taps(w);
  for (Index ch = 0; ch < c; ++ch) {
    const T* plane = xv.data() + ch * h * w;
    for (Index y = 0; y < ho; ++y) {
      const T* r0 = plane + ty[y].lo * w;
      const T* r1 = plane + ty[y].hi * w;
      const T wy = static_cast<T>(ty[y].t);
      for (Index xo = 0; xo < wo; ++xo) {
        const T wx = static_cast<T>(tx[xo].t);
        const T top = r0[tx[xo].lo] + wx * (r0[tx[xo].hi] - r0[tx[xo].lo]);
        const T bot = r1[tx[xo].lo] + wx * (r1[tx[xo].hi] - r1[tx[xo].lo]);
        out[(ch * ho + y) * wo + xo] = top + wy * (bot - top);
      }
    }
  }
  return make_result<T>(Shape{c, ho, wo}, std::move(out), {x},
                        [x, c, h, w, ho, wo, ty, tx](std::span<const T> g) {
                          auto gx = grad_sink(x);
                          if (gx.empty()) return;
                          for (Index ch = 0; ch < c; ++ch) {
                            T* plane = gx.data() + ch * h * w;
                            for (Index y = 0; y < ho; ++y) {
                              const T wy = static_cast<T>(ty[y].t);
                              for (Index xo = 0; xo < wo; ++xo) {
                                const T wx = static_cast<T>(tx[xo].t);
                                const T gv = g[(ch * ho + y) * wo + xo];
                                plane[ty[y].lo * w + tx[xo].lo] += gv * (1 - wy) * (1 - wx);
                                plane[ty[y].lo * w + tx[xo].hi] += gv * (1 - wy) * wx;
                                plane[ty[y].hi * w + tx[xo].lo] += gv * wy * (1 - wx);
                                plane[ty[y].hi * w + tx[xo].hi] += gv * wy * wx;
                              }
                            }
                          }
                        });
}

// ---------------------------------------------------------------------------
// Softmax

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, Index axis) {
  const Index a = normalize_axis(axis, x.rank(), "softmax");
  const Index n = x.shape()[a];
  auto [outer, inner] = outer_inner(x.shape(), a);
  auto xv = x.data();
  for (T v : xv) {
    if (std::isnan(v)) fail(ErrorCode::kNumeric, "softmax: NaN input");
  }
  std::vector<T> out(xv.size());
  for (Index o = 0; o < outer; ++o) {
    for (Index i = 0; i < inner; ++i) {
      const Index base = o * n * inner + i;
      T peak = xv[base];
      for (Index j = 1; j < n; ++j) peak = std::max(peak, xv[base + j * inner]);
      T total = 0;
      for (Index j = 0; j < n; ++j) {
        const T e = std::exp(xv[base + j * inner] - peak);
        out[base + j * inner] = e;
        total += e;
      }
      for (Index j = 0; j < n; ++j) out[base + j * inner] /= total;
    }
  }
  auto y = std::make_shared<std::vector<T>>(out);
  return make_result<T>(x.shape(), std::move(out), {x}, [x, y, n, outer, inner](std::span<const T> g) {
    auto gx = grad_sink(x);
    if (gx.empty()) return;
    const auto& yv = *y;
    for (Index o = 0; o < outer; ++o) {
      for (Index i = 0; i < inner; ++i) {
        const Index base = o * n * inner + i;
        T dot = 0;
        for (Index j = 0; j < n; ++j) dot += g[base + j * inner] * yv[base + j * inner];
        for (Index j = 0; j < n; ++j) {
          const Index p = base + j * inner;
          gx[p] += yv[p] * (g[p] - dot);
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Separable filtering

template <typename T>
Tensor<T> separable_filter_valid(const Tensor<T>& x, std::span<const T> taps) {
  require_rank(x, 3, "separable_filter_valid");
  const Index c = x.dim(0);
  const Index h = x.dim(1);
  const Index w = x.dim(2);
  const Index k = static_cast<Index>(taps.size());
  if (k == 0 || k > h || k > w) {
    fail(ErrorCode::kDimension, "separable_filter_valid: filter of " + std::to_string(k) +
                                    " taps does not fit " + shape_str(x.shape()));
  }
  const Index ho = h - k + 1;
  const Index wo = w - k + 1;
  auto xv = x.data();
  std::vector<T> rowpass(static_cast<std::size_t>(c * h * wo), T(0));
  for (Index ch = 0; ch < c; ++ch) {
    for (Index y = 0; y < h; ++y) {
      const T* src = xv.data() + (ch * h + y) * w;
      T* dst = rowpass.data() + (ch * h + y) * wo;
      for (Index xo = 0; xo < wo; ++xo) {
        T acc = 0;
        for (Index t = 0; t < k; ++t) acc += taps[t] * src[xo + t];
        dst[xo] = acc;
      }
    }
  }
  std::vector<T> out(static_cast<std::size_t>(c * ho * wo), T(0));
  for (Index ch = 0; ch < c; ++ch) {
    for (Index yo = 0; yo < ho; ++yo) {
      T* dst = out.data() + (ch * ho + yo) * wo;
      for (Index t = 0; t < k; ++t) {
        const T* src = rowpass.data() + (ch * h + yo + t) * wo;
        for (Index xo = 0; xo < wo; ++xo) dst[xo] += taps[t] * src[xo];
      }
    }
  }
  std::vector<T> kernel(taps.begin(), taps.end());
  return make_result<T>(Shape{c, ho, wo}, std::move(out), {x},
                        [x, kernel, c, h, w, ho, wo, k](std::span<const T> g) {
                          auto gx = grad_sink(x);
                          if (gx.empty()) return;
                          std::vector<T> grow(static_cast<std::size_t>(c * h * wo), T(0));
                          for (Index ch = 0; ch < c; ++ch)
                            for (Index yo = 0; yo < ho; ++yo)
                              for (Index t = 0; t < k; ++t) {
                                T* dst = grow.data() + (ch * h + yo + t) * wo;
                                const T* src = g.data() + (ch * ho + yo) * wo;
                                for (Index xo = 0; xo < wo; ++xo) dst[xo] += kernel[t] * src[xo];
                              }
                          for (Index ch = 0; ch < c; ++ch)
                            for (Index y = 0; y < h; ++y) {
                              const T* src = grow.data() + (ch * h + y) * wo;
                              T* dst = gx.data() + (ch * h + y) * w;
                              for (Index xo = 0; xo < wo; ++xo)
                                for (Index t = 0; t < k; ++t) dst[xo + t] += kernel[t] * src[xo];
                            }
                        });
}

#define FMPI_INSTANTIATE(T)                                                                     \
  template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);                                \
  template Tensor<T> sub<T>(const Tensor<T>&, const Tensor<T>&);                                \
  template Tensor<T> mul<T>(const Tensor<T>&, const Tensor<T>&);                                \
  template Tensor<T> div<T>(const Tensor<T>&, const Tensor<T>&);                                \
  template Tensor<T> add_scalar<T>(const Tensor<T>&, T);                                        \
  template Tensor<T> mul_scalar<T>(const Tensor<T>&, T);                                        \
  template Tensor<T> neg<T>(const Tensor<T>&);                                                  \
  template Tensor<T> abs<T>(const Tensor<T>&);                                                  \
  template Tensor<T> square<T>(const Tensor<T>&);                                               \
  template Tensor<T> exp<T>(const Tensor<T>&);                                                  \
  template Tensor<T> relu<T>(const Tensor<T>&);                                                 \
  template Tensor<T> sigmoid<T>(const Tensor<T>&);                                              \
  template Tensor<T> sum<T>(const Tensor<T>&);                                                  \
  template Tensor<T> mean<T>(const Tensor<T>&);                                                 \
  template Tensor<T> reshape<T>(const Tensor<T>&, Shape);                                       \
  template Tensor<T> permute<T>(const Tensor<T>&, const std::vector<Index>&);                   \
  template Tensor<T> concat<T>(std::span<const Tensor<T>>, Index);                              \
  template Tensor<T> slice<T>(const Tensor<T>&, Index, Index, Index);                           \
  template Tensor<T> conv2d<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, int, int); \
  template Tensor<T> upsample2x<T>(const Tensor<T>&, UpsampleMode);                             \
  template Tensor<T> softmax<T>(const Tensor<T>&, Index);                                       \
  template Tensor<T> separable_filter_valid<T>(const Tensor<T>&, std::span<const T>);

FMPI_INSTANTIATE(float)
FMPI_INSTANTIATE(double)
#undef FMPI_INSTANTIATE

}  // namespace fmpi
