// SPDX-License-Identifier: Apache-2.0
#pragma once

// Dense compute kernels behind the affine and convolution primitives.
//
// Every output element is accumulated in a fixed order that does not depend on
// the number of rows, the thread count, or the element's position. This is what
// makes per-ray results independent of which other rays share a batch and makes
// the convolutions exactly translation covariant.

#include <algorithm>
#include <cstddef>
#include <vector>

namespace nff::ad::kernels {

template <class T>
inline void axpy(T a, const T* x, T* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

/// Dot product with eight fixed lanes combined pairwise.
template <class T>
inline T dot(const T* a, const T* b, std::size_t n) {
  T acc[8] = {T(0), T(0), T(0), T(0), T(0), T(0), T(0), T(0)};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8)
    for (int l = 0; l < 8; ++l) acc[l] += a[i + l] * b[i + l];
  T s = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
  for (; i < n; ++i) s += a[i] * b[i];
  return s;
}

/// y[n, o] = b[o] + sum_k x[n, k] * w[o, k]   (x: N x in, w: out x in).
template <class T>
void affine_forward(const T* x, const T* w, const T* b, T* y, int n_rows, int in, int out) {
  std::vector<T> wt(static_cast<std::size_t>(in) * out);
  for (int o = 0; o < out; ++o)
    for (int k = 0; k < in; ++k) wt[static_cast<std::size_t>(k) * out + o] = w[static_cast<std::size_t>(o) * in + k];
  const int blocks = (n_rows + 3) / 4;
#pragma omp parallel for schedule(static)
  for (int blk = 0; blk < blocks; ++blk) {
    const int n0 = blk * 4;
    const int rows = std::min(4, n_rows - n0);
    for (int r = 0; r < rows; ++r) {
      T* yr = y + static_cast<std::size_t>(n0 + r) * out;
      for (int o = 0; o < out; ++o) yr[o] = b ? b[o] : T(0);
    }
    for (int k = 0; k < in; ++k) {
      const T* wk = wt.data() + static_cast<std::size_t>(k) * out;
      for (int r = 0; r < rows; ++r) {
        const T a = x[static_cast<std::size_t>(n0 + r) * in + k];
        axpy(a, wk, y + static_cast<std::size_t>(n0 + r) * out, static_cast<std::size_t>(out));
      }
    }
  }
}

/// dx[n, k] += sum_o dy[n, o] * w[o, k]
template <class T>
void affine_backward_input(const T* dy, const T* w, T* dx, int n_rows, int in, int out) {
#pragma omp parallel for schedule(static)
  for (int n = 0; n < n_rows; ++n) {
    T* dxr = dx + static_cast<std::size_t>(n) * in;
    const T* dyr = dy + static_cast<std::size_t>(n) * out;
    for (int o = 0; o < out; ++o) axpy(dyr[o], w + static_cast<std::size_t>(o) * in, dxr, static_cast<std::size_t>(in));
  }
}

/// dw[o, k] += sum_n dy[n, o] * x[n, k];  db[o] += sum_n dy[n, o]  (n ascending).
template <class T>
void affine_backward_params(const T* dy, const T* x, T* dw, T* db, int n_rows, int in, int out) {
  constexpr int kChunk = 32;
#pragma omp parallel for schedule(static)
  for (int o = 0; o < out; ++o) {
    T* dwo = dw ? dw + static_cast<std::size_t>(o) * in : nullptr;
    T bias_acc = db ? db[o] : T(0);
    for (int n0 = 0; n0 < n_rows; n0 += kChunk) {
      const int n1 = std::min(n_rows, n0 + kChunk);
      for (int n = n0; n < n1; ++n) {
        const T g = dy[static_cast<std::size_t>(n) * out + o];
        if (dwo) axpy(g, x + static_cast<std::size_t>(n) * in, dwo, static_cast<std::size_t>(in));
        bias_acc += g;
      }
    }
    if (db) db[o] = bias_acc;
  }
}

struct ConvGeometry {
  int ci = 0, d = 1, h = 1, w = 1;     // input channels and spatial size
  int co = 0, kd = 1, kh = 1, kw = 1;  // output channels and kernel size
  int sd = 1, sh = 1, sw = 1;          // strides
  int pd = 0, ph = 0, pw = 0;          // zero padding
  int od() const { return (d + 2 * pd - kd) / sd + 1; }
  int oh() const { return (h + 2 * ph - kh) / sh + 1; }
  int ow() const { return (w + 2 * pw - kw) / sw + 1; }
  std::size_t in_spatial() const { return static_cast<std::size_t>(d) * h * w; }
  std::size_t out_spatial() const { return static_cast<std::size_t>(od()) * oh() * ow(); }
  int taps() const { return kd * kh * kw; }
  bool pointwise() const {
    return kd == 1 && kh == 1 && kw == 1 && sd == 1 && sh == 1 && sw == 1 && pd == 0 && ph == 0 && pw == 0;
  }
};

/// Gathers the input samples that kernel tap (a, b, c) sees at every output
/// position into cols[ci, p] (zero where the tap falls in the padding).
template <class T>
void gather_tap(const ConvGeometry& g, const T* x, int a, int b, int c, T* cols) {
  const int od = g.od(), oh = g.oh(), ow = g.ow();
  const std::size_t P = g.out_spatial();
  for (int ci = 0; ci < g.ci; ++ci) {
    const T* xc = x + static_cast<std::size_t>(ci) * g.in_spatial();
    T* col = cols + static_cast<std::size_t>(ci) * P;
    std::size_t p = 0;
    for (int z = 0; z < od; ++z) {
      const int iz = z * g.sd + a - g.pd;
      for (int y = 0; y < oh; ++y) {
        const int iy = y * g.sh + b - g.ph;
        const bool row_ok = iz >= 0 && iz < g.d && iy >= 0 && iy < g.h;
        const T* xrow = row_ok ? xc + (static_cast<std::size_t>(iz) * g.h + iy) * g.w : nullptr;
        for (int xo = 0; xo < ow; ++xo, ++p) {
          const int ix = xo * g.sw + c - g.pw;
          col[p] = (row_ok && ix >= 0 && ix < g.w) ? xrow[ix] : T(0);
        }
      }
    }
  }
}

/// Adds cols[ci, p] back onto the input positions tap (a, b, c) reads from.
template <class T>
void scatter_tap(const ConvGeometry& g, const T* cols, int a, int b, int c, T* dx) {
  const int od = g.od(), oh = g.oh(), ow = g.ow();
  const std::size_t P = g.out_spatial();
  for (int ci = 0; ci < g.ci; ++ci) {
    T* dxc = dx + static_cast<std::size_t>(ci) * g.in_spatial();
    const T* col = cols + static_cast<std::size_t>(ci) * P;
    std::size_t p = 0;
    for (int z = 0; z < od; ++z) {
      const int iz = z * g.sd + a - g.pd;
      for (int y = 0; y < oh; ++y, p += static_cast<std::size_t>(ow)) {
        const int iy = y * g.sh + b - g.ph;
        if (iz < 0 || iz >= g.d || iy < 0 || iy >= g.h) continue;
        T* dxrow = dxc + (static_cast<std::size_t>(iz) * g.h + iy) * g.w;
        for (int xo = 0; xo < ow; ++xo) {
          const int ix = xo * g.sw + c - g.pw;
          if (ix >= 0 && ix < g.w) dxrow[ix] += col[p + xo];
        }
      }
    }
  }
}

/// out[co, p] = bias[co] + sum_tap sum_ci w[co, ci, tap] * x[ci, p shifted by tap]
template <class T>
void conv_forward(const ConvGeometry& g, const T* x, const T* w, const T* bias, T* out) {
  const std::size_t P = g.out_spatial();
  const int taps = g.taps();
  for (int co = 0; co < g.co; ++co)
    std::fill(out + co * P, out + (co + 1) * P, bias ? bias[co] : T(0));
  std::vector<T> cols;
  if (!g.pointwise()) cols.resize(static_cast<std::size_t>(g.ci) * P);
  int tap = 0;
  for (int a = 0; a < g.kd; ++a)
    for (int b = 0; b < g.kh; ++b)
      for (int c = 0; c < g.kw; ++c, ++tap) {
        const T* src = x;
        if (!g.pointwise()) {
          gather_tap(g, x, a, b, c, cols.data());
          src = cols.data();
        }
#pragma omp parallel for schedule(static)
        for (int co = 0; co < g.co; ++co) {
          T* orow = out + static_cast<std::size_t>(co) * P;
          for (int ci = 0; ci < g.ci; ++ci) {
            const T wv = w[(static_cast<std::size_t>(co) * g.ci + ci) * taps + tap];
            axpy(wv, src + static_cast<std::size_t>(ci) * P, orow, P);
          }
        }
      }
}

template <class T>
void conv_backward(const ConvGeometry& g, const T* x, const T* w, const T* dout, T* dx, T* dw, T* db) {
  const std::size_t P = g.out_spatial();
  const int taps = g.taps();
  if (db)
    for (int co = 0; co < g.co; ++co) {
      const T* d = dout + static_cast<std::size_t>(co) * P;
      T acc = db[co];
      for (std::size_t p = 0; p < P; ++p) acc += d[p];
      db[co] = acc;
    }
  std::vector<T> cols, dcols;
  const bool pw = g.pointwise();
  if (!pw) cols.resize(static_cast<std::size_t>(g.ci) * P);
  if (dx) dcols.resize(static_cast<std::size_t>(g.ci) * P);
  int tap = 0;
  for (int a = 0; a < g.kd; ++a)
    for (int b = 0; b < g.kh; ++b)
      for (int c = 0; c < g.kw; ++c, ++tap) {
        const T* src = x;
        if (!pw) {
          gather_tap(g, x, a, b, c, cols.data());
          src = cols.data();
        }
        if (dw) {
#pragma omp parallel for schedule(static)
          for (int co = 0; co < g.co; ++co)
            for (int ci = 0; ci < g.ci; ++ci)
              dw[(static_cast<std::size_t>(co) * g.ci + ci) * taps + tap] +=
                  dot(dout + static_cast<std::size_t>(co) * P, src + static_cast<std::size_t>(ci) * P, P);
        }
        if (dx) {
#pragma omp parallel for schedule(static)
          for (int ci = 0; ci < g.ci; ++ci) {
            T* drow = dcols.data() + static_cast<std::size_t>(ci) * P;
            std::fill(drow, drow + P, T(0));
            for (int co = 0; co < g.co; ++co)
              axpy(w[(static_cast<std::size_t>(co) * g.ci + ci) * taps + tap], dout + static_cast<std::size_t>(co) * P, drow, P);
          }
          if (pw) {
            for (std::size_t i = 0; i < dcols.size(); ++i) dx[i] += dcols[i];
          } else {
            scatter_tap(g, dcols.data(), a, b, c, dx);
          }
        }
      }
}

}  // namespace nff::ad::kernels
