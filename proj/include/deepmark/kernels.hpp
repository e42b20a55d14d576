#pragma once

#include <cstddef>
#include <vector>

namespace deepmark::kernels {

// Convolution kernels, stride 1, zero same-padding. Layouts:
//   input  [H][W][C]            (channel fastest)
//   filter [k][k][C][F]         (output channel fastest)
//   output [H][W][F]
// The inner f-loops run over contiguous memory so they vectorize.

template <typename T>
void conv2d_forward(const T* in, int H, int W, int C, const T* wt, int k, int F,
                    const T* bias, T* out) {
  const int pad = k / 2;
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      T* o = out + (static_cast<std::size_t>(y) * W + x) * F;
      for (int f = 0; f < F; ++f) o[f] = bias[f];
      const int ky0 = (y - pad < 0) ? pad - y : 0;
      const int ky1 = (y - pad + k > H) ? H - y + pad : k;
      const int kx0 = (x - pad < 0) ? pad - x : 0;
      const int kx1 = (x - pad + k > W) ? W - x + pad : k;
      for (int ky = ky0; ky < ky1; ++ky) {
        const int iy = y + ky - pad;
        for (int kx = kx0; kx < kx1; ++kx) {
          const int ix = x + kx - pad;
          const T* ip = in + (static_cast<std::size_t>(iy) * W + ix) * C;
          const T* wp = wt + (static_cast<std::size_t>(ky) * k + kx) * C * F;
          for (int c = 0; c < C; ++c) {
            const T a = ip[c];
            const T* wrow = wp + static_cast<std::size_t>(c) * F;
            for (int f = 0; f < F; ++f) o[f] += a * wrow[f];
          }
        }
      }
    }
  }
}

/// dIn += correlate(dOut, W). Uses a [k][k][F][C] transposed copy of the
/// filter so the inner c-loop is contiguous.
template <typename T>
void conv2d_backward_input(const T* dout, int H, int W, int C, const T* wt, int k,
                           int F, T* din) {
  const int pad = k / 2;
  std::vector<T> wtr(static_cast<std::size_t>(k) * k * F * C);
  for (int ky = 0; ky < k; ++ky)
    for (int kx = 0; kx < k; ++kx)
      for (int c = 0; c < C; ++c)
        for (int f = 0; f < F; ++f)
          wtr[((static_cast<std::size_t>(ky) * k + kx) * F + f) * C + c] =
              wt[((static_cast<std::size_t>(ky) * k + kx) * C + c) * F + f];
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      const T* go = dout + (static_cast<std::size_t>(y) * W + x) * F;
      const int ky0 = (y - pad < 0) ? pad - y : 0;
      const int ky1 = (y - pad + k > H) ? H - y + pad : k;
      const int kx0 = (x - pad < 0) ? pad - x : 0;
      const int kx1 = (x - pad + k > W) ? W - x + pad : k;
      for (int ky = ky0; ky < ky1; ++ky) {
        const int iy = y + ky - pad;
        for (int kx = kx0; kx < kx1; ++kx) {
          const int ix = x + kx - pad;
          T* dp = din + (static_cast<std::size_t>(iy) * W + ix) * C;
          const T* wp = wtr.data() + (static_cast<std::size_t>(ky) * k + kx) * F * C;
          for (int f = 0; f < F; ++f) {
            const T g = go[f];
            const T* wrow = wp + static_cast<std::size_t>(f) * C;
            for (int c = 0; c < C; ++c) dp[c] += g * wrow[c];
          }
        }
      }
    }
  }
}

/// dW += in (x) dOut, dBias += sum(dOut).
template <typename T>
void conv2d_backward_params(const T* in, const T* dout, int H, int W, int C, int k,
                            int F, T* dwt, T* dbias) {
  const int pad = k / 2;
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      const T* go = dout + (static_cast<std::size_t>(y) * W + x) * F;
      for (int f = 0; f < F; ++f) dbias[f] += go[f];
      const int ky0 = (y - pad < 0) ? pad - y : 0;
      const int ky1 = (y - pad + k > H) ? H - y + pad : k;
      const int kx0 = (x - pad < 0) ? pad - x : 0;
      const int kx1 = (x - pad + k > W) ? W - x + pad : k;
      for (int ky = ky0; ky < ky1; ++ky) {
        const int iy = y + ky - pad;
        for (int kx = kx0; kx < kx1; ++kx) {
          const int ix = x + kx - pad;
          const T* ip = in + (static_cast<std::size_t>(iy) * W + ix) * C;
          T* wp = dwt + (static_cast<std::size_t>(ky) * k + kx) * C * F;
          for (int c = 0; c < C; ++c) {
            const T a = ip[c];
            T* wrow = wp + static_cast<std::size_t>(c) * F;
            for (int f = 0; f < F; ++f) wrow[f] += a * go[f];
          }
        }
      }
    }
  }
}

// Per-pixel fully connected map: every pixel's C-vector is multiplied by the
// same [C][N] weight matrix.

template <typename T>
void dense_channels_forward(const T* in, std::size_t pixels, int C, const T* wt,
                            int N, const T* bias, T* out) {
  for (std::size_t p = 0; p < pixels; ++p) {
    const T* ip = in + p * C;
    T* o = out + p * N;
    for (int j = 0; j < N; ++j) o[j] = bias[j];
    for (int c = 0; c < C; ++c) {
      const T a = ip[c];
      const T* wrow = wt + static_cast<std::size_t>(c) * N;
      for (int j = 0; j < N; ++j) o[j] += a * wrow[j];
    }
  }
}

template <typename T>
void dense_channels_backward(const T* in, const T* dout, std::size_t pixels, int C,
                             const T* wt, int N, T* din, T* dwt, T* dbias) {
  for (std::size_t p = 0; p < pixels; ++p) {
    const T* ip = in + p * C;
    const T* go = dout + p * N;
    T* dp = din + p * C;
    for (int j = 0; j < N; ++j) dbias[j] += go[j];
    for (int c = 0; c < C; ++c) {
      const T* wrow = wt + static_cast<std::size_t>(c) * N;
      T* dwrow = dwt + static_cast<std::size_t>(c) * N;
      T acc = T(0);
      const T a = ip[c];
      for (int j = 0; j < N; ++j) {
        acc += go[j] * wrow[j];
        dwrow[j] += a * go[j];
      }
      dp[c] += acc;
    }
  }
}

}  // namespace deepmark::kernels
