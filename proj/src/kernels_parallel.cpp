// OpenMP variants. Each parallel loop iterates over independent output
// elements; the per-element accumulation order matches the serial kernels,
// so results are bit-identical. Builds and runs serially without OpenMP.

#include <algorithm>
#include <cmath>
#include <limits>

#include "infershare/kernels.hpp"

namespace infershare::kernels {

void dense_parallel(const double* in, const double* w, const double* bias, double* out,
                    int64_t batch, int64_t in_dim, int64_t out_dim) {
#pragma omp parallel for collapse(2) schedule(static)
  for (int64_t b = 0; b < batch; ++b)
    for (int64_t o = 0; o < out_dim; ++o) {
      const double* row = in + b * in_dim;
      const double* wrow = w + o * in_dim;
      double acc = 0.0;
      for (int64_t i = 0; i < in_dim; ++i) acc += row[i] * wrow[i];
      out[b * out_dim + o] = acc + bias[o];
    }
}

void conv2d_parallel(const double* in, const double* w, const double* bias, double* out,
                     int64_t batch, int64_t cin, int64_t h, int64_t wdim, int64_t cout, int64_t kh,
                     int64_t kw, int64_t stride, int64_t pad, int64_t ho, int64_t wo) {
#pragma omp parallel for collapse(3) schedule(static)
  for (int64_t b = 0; b < batch; ++b)
    for (int64_t co = 0; co < cout; ++co)
      for (int64_t oy = 0; oy < ho; ++oy)
        for (int64_t ox = 0; ox < wo; ++ox) {
          double acc = 0.0;
          for (int64_t ci = 0; ci < cin; ++ci)
            for (int64_t ky = 0; ky < kh; ++ky)
              for (int64_t kx = 0; kx < kw; ++kx) {
                int64_t iy = oy * stride + ky - pad;
                int64_t ix = ox * stride + kx - pad;
                double v = (iy >= 0 && iy < h && ix >= 0 && ix < wdim)
                               ? in[((b * cin + ci) * h + iy) * wdim + ix]
                               : 0.0;
                acc += v * w[((co * cin + ci) * kh + ky) * kw + kx];
              }
          out[((b * cout + co) * ho + oy) * wo + ox] = acc + bias[co];
        }
}

void relu_parallel(const double* in, double* out, int64_t n) {
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < n; ++i) out[i] = in[i] > 0.0 ? in[i] : 0.0;
}

void add_parallel(const double* a, const double* b, double* out, int64_t n) {
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

void maxpool2d_parallel(const double* in, double* out, int64_t batch, int64_t c, int64_t h,
                        int64_t wdim, int64_t kh, int64_t kw, int64_t stride, int64_t pad,
                        int64_t ho, int64_t wo) {
#pragma omp parallel for collapse(2) schedule(static)
  for (int64_t b = 0; b < batch; ++b)
    for (int64_t ch = 0; ch < c; ++ch)
      for (int64_t oy = 0; oy < ho; ++oy)
        for (int64_t ox = 0; ox < wo; ++ox) {
          double m = -std::numeric_limits<double>::infinity();
          for (int64_t ky = 0; ky < kh; ++ky)
            for (int64_t kx = 0; kx < kw; ++kx) {
              int64_t iy = oy * stride + ky - pad;
              int64_t ix = ox * stride + kx - pad;
              if (iy >= 0 && iy < h && ix >= 0 && ix < wdim)
                m = std::max(m, in[((b * c + ch) * h + iy) * wdim + ix]);
            }
          out[((b * c + ch) * ho + oy) * wo + ox] = m;
        }
}

void gap_parallel(const double* in, double* out, int64_t batch, int64_t c, int64_t h,
                  int64_t wdim) {
#pragma omp parallel for collapse(2) schedule(static)
  for (int64_t b = 0; b < batch; ++b)
    for (int64_t ch = 0; ch < c; ++ch) {
      const double* plane = in + (b * c + ch) * h * wdim;
      double acc = 0.0;
      for (int64_t i = 0; i < h * wdim; ++i) acc += plane[i];
      out[b * c + ch] = acc / static_cast<double>(h * wdim);
    }
}

void softmax_parallel(const double* in, double* out, int64_t batch, int64_t d) {
#pragma omp parallel for schedule(static)
  for (int64_t b = 0; b < batch; ++b) {
    const double* row = in + b * d;
    double* orow = out + b * d;
    double m = row[0];
    for (int64_t i = 1; i < d; ++i) m = std::max(m, row[i]);
    double sum = 0.0;
    for (int64_t i = 0; i < d; ++i) {
      orow[i] = std::exp(row[i] - m);
      sum += orow[i];
    }
    for (int64_t i = 0; i < d; ++i) orow[i] /= sum;
  }
}

}  // namespace infershare::kernels
