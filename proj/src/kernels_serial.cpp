#include <algorithm>
#include <cmath>
#include <limits>

#include "infershare/kernels.hpp"

namespace infershare::kernels {

void dense_serial(const double* in, const double* w, const double* bias, double* out,
                  int64_t batch, int64_t in_dim, int64_t out_dim, uint64_t* ops) {
  for (int64_t b = 0; b < batch; ++b) {
    const double* row = in + b * in_dim;
    for (int64_t o = 0; o < out_dim; ++o) {
      const double* wrow = w + o * in_dim;
      double acc = 0.0;
      for (int64_t i = 0; i < in_dim; ++i) acc += row[i] * wrow[i];
      out[b * out_dim + o] = acc + bias[o];
    }
  }
  if (ops) *ops += static_cast<uint64_t>(2 * batch * in_dim * out_dim);
}

void conv2d_serial(const double* in, const double* w, const double* bias, double* out,
                   int64_t batch, int64_t cin, int64_t h, int64_t wdim, int64_t cout, int64_t kh,
                   int64_t kw, int64_t stride, int64_t pad, int64_t ho, int64_t wo, uint64_t* ops) {
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
  if (ops) *ops += static_cast<uint64_t>(2 * batch * cout * ho * wo * cin * kh * kw);
}

void relu_serial(const double* in, double* out, int64_t n, uint64_t* ops) {
  for (int64_t i = 0; i < n; ++i) out[i] = in[i] > 0.0 ? in[i] : 0.0;
  if (ops) *ops += static_cast<uint64_t>(n);
}

void add_serial(const double* a, const double* b, double* out, int64_t n, uint64_t* ops) {
  for (int64_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
  if (ops) *ops += static_cast<uint64_t>(n);
}

void maxpool2d_serial(const double* in, double* out, int64_t batch, int64_t c, int64_t h,
                      int64_t wdim, int64_t kh, int64_t kw, int64_t stride, int64_t pad, int64_t ho,
                      int64_t wo, uint64_t* ops) {
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
  if (ops) *ops += static_cast<uint64_t>(batch * c * ho * wo * kh * kw);
}

void gap_serial(const double* in, double* out, int64_t batch, int64_t c, int64_t h, int64_t wdim,
                uint64_t* ops) {
  for (int64_t b = 0; b < batch; ++b)
    for (int64_t ch = 0; ch < c; ++ch) {
      const double* plane = in + (b * c + ch) * h * wdim;
      double acc = 0.0;
      for (int64_t i = 0; i < h * wdim; ++i) acc += plane[i];
      out[b * c + ch] = acc / static_cast<double>(h * wdim);
    }
  if (ops) *ops += static_cast<uint64_t>(batch * c * h * wdim);
}

void softmax_serial(const double* in, double* out, int64_t batch, int64_t d, uint64_t* ops) {
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
  if (ops) *ops += static_cast<uint64_t>(batch * d);
}

}  // namespace infershare::kernels
