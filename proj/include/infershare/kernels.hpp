#pragma once

// Layer kernels, fp64, row-major.
//
// Two implementations of the same arithmetic:
//   *_serial   — reference path. Naive loop nests, no blocking. When `ops` is
//                non-null it accumulates the costed arithmetic op count
//                (MAC = 2, one per element for elementwise kinds, one per
//                window position for pooling); the count must equal
//                layer_flops for the same shapes.
//   *_parallel — OpenMP path, parallel over independent output elements.
//                Per-element accumulation order is identical to the serial
//                kernels, so outputs are bit-identical.
//
// Zero padding is materialized: out-of-bounds conv taps contribute an
// explicit 0.0 multiply (and are counted); maxpool visits padded positions
// but they never win the max.

#include <cstdint>

namespace infershare::kernels {

// in[b][id], w[od][id], bias[od] -> out[b][od]
void dense_serial(const double* in, const double* w, const double* bias, double* out,
                  int64_t batch, int64_t in_dim, int64_t out_dim, uint64_t* ops);
void dense_parallel(const double* in, const double* w, const double* bias, double* out,
                    int64_t batch, int64_t in_dim, int64_t out_dim);

// in[b][cin][h][w], w[cout][cin][kh][kw], bias[cout] -> out[b][cout][ho][wo]
void conv2d_serial(const double* in, const double* w, const double* bias, double* out,
                   int64_t batch, int64_t cin, int64_t h, int64_t wdim, int64_t cout, int64_t kh,
                   int64_t kw, int64_t stride, int64_t pad, int64_t ho, int64_t wo, uint64_t* ops);
void conv2d_parallel(const double* in, const double* w, const double* bias, double* out,
                     int64_t batch, int64_t cin, int64_t h, int64_t wdim, int64_t cout, int64_t kh,
                     int64_t kw, int64_t stride, int64_t pad, int64_t ho, int64_t wo);

void relu_serial(const double* in, double* out, int64_t n, uint64_t* ops);
void relu_parallel(const double* in, double* out, int64_t n);

void add_serial(const double* a, const double* b, double* out, int64_t n, uint64_t* ops);
void add_parallel(const double* a, const double* b, double* out, int64_t n);

// in[b][c][h][w] -> out[b][c][ho][wo]
void maxpool2d_serial(const double* in, double* out, int64_t batch, int64_t c, int64_t h,
                      int64_t wdim, int64_t kh, int64_t kw, int64_t stride, int64_t pad, int64_t ho,
                      int64_t wo, uint64_t* ops);
void maxpool2d_parallel(const double* in, double* out, int64_t batch, int64_t c, int64_t h,
                        int64_t wdim, int64_t kh, int64_t kw, int64_t stride, int64_t pad,
                        int64_t ho, int64_t wo);

// in[b][c][h][w] -> out[b][c]
void gap_serial(const double* in, double* out, int64_t batch, int64_t c, int64_t h, int64_t wdim,
                uint64_t* ops);
void gap_parallel(const double* in, double* out, int64_t batch, int64_t c, int64_t h, int64_t wdim);

// rows[b][d], max-subtracted exp-normalize per row
void softmax_serial(const double* in, double* out, int64_t batch, int64_t d, uint64_t* ops);
void softmax_parallel(const double* in, double* out, int64_t batch, int64_t d);

}  // namespace infershare::kernels
