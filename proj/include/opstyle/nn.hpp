#pragma once

// Dense-net building blocks on [C,H,W] tensors: same-padding stride-1 conv
// (im2col + GEMM) with input/weight gradients, bias, leaky rectifier, 2x
// nearest upsample, 2x average pool, and integer-factor nearest downsample.
// Every forward here has the matching hand-derived backward next to it.

#include <cstdint>

#include "opstyle/tensor.hpp"

namespace opstyle {

// patches laid out as [C*k*k, H*W]; row = (c*k + ky)*k + kx, col = y*W + x
inline Tensor im2col(const Tensor& x, int k) {
    check_arg(x.rank() == 3, "im2col: expected [C,H,W]");
    check_arg(k >= 1 && k % 2 == 1, "im2col: kernel must be odd");
    const int64_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
    const int p = k / 2;
    Tensor cols({C * k * k, H * W});
    float* out = cols.data();
    for (int64_t c = 0; c < C; ++c)
        for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
                float* row = out + (((c * k + ky) * k + kx) * H * W);
                for (int64_t y = 0; y < H; ++y) {
                    const int64_t sy = y + ky - p;
                    if (sy < 0 || sy >= H) {
                        for (int64_t xx = 0; xx < W; ++xx) row[y * W + xx] = 0.0f;
                        continue;
                    }
                    const float* src = x.data() + (c * H + sy) * W;
                    for (int64_t xx = 0; xx < W; ++xx) {
                        const int64_t sx = xx + kx - p;
                        row[y * W + xx] = (sx < 0 || sx >= W) ? 0.0f : src[sx];
                    }
                }
            }
    return cols;
}

// scatter-add inverse of im2col
inline Tensor col2im(const Tensor& cols, int64_t C, int64_t H, int64_t W, int k) {
    check_arg(cols.rank() == 2 && cols.dim(0) == C * k * k && cols.dim(1) == H * W,
              "col2im: shape mismatch");
    const int p = k / 2;
    Tensor x({C, H, W});
    const float* in = cols.data();
    for (int64_t c = 0; c < C; ++c)
        for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
                const float* row = in + (((c * k + ky) * k + kx) * H * W);
                for (int64_t y = 0; y < H; ++y) {
                    const int64_t sy = y + ky - p;
                    if (sy < 0 || sy >= H) continue;
                    float* dst = x.data() + (c * H + sy) * W;
                    for (int64_t xx = 0; xx < W; ++xx) {
                        const int64_t sx = xx + kx - p;
                        if (sx >= 0 && sx < W) dst[sx] += row[y * W + xx];
                    }
                }
            }
    return x;
}

// w [Co,Ci,k,k], x [Ci,H,W] -> [Co,H,W], stride 1, zero same-padding
inline Tensor conv2d(const Tensor& x, const Tensor& w) {
    check_arg(w.rank() == 4 && x.rank() == 3 && w.dim(1) == x.dim(0),
              "conv2d: weight/input channel mismatch");
    check_arg(w.dim(2) == w.dim(3), "conv2d: kernel must be square");
    const int64_t Co = w.dim(0), Ci = w.dim(1), H = x.dim(1), W = x.dim(2);
    const int k = int(w.dim(2));
    const Tensor cols = im2col(x, k);
    Tensor out = matmul(w, Co, Ci * k * k, cols, Ci * k * k, H * W);
    return out.reshaped({Co, H, W});
}

// d loss / d x for conv2d: gy [Co,H,W] -> [Ci,H,W]
inline Tensor conv2d_input_grad(const Tensor& gy, const Tensor& w) {
    check_arg(w.rank() == 4 && gy.rank() == 3 && w.dim(0) == gy.dim(0),
              "conv2d_input_grad: weight/grad channel mismatch");
    const int64_t Co = w.dim(0), Ci = w.dim(1), H = gy.dim(1), W = gy.dim(2);
    const int k = int(w.dim(2));
    Tensor gcols = matmul(w, Co, Ci * k * k, gy, Co, H * W, /*ta=*/true);
    return col2im(gcols, Ci, H, W, k);
}

// d loss / d w for conv2d: -> [Co,Ci,k,k]
inline Tensor conv2d_weight_grad(const Tensor& x, const Tensor& gy, int k) {
    check_arg(x.rank() == 3 && gy.rank() == 3 && x.dim(1) == gy.dim(1) && x.dim(2) == gy.dim(2),
              "conv2d_weight_grad: spatial mismatch");
    const int64_t Ci = x.dim(0), Co = gy.dim(0), H = x.dim(1), W = x.dim(2);
    const Tensor cols = im2col(x, k);
    Tensor gw = matmul(gy, Co, H * W, cols, Ci * k * k, H * W, /*ta=*/false, /*tb=*/true);
    return gw.reshaped({Co, Ci, k, k});
}

inline void add_bias(Tensor& x, const Tensor& b) {
    check_arg(x.rank() == 3 && b.rank() == 1 && b.dim(0) == x.dim(0),
              "add_bias: channel mismatch");
    const int64_t C = x.dim(0), HW = x.dim(1) * x.dim(2);
    for (int64_t c = 0; c < C; ++c) {
        const float bc = b[c];
        float* p = x.data() + c * HW;
        for (int64_t i = 0; i < HW; ++i) p[i] += bc;
    }
}

inline Tensor bias_grad(const Tensor& gy) {
    check_arg(gy.rank() == 3, "bias_grad: expected [C,H,W]");
    const int64_t C = gy.dim(0), HW = gy.dim(1) * gy.dim(2);
    Tensor gb({C});
    for (int64_t c = 0; c < C; ++c) {
        double acc = 0.0;
        const float* p = gy.data() + c * HW;
        for (int64_t i = 0; i < HW; ++i) acc += p[i];
        gb[c] = float(acc);
    }
    return gb;
}

inline Tensor leaky_relu(const Tensor& x, float slope) {
    Tensor y = x;
    for (auto& v : y.vec())
        if (v < 0.0f) v *= slope;
    return y;
}

// mask taken from the pre-activation sign; exactly-zero inputs count as positive
inline Tensor leaky_relu_backward(const Tensor& gy, const Tensor& x_pre, float slope) {
    check_arg(gy.same_shape(x_pre), "leaky_relu_backward: shape mismatch");
    Tensor gx = gy;
    const float* xp = x_pre.data();
    float* g = gx.data();
    for (int64_t i = 0; i < gx.size(); ++i)
        if (xp[i] < 0.0f) g[i] *= slope;
    return gx;
}

inline Tensor upsample2_nearest(const Tensor& x) {
    check_arg(x.rank() == 3, "upsample2_nearest: expected [C,H,W]");
    const int64_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
    Tensor y({C, 2 * H, 2 * W});
    for (int64_t c = 0; c < C; ++c)
        for (int64_t i = 0; i < H; ++i)
            for (int64_t j = 0; j < W; ++j) {
                const float v = x(c, i, j);
                y(c, 2 * i, 2 * j) = v;
                y(c, 2 * i, 2 * j + 1) = v;
                y(c, 2 * i + 1, 2 * j) = v;
                y(c, 2 * i + 1, 2 * j + 1) = v;
            }
    return y;
}

// adjoint of replication: sum each 2x2 block
inline Tensor upsample2_nearest_backward(const Tensor& gy) {
    check_arg(gy.rank() == 3 && gy.dim(1) % 2 == 0 && gy.dim(2) % 2 == 0,
              "upsample2_nearest_backward: expected even [C,H,W]");
    const int64_t C = gy.dim(0), H = gy.dim(1) / 2, W = gy.dim(2) / 2;
    Tensor gx({C, H, W});
    for (int64_t c = 0; c < C; ++c)
        for (int64_t i = 0; i < H; ++i)
            for (int64_t j = 0; j < W; ++j)
                gx(c, i, j) = gy(c, 2 * i, 2 * j) + gy(c, 2 * i, 2 * j + 1) +
                              gy(c, 2 * i + 1, 2 * j) + gy(c, 2 * i + 1, 2 * j + 1);
    return gx;
}

inline Tensor avgpool2(const Tensor& x) {
    check_arg(x.rank() == 3 && x.dim(1) % 2 == 0 && x.dim(2) % 2 == 0,
              "avgpool2: expected even [C,H,W]");
    const int64_t C = x.dim(0), H = x.dim(1) / 2, W = x.dim(2) / 2;
    Tensor y({C, H, W});
    for (int64_t c = 0; c < C; ++c)
        for (int64_t i = 0; i < H; ++i)
            for (int64_t j = 0; j < W; ++j)
                y(c, i, j) = 0.25f * (x(c, 2 * i, 2 * j) + x(c, 2 * i, 2 * j + 1) +
                                      x(c, 2 * i + 1, 2 * j) + x(c, 2 * i + 1, 2 * j + 1));
    return y;
}

inline Tensor avgpool2_backward(const Tensor& gy) {
    check_arg(gy.rank() == 3, "avgpool2_backward: expected [C,H,W]");
    const int64_t C = gy.dim(0), H = gy.dim(1), W = gy.dim(2);
    Tensor gx({C, 2 * H, 2 * W});
    for (int64_t c = 0; c < C; ++c)
        for (int64_t i = 0; i < H; ++i)
            for (int64_t j = 0; j < W; ++j) {
                const float v = 0.25f * gy(c, i, j);
                gx(c, 2 * i, 2 * j) = v;
                gx(c, 2 * i, 2 * j + 1) = v;
                gx(c, 2 * i + 1, 2 * j) = v;
                gx(c, 2 * i + 1, 2 * j + 1) = v;
            }
    return gx;
}

// keeps the top-left sample of each factor x factor block
inline Tensor downsample_nearest(const Tensor& x, int factor) {
    check_arg(x.rank() == 3, "downsample_nearest: expected [C,H,W]");
    check_arg(factor >= 1 && x.dim(1) % factor == 0 && x.dim(2) % factor == 0,
              "downsample_nearest: factor must divide H and W");
    const int64_t C = x.dim(0), H = x.dim(1) / factor, W = x.dim(2) / factor;
    Tensor y({C, H, W});
    for (int64_t c = 0; c < C; ++c)
        for (int64_t i = 0; i < H; ++i)
            for (int64_t j = 0; j < W; ++j)
                y(c, i, j) = x(c, i * factor, j * factor);
    return y;
}

// adjoint of sampling: scatter into the sampled positions, zeros elsewhere
inline Tensor downsample_nearest_backward(const Tensor& gy, int factor,
                                          int64_t H_in, int64_t W_in) {
    check_arg(gy.rank() == 3 && gy.dim(1) * factor == H_in && gy.dim(2) * factor == W_in,
              "downsample_nearest_backward: shape mismatch");
    const int64_t C = gy.dim(0), H = gy.dim(1), W = gy.dim(2);
    Tensor gx({C, H_in, W_in});
    for (int64_t c = 0; c < C; ++c)
        for (int64_t i = 0; i < H; ++i)
            for (int64_t j = 0; j < W; ++j)
                gx(c, i * factor, j * factor) = gy(c, i, j);
    return gx;
}

// stride-2 im2col: patches at even anchors only, [C*k*k, (H/2)*(W/2)]
inline Tensor im2col_s2(const Tensor& x, int k) {
    check_arg(x.rank() == 3, "im2col_s2: expected [C,H,W]");
    check_arg(k >= 1 && k % 2 == 1, "im2col_s2: kernel must be odd");
    check_arg(x.dim(1) % 2 == 0 && x.dim(2) % 2 == 0, "im2col_s2: odd input size");
    const int64_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
    const int p = k / 2;
    const int64_t Ho = H / 2, Wo = W / 2;
    Tensor cols({C * k * k, Ho * Wo});
    float* out = cols.data();
    for (int64_t c = 0; c < C; ++c)
        for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
                float* row = out + (((c * k + ky) * k + kx) * Ho * Wo);
                for (int64_t oy = 0; oy < Ho; ++oy) {
                    const int64_t sy = 2 * oy + ky - p;
                    if (sy < 0 || sy >= H) {
                        for (int64_t ox = 0; ox < Wo; ++ox) row[oy * Wo + ox] = 0.0f;
                        continue;
                    }
                    const float* src = x.data() + (c * H + sy) * W;
                    for (int64_t ox = 0; ox < Wo; ++ox) {
                        const int64_t sx = 2 * ox + kx - p;
                        row[oy * Wo + ox] = (sx < 0 || sx >= W) ? 0.0f : src[sx];
                    }
                }
            }
    return cols;
}

inline Tensor col2im_s2(const Tensor& cols, int64_t C, int64_t H, int64_t W, int k) {
    const int64_t Ho = H / 2, Wo = W / 2;
    check_arg(cols.rank() == 2 && cols.dim(0) == C * k * k && cols.dim(1) == Ho * Wo,
              "col2im_s2: shape mismatch");
    const int p = k / 2;
    Tensor x({C, H, W});
    const float* in = cols.data();
    for (int64_t c = 0; c < C; ++c)
        for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
                const float* row = in + (((c * k + ky) * k + kx) * Ho * Wo);
                for (int64_t oy = 0; oy < Ho; ++oy) {
                    const int64_t sy = 2 * oy + ky - p;
                    if (sy < 0 || sy >= H) continue;
                    float* dst = x.data() + (c * H + sy) * W;
                    for (int64_t ox = 0; ox < Wo; ++ox) {
                        const int64_t sx = 2 * ox + kx - p;
                        if (sx >= 0 && sx < W) dst[sx] += row[oy * Wo + ox];
                    }
                }
            }
    return x;
}

// stride-2 conv with same-style padding (pad = k/2): w [Co,Ci,k,k], x [Ci,H,W]
// -> [Co, H/2, W/2]; used by the critic's downsampling trunk
inline Tensor conv2d_stride2(const Tensor& x, const Tensor& w) {
    check_arg(w.rank() == 4 && x.rank() == 3 && w.dim(1) == x.dim(0),
              "conv2d_stride2: weight/input channel mismatch");
    check_arg(w.dim(2) == w.dim(3), "conv2d_stride2: kernel must be square");
    const int64_t Co = w.dim(0), Ci = w.dim(1), H = x.dim(1), W = x.dim(2);
    const int k = int(w.dim(2));
    const Tensor cols = im2col_s2(x, k);
    Tensor out = matmul(w, Co, Ci * k * k, cols, Ci * k * k, (H / 2) * (W / 2));
    return out.reshaped({Co, H / 2, W / 2});
}

inline Tensor conv2d_stride2_input_grad(const Tensor& gy, const Tensor& w,
                                        int64_t H_in, int64_t W_in) {
    check_arg(w.rank() == 4 && gy.rank() == 3 && w.dim(0) == gy.dim(0),
              "conv2d_stride2_input_grad: channel mismatch");
    const int64_t Co = w.dim(0), Ci = w.dim(1), Ho = gy.dim(1), Wo = gy.dim(2);
    check_arg(Ho == H_in / 2 && Wo == W_in / 2, "conv2d_stride2_input_grad: spatial mismatch");
    const int k = int(w.dim(2));
    Tensor gcols = matmul(w, Co, Ci * k * k, gy, Co, Ho * Wo, /*ta=*/true);
    return col2im_s2(gcols, Ci, H_in, W_in, k);
}

inline Tensor conv2d_stride2_weight_grad(const Tensor& x, const Tensor& gy, int k) {
    check_arg(x.rank() == 3 && gy.rank() == 3, "conv2d_stride2_weight_grad: rank mismatch");
    check_arg(gy.dim(1) == x.dim(1) / 2 && gy.dim(2) == x.dim(2) / 2,
              "conv2d_stride2_weight_grad: spatial mismatch");
    const int64_t Ci = x.dim(0), Co = gy.dim(0), Ho = gy.dim(1), Wo = gy.dim(2);
    const Tensor cols = im2col_s2(x, k);
    Tensor gw = matmul(gy, Co, Ho * Wo, cols, Ci * k * k, Ho * Wo, /*ta=*/false, /*tb=*/true);
    return gw.reshaped({Co, Ci, k, k});
}

} // namespace opstyle
