#include "ndconv/ops.hpp"

#include <algorithm>
#include <cmath>

#include "ndconv/error.hpp"

namespace ndconv {

namespace {

void validate_conv_args(const Tensor& input, const Tensor& weight, const std::vector<double>& bias,
                        std::int64_t stride, std::int64_t padding, std::int64_t dilation) {
    const Shape& is = input.shape();
    const Shape& ws = weight.shape();
    if (ws.h != ws.w) throw ShapeError("conv2d: kernel must be square, got " + ws.str());
    if (ws.c != is.c)
        throw ShapeError("conv2d: weight in_c " + std::to_string(ws.c) + " != input c " +
                         std::to_string(is.c));
    if (static_cast<std::int64_t>(bias.size()) != ws.n)
        throw ShapeError("conv2d: bias size " + std::to_string(bias.size()) + " != out_c " +
                         std::to_string(ws.n));
    if (stride < 1) throw ConfigError("conv2d: stride must be >= 1");
    if (padding < 0) throw ConfigError("conv2d: padding must be >= 0");
    if (dilation < 1) throw ConfigError("conv2d: dilation must be >= 1");
}

std::int64_t conv_out_dim(std::int64_t in, std::int64_t k, std::int64_t stride, std::int64_t padding,
                          std::int64_t dilation) {
    const std::int64_t span = dilation * (k - 1) + 1;
    const std::int64_t num = in + 2 * padding - span;
    if (num < 0) throw ShapeError("conv2d: kernel span exceeds padded input");
    return num / stride + 1;
}

// Copy one input plane into a zero-padded buffer so the kernel loops are branch-free.
void pad_plane(const double* src, std::int64_t h, std::int64_t w, std::int64_t padding,
               std::vector<double>& dst) {
    const std::int64_t hp = h + 2 * padding, wp = w + 2 * padding;
    dst.assign(static_cast<std::size_t>(hp * wp), 0.0);
    for (std::int64_t y = 0; y < h; ++y) {
        double* row = dst.data() + (y + padding) * wp + padding;
        const double* srow = src + y * w;
        for (std::int64_t x = 0; x < w; ++x) row[x] = srow[x];
    }
}

// Deterministic reductions: sixteen independent lanes (lane l sums indices
// congruent to l mod 16), combined in a fixed tree. Keeps the result
// independent of vector width while letting the lanes run in parallel; the
// named accumulators stay in registers.
inline double dot16(const double* __restrict a, const double* __restrict b, std::int64_t n) {
    double l0 = 0.0, l1 = 0.0, l2 = 0.0, l3 = 0.0, l4 = 0.0, l5 = 0.0, l6 = 0.0, l7 = 0.0;
    double l8 = 0.0, l9 = 0.0, la = 0.0, lb = 0.0, lc = 0.0, ld = 0.0, le = 0.0, lf = 0.0;
    std::int64_t i = 0;
    for (; i + 16 <= n; i += 16) {
        l0 = std::fma(a[i + 0], b[i + 0], l0);
        l1 = std::fma(a[i + 1], b[i + 1], l1);
        l2 = std::fma(a[i + 2], b[i + 2], l2);
        l3 = std::fma(a[i + 3], b[i + 3], l3);
        l4 = std::fma(a[i + 4], b[i + 4], l4);
        l5 = std::fma(a[i + 5], b[i + 5], l5);
        l6 = std::fma(a[i + 6], b[i + 6], l6);
        l7 = std::fma(a[i + 7], b[i + 7], l7);
        l8 = std::fma(a[i + 8], b[i + 8], l8);
        l9 = std::fma(a[i + 9], b[i + 9], l9);
        la = std::fma(a[i + 10], b[i + 10], la);
        lb = std::fma(a[i + 11], b[i + 11], lb);
        lc = std::fma(a[i + 12], b[i + 12], lc);
        ld = std::fma(a[i + 13], b[i + 13], ld);
        le = std::fma(a[i + 14], b[i + 14], le);
        lf = std::fma(a[i + 15], b[i + 15], lf);
    }
    double lane[16] = {l0, l1, l2, l3, l4, l5, l6, l7, l8, l9, la, lb, lc, ld, le, lf};
    for (int l = 0; i < n; ++i, ++l) lane[l] = std::fma(a[i], b[i], lane[l]);
    const double low = ((lane[0] + lane[1]) + (lane[2] + lane[3])) +
                       ((lane[4] + lane[5]) + (lane[6] + lane[7]));
    const double high = ((lane[8] + lane[9]) + (lane[10] + lane[11])) +
                        ((lane[12] + lane[13]) + (lane[14] + lane[15]));
    return low + high;
}

inline double sum8(const double* __restrict a, std::int64_t n) {
    double l0 = 0.0, l1 = 0.0, l2 = 0.0, l3 = 0.0, l4 = 0.0, l5 = 0.0, l6 = 0.0, l7 = 0.0;
    std::int64_t i = 0;
    for (; i + 8 <= n; i += 8) {
        l0 += a[i + 0];
        l1 += a[i + 1];
        l2 += a[i + 2];
        l3 += a[i + 3];
        l4 += a[i + 4];
        l5 += a[i + 5];
        l6 += a[i + 6];
        l7 += a[i + 7];
    }
    double lane[8] = {l0, l1, l2, l3, l4, l5, l6, l7};
    for (int l = 0; i < n; ++i, ++l) lane[l] += a[i];
    return ((lane[0] + lane[1]) + (lane[2] + lane[3])) + ((lane[4] + lane[5]) + (lane[6] + lane[7]));
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& weight, const std::vector<double>& bias,
              std::int64_t stride, std::int64_t padding, std::int64_t dilation, Conv2dNode* node) {
    validate_conv_args(input, weight, bias, stride, padding, dilation);
    const Shape& is = input.shape();
    const Shape& ws = weight.shape();
    const std::int64_t k = ws.h;
    const std::int64_t oh = conv_out_dim(is.h, k, stride, padding, dilation);
    const std::int64_t ow = conv_out_dim(is.w, k, stride, padding, dilation);
    Tensor out(is.n, ws.n, oh, ow);

    // Row accumulator: each output element starts at the bias and folds the
    // (ic, tap-row-major) contributions in with fma, one row at a time. The
    // per-element fold order matches deform_conv2d exactly.
    const std::int64_t wp = is.w + 2 * padding;
    std::vector<std::vector<double>> padded(static_cast<std::size_t>(is.c));
    std::vector<double> acc(static_cast<std::size_t>(ow));
    for (std::int64_t n = 0; n < is.n; ++n) {
        for (std::int64_t ic = 0; ic < is.c; ++ic)
            pad_plane(input.plane(n, ic), is.h, is.w, padding, padded[ic]);
        for (std::int64_t oc = 0; oc < ws.n; ++oc) {
            double* op = out.plane(n, oc);
            const double bv = bias[static_cast<std::size_t>(oc)];
            for (std::int64_t y = 0; y < oh; ++y) {
                double* __restrict a = acc.data();
                for (std::int64_t x = 0; x < ow; ++x) a[x] = bv;
                for (std::int64_t ic = 0; ic < is.c; ++ic) {
                    const double* pp = padded[ic].data();
                    const double* wrow = weight.plane(oc, ic);
                    if (stride == 1 && k == 3) {
                        const double* __restrict s0 = pp + (y + 0 * dilation) * wp + 0 * dilation;
                        const double* __restrict s1 = s0 + dilation;
                        const double* __restrict s2 = s1 + dilation;
                        const double* __restrict s3 = pp + (y + 1 * dilation) * wp + 0 * dilation;
                        const double* __restrict s4 = s3 + dilation;
                        const double* __restrict s5 = s4 + dilation;
                        const double* __restrict s6 = pp + (y + 2 * dilation) * wp + 0 * dilation;
                        const double* __restrict s7 = s6 + dilation;
                        const double* __restrict s8 = s7 + dilation;
                        const double w0 = wrow[0], w1 = wrow[1], w2 = wrow[2];
                        const double w3 = wrow[3], w4 = wrow[4], w5 = wrow[5];
                        const double w6 = wrow[6], w7 = wrow[7], w8 = wrow[8];
                        for (std::int64_t x = 0; x < ow; ++x) {
                            double t = a[x];
                            t = std::fma(w0, s0[x], t);
                            t = std::fma(w1, s1[x], t);
                            t = std::fma(w2, s2[x], t);
                            t = std::fma(w3, s3[x], t);
                            t = std::fma(w4, s4[x], t);
                            t = std::fma(w5, s5[x], t);
                            t = std::fma(w6, s6[x], t);
                            t = std::fma(w7, s7[x], t);
                            t = std::fma(w8, s8[x], t);
                            a[x] = t;
                        }
                    } else {
                        for (std::int64_t ky = 0; ky < k; ++ky) {
                            for (std::int64_t kx = 0; kx < k; ++kx) {
                                const double wv = wrow[ky * k + kx];
                                const double* __restrict src =
                                    pp + (y * stride + ky * dilation) * wp + kx * dilation;
                                if (stride == 1) {
                                    for (std::int64_t x = 0; x < ow; ++x) a[x] = std::fma(wv, src[x], a[x]);
                                } else {
                                    for (std::int64_t x = 0; x < ow; ++x)
                                        a[x] = std::fma(wv, src[x * stride], a[x]);
                                }
                            }
                        }
                    }
                }
                std::copy(acc.begin(), acc.end(), op + y * ow);
            }
        }
    }

    if (node) {
        node->input = input;
        node->weight = weight;
        node->stride = stride;
        node->padding = padding;
        node->dilation = dilation;
        node->bias_size = ws.n;
        node->saved = true;
    }
    return out;
}

Conv2dGrads conv2d_backward(const Tensor& grad_out, const Conv2dNode& saved) {
    if (!saved.saved) throw ContractError("conv2d_backward: node has no saved activations");
    const Tensor& input = saved.input;
    const Tensor& weight = saved.weight;
    const Shape& is = input.shape();
    const Shape& ws = weight.shape();
    const std::int64_t k = ws.h;
    const std::int64_t stride = saved.stride, padding = saved.padding, dilation = saved.dilation;
    const std::int64_t oh = conv_out_dim(is.h, k, stride, padding, dilation);
    const std::int64_t ow = conv_out_dim(is.w, k, stride, padding, dilation);
    if (!(grad_out.shape() == Shape{is.n, ws.n, oh, ow}))
        throw ShapeError("conv2d_backward: grad_out shape " + grad_out.shape().str() +
                         " != forward output " + Shape{is.n, ws.n, oh, ow}.str());

    Conv2dGrads g{Tensor(is.n, is.c, is.h, is.w), Tensor(ws.n, ws.c, ws.h, ws.w),
                  std::vector<double>(static_cast<std::size_t>(ws.n), 0.0)};

    if (stride != 1) {
        // Scatter form for strided convolutions (tests only; the model uses stride 1).
        const std::int64_t hp = is.h + 2 * padding, wp = is.w + 2 * padding;
        std::vector<std::vector<double>> padded(static_cast<std::size_t>(is.c));
        std::vector<std::vector<double>> gpad(static_cast<std::size_t>(is.c));
        for (std::int64_t n = 0; n < is.n; ++n) {
            for (std::int64_t ic = 0; ic < is.c; ++ic) {
                pad_plane(input.plane(n, ic), is.h, is.w, padding, padded[ic]);
                gpad[ic].assign(static_cast<std::size_t>(hp * wp), 0.0);
            }
            for (std::int64_t oc = 0; oc < ws.n; ++oc) {
                const double* gop = grad_out.plane(n, oc);
                double bsum = 0.0;
                for (std::int64_t i = 0; i < oh * ow; ++i) bsum += gop[i];
                g.bias[static_cast<std::size_t>(oc)] += bsum;
                for (std::int64_t ic = 0; ic < is.c; ++ic) {
                    const double* pp = padded[ic].data();
                    double* gp = gpad[ic].data();
                    for (std::int64_t ky = 0; ky < k; ++ky) {
                        for (std::int64_t kx = 0; kx < k; ++kx) {
                            const double wv = weight.at(oc, ic, ky, kx);
                            double wsum = 0.0;
                            for (std::int64_t y = 0; y < oh; ++y) {
                                const std::int64_t row = (y * stride + ky * dilation) * wp + kx * dilation;
                                const double* src = pp + row;
                                double* gdst = gp + row;
                                const double* go = gop + y * ow;
                                for (std::int64_t x = 0; x < ow; ++x) {
                                    wsum = std::fma(go[x], src[x * stride], wsum);
                                    gdst[x * stride] = std::fma(wv, go[x], gdst[x * stride]);
                                }
                            }
                            g.weight.at(oc, ic, ky, kx) += wsum;
                        }
                    }
                }
            }
            for (std::int64_t ic = 0; ic < is.c; ++ic) {
                double* gi = g.input.plane(n, ic);
                const double* gp = gpad[ic].data();
                for (std::int64_t y = 0; y < is.h; ++y)
                    for (std::int64_t x = 0; x < is.w; ++x)
                        gi[y * is.w + x] += gp[(y + padding) * wp + (x + padding)];
            }
        }
        return g;
    }

    // Stride-1 path, three vectorizable passes: bias sums, lane-reduced weight
    // gradients, and the input gradient as a correlation of the q-padded
    // upstream gradient with the flipped kernel.
    const std::int64_t wp = is.w + 2 * padding;
    const std::int64_t q = dilation * (k - 1);
    const std::int64_t wq = ow + 2 * q;

    for (std::int64_t n = 0; n < is.n; ++n)
        for (std::int64_t oc = 0; oc < ws.n; ++oc)
            g.bias[static_cast<std::size_t>(oc)] += sum8(grad_out.plane(n, oc), oh * ow);

    std::vector<std::vector<double>> padded(static_cast<std::size_t>(is.c));
    std::vector<std::vector<double>> gq(static_cast<std::size_t>(ws.n));
    std::vector<double> acc(static_cast<std::size_t>(is.w));
    std::vector<double> wacc(static_cast<std::size_t>(k * k));
    for (std::int64_t n = 0; n < is.n; ++n) {
        for (std::int64_t ic = 0; ic < is.c; ++ic)
            pad_plane(input.plane(n, ic), is.h, is.w, padding, padded[ic]);
        for (std::int64_t oc = 0; oc < ws.n; ++oc) {
            const double* gop = grad_out.plane(n, oc);
            for (std::int64_t ic = 0; ic < is.c; ++ic) {
                const double* pp = padded[ic].data();
                // Row-outer so each grad_out row is read once for all taps;
                // per tap this is still a serial sum of per-row lane dots.
                std::fill(wacc.begin(), wacc.end(), 0.0);
                for (std::int64_t y = 0; y < oh; ++y) {
                    const double* go = gop + y * ow;
                    for (std::int64_t ky = 0; ky < k; ++ky) {
                        const double* src = pp + (y + ky * dilation) * wp;
                        for (std::int64_t kx = 0; kx < k; ++kx)
                            wacc[ky * k + kx] += dot16(go, src + kx * dilation, ow);
                    }
                }
                for (std::int64_t ky = 0; ky < k; ++ky)
                    for (std::int64_t kx = 0; kx < k; ++kx)
                        g.weight.at(oc, ic, ky, kx) += wacc[ky * k + kx];
            }
        }

        for (std::int64_t oc = 0; oc < ws.n; ++oc)
            pad_plane(grad_out.plane(n, oc), oh, ow, q, gq[static_cast<std::size_t>(oc)]);
        for (std::int64_t ic = 0; ic < is.c; ++ic) {
            double* gi = g.input.plane(n, ic);
            for (std::int64_t y = 0; y < is.h; ++y) {
                double* __restrict a = acc.data();
                for (std::int64_t x = 0; x < is.w; ++x) a[x] = 0.0;
                for (std::int64_t oc = 0; oc < ws.n; ++oc) {
                    const double* gp = gq[static_cast<std::size_t>(oc)].data();
                    const double* wrow = weight.plane(oc, ic);
                    if (k == 3) {
                        const double* __restrict s0 = gp + (y + padding) * wq + padding;
                        const double* __restrict s1 = s0 + dilation;
                        const double* __restrict s2 = s1 + dilation;
                        const double* __restrict s3 = s0 + dilation * wq;
                        const double* __restrict s4 = s3 + dilation;
                        const double* __restrict s5 = s4 + dilation;
                        const double* __restrict s6 = s3 + dilation * wq;
                        const double* __restrict s7 = s6 + dilation;
                        const double* __restrict s8 = s7 + dilation;
                        // Flipped kernel: tap j of the correlation uses w[8 - j].
                        const double w0 = wrow[8], w1 = wrow[7], w2 = wrow[6];
                        const double w3 = wrow[5], w4 = wrow[4], w5 = wrow[3];
                        const double w6 = wrow[2], w7 = wrow[1], w8 = wrow[0];
                        for (std::int64_t x = 0; x < is.w; ++x) {
                            double t = a[x];
                            t = std::fma(w0, s0[x], t);
                            t = std::fma(w1, s1[x], t);
                            t = std::fma(w2, s2[x], t);
                            t = std::fma(w3, s3[x], t);
                            t = std::fma(w4, s4[x], t);
                            t = std::fma(w5, s5[x], t);
                            t = std::fma(w6, s6[x], t);
                            t = std::fma(w7, s7[x], t);
                            t = std::fma(w8, s8[x], t);
                            a[x] = t;
                        }
                    } else {
                        for (std::int64_t ky = 0; ky < k; ++ky) {
                            for (std::int64_t kx = 0; kx < k; ++kx) {
                                const double wv = wrow[(k - 1 - ky) * k + (k - 1 - kx)];
                                const double* __restrict src =
                                    gp + (y + padding + ky * dilation) * wq + (padding + kx * dilation);
                                for (std::int64_t x = 0; x < is.w; ++x)
                                    a[x] = std::fma(wv, src[x], a[x]);
                            }
                        }
                    }
                }
                std::copy(acc.begin(), acc.end(), gi + y * is.w);
            }
        }
    }
    return g;
}

Tensor relu(const Tensor& input, ReluNode* node) {
    Tensor out = input;
    for (std::int64_t i = 0; i < out.size(); ++i)
        if (out.data()[i] < 0.0) out.data()[i] = 0.0;
    if (node) {
        node->input = input;
        node->saved = true;
    }
    return out;
}

Tensor relu_backward(const Tensor& grad_out, const ReluNode& saved) {
    if (!saved.saved) throw ContractError("relu_backward: node has no saved activations");
    check_same_shape(grad_out, saved.input, "relu_backward");
    Tensor g = grad_out;
    for (std::int64_t i = 0; i < g.size(); ++i)
        if (!(saved.input.data()[i] > 0.0)) g.data()[i] = 0.0;
    return g;
}

double mse_density_loss(const Tensor& pred, const Tensor& target, MseNode* node) {
    check_same_shape(pred, target, "mse_density_loss");
    if (pred.shape().n < 1) throw ShapeError("mse_density_loss: empty batch");
    double s = 0.0, comp = 0.0;
    for (std::int64_t i = 0; i < pred.size(); ++i) {
        const double d = pred.data()[i] - target.data()[i];
        const double x = d * d;
        const double t = s + x;
        if (std::abs(s) >= std::abs(x))
            comp += (s - t) + x;
        else
            comp += (x - t) + s;
        s = t;
    }
    if (node) {
        node->pred = pred;
        node->target = target;
        node->saved = true;
    }
    return (s + comp) / (2.0 * static_cast<double>(pred.shape().n));
}

Tensor mse_density_loss_backward(const MseNode& saved, double upstream) {
    if (!saved.saved) throw ContractError("mse_density_loss_backward: node has no saved activations");
    const double scale = upstream / static_cast<double>(saved.pred.shape().n);
    Tensor g = Tensor::zeros_like(saved.pred);
    for (std::int64_t i = 0; i < g.size(); ++i)
        g.data()[i] = scale * (saved.pred.data()[i] - saved.target.data()[i]);
    return g;
}

Tensor finite_diff_grad(const std::function<double(const Tensor&)>& scalar_fn, const Tensor& at,
                        double step) {
    Tensor x = at;
    Tensor g = Tensor::zeros_like(at);
    for (std::int64_t i = 0; i < x.size(); ++i) {
        const double orig = x.data()[i];
        x.data()[i] = orig + step;
        const double fp = scalar_fn(x);
        x.data()[i] = orig - step;
        const double fm = scalar_fn(x);
        x.data()[i] = orig;
        g.data()[i] = (fp - fm) / (2.0 * step);
    }
    return g;
}

}  // namespace ndconv
