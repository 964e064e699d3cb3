#include "lanedet/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "lanedet/errors.hpp"

namespace lanedet::ops {

namespace {

constexpr std::size_t kColumnBlock = 256;

void require_rank(const Tensor& t, std::size_t rank, const char* op, const char* what) {
    if (!t.defined()) throw DimensionError(std::string(op) + ": " + what + " is undefined");
    if (t.rank() != rank) {
        throw DimensionError(std::string(op) + ": " + what + " must have rank " + std::to_string(rank) +
                             ", got shape " + shape_to_string(t.shape()));
    }
}

void require_axis(const char* op, const char* what, std::size_t axis, std::size_t got, std::size_t expected) {
    if (got != expected) {
        throw DimensionError(std::string(op) + ": " + what + " axis " + std::to_string(axis) + " has extent " +
                             std::to_string(got) + ", expected " + std::to_string(expected));
    }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        for (std::size_t axis = 0; axis < std::min(a.rank(), b.rank()); ++axis) {
            if (a.shape()[axis] != b.shape()[axis]) {
                throw DimensionError(std::string(op) + ": operand shapes " + shape_to_string(a.shape()) + " and " +
                                     shape_to_string(b.shape()) + " differ on axis " + std::to_string(axis));
            }
        }
        throw DimensionError(std::string(op) + ": operand ranks differ (" + shape_to_string(a.shape()) + " vs " +
                             shape_to_string(b.shape()) + ")");
    }
}

// C[M x N] += A[M x K] * B[K x N], all row-major and densely packed. Each
// output element accumulates over K in ascending order regardless of its
// column, so results do not depend on column position.
void gemm_accumulate(const double* a, std::size_t m, std::size_t k, const double* b, std::size_t n, double* c) {
    for (std::size_t col0 = 0; col0 < n; col0 += kColumnBlock) {
        const std::size_t len = std::min(kColumnBlock, n - col0);
        std::size_t row = 0;
        for (; row + 4 <= m; row += 4) {
            double* __restrict c0 = c + row * n + col0;
            double* __restrict c1 = c0 + n;
            double* __restrict c2 = c1 + n;
            double* __restrict c3 = c2 + n;
            const double* a0 = a + row * k;
            for (std::size_t kk = 0; kk < k; ++kk) {
                const double w0 = a0[kk], w1 = a0[k + kk], w2 = a0[2 * k + kk], w3 = a0[3 * k + kk];
                const double* __restrict brow = b + kk * n + col0;
                for (std::size_t j = 0; j < len; ++j) {
                    const double v = brow[j];
                    c0[j] += w0 * v;
                    c1[j] += w1 * v;
                    c2[j] += w2 * v;
                    c3[j] += w3 * v;
                }
            }
        }
        for (; row < m; ++row) {
            double* __restrict crow = c + row * n + col0;
            const double* arow = a + row * k;
            for (std::size_t kk = 0; kk < k; ++kk) {
                const double w = arow[kk];
                const double* __restrict brow = b + kk * n + col0;
                for (std::size_t j = 0; j < len; ++j) crow[j] += w * brow[j];
            }
        }
    }
}

// Dot product with four interleaved partial sums, combined in a fixed order.
double dot4(const double* __restrict x, const double* __restrict y, std::size_t len) {
    double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
    std::size_t i = 0;
    for (; i + 4 <= len; i += 4) {
        s0 += x[i] * y[i];
        s1 += x[i + 1] * y[i + 1];
        s2 += x[i + 2] * y[i + 2];
        s3 += x[i + 3] * y[i + 3];
    }
    for (; i < len; ++i) s0 += x[i] * y[i];
    return (s0 + s1) + (s2 + s3);
}

// C[M x N] += A[M x K] * B[N x K]^T for long K.
void gemm_abt_accumulate(const double* a, std::size_t m, std::size_t k, const double* b, std::size_t n, double* c) {
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) c[i * n + j] += dot4(a + i * k, b + j * k, k);
}

std::vector<double> transpose(const double* src, std::size_t rows, std::size_t cols) {
    std::vector<double> out(rows * cols);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) out[c * rows + r] = src[r * cols + c];
    return out;
}

// Shared 1x1 map over N samples of [C_in, P] planes.
Tensor pointwise_map(const Tensor& input, const Tensor& kernel, const Tensor& bias, Shape out_shape,
                     std::size_t cin, std::size_t cout, std::size_t plane) {
    const std::size_t batch = input.dim(0);
    std::vector<double> out(batch * cout * plane, 0.0);
    const auto x = input.data();
    const auto w = kernel.data();
    for (std::size_t n = 0; n < batch; ++n) {
        double* o = out.data() + n * cout * plane;
        if (bias.defined()) {
            const auto b = bias.data();
            for (std::size_t co = 0; co < cout; ++co) std::fill(o + co * plane, o + (co + 1) * plane, b[co]);
        }
        gemm_accumulate(w.data(), cout, cin, x.data() + n * cin * plane, plane, o);
    }
    std::vector<Tensor> inputs{input, kernel};
    if (bias.defined()) inputs.push_back(bias);
    return make_result(std::move(out_shape), std::move(out), std::move(inputs),
                       [input, kernel, bias, batch, cin, cout, plane](const Tensor& result) {
                           const auto dout = result.grad();
                           const auto x = input.data();
                           const auto w = kernel.data();
                           if (input.requires_grad()) {
                               const auto wt = transpose(w.data(), cout, cin);
                               auto dx = input.grad_buffer();
                               for (std::size_t n = 0; n < batch; ++n) {
                                   gemm_accumulate(wt.data(), cin, cout, dout.data() + n * cout * plane, plane,
                                                   dx.data() + n * cin * plane);
                               }
                           }
                           if (kernel.requires_grad()) {
                               auto dw = kernel.grad_buffer();
                               for (std::size_t n = 0; n < batch; ++n) {
                                   gemm_abt_accumulate(dout.data() + n * cout * plane, cout, plane,
                                                       x.data() + n * cin * plane, cin, dw.data());
                               }
                           }
                           if (bias.defined() && bias.requires_grad()) {
                               auto db = bias.grad_buffer();
                               for (std::size_t n = 0; n < batch; ++n) {
                                   for (std::size_t co = 0; co < cout; ++co) {
                                       const double* g = dout.data() + (n * cout + co) * plane;
                                       double acc = 0.0;
                                       for (std::size_t p = 0; p < plane; ++p) acc += g[p];
                                       db[co] += acc;
                                   }
                               }
                           }
                       });
}

struct ConvGeometry {
    std::size_t batch, cin, h, w, cout, kh, kw, oh, ow;
    Conv2dOptions opt;
};

// Valid output-column range [lo, hi) for a tap at horizontal offset `offset`
// (input column = x * stride + offset).
std::pair<std::size_t, std::size_t> valid_columns(std::ptrdiff_t offset, std::size_t stride, std::size_t in_w,
                                                  std::size_t out_w) {
    std::ptrdiff_t lo = 0;
    if (offset < 0) lo = (-offset + static_cast<std::ptrdiff_t>(stride) - 1) / static_cast<std::ptrdiff_t>(stride);
    const std::ptrdiff_t last_in = static_cast<std::ptrdiff_t>(in_w) - 1 - offset;
    if (last_in < 0) return {0, 0};
    std::ptrdiff_t hi = last_in / static_cast<std::ptrdiff_t>(stride) + 1;
    hi = std::min<std::ptrdiff_t>(hi, static_cast<std::ptrdiff_t>(out_w));
    if (hi <= lo) return {0, 0};
    return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

Tensor depthwise_conv(const Tensor& input, const Tensor& kernel, const Tensor& bias, const ConvGeometry& g) {
    const std::size_t channels = g.cin;
    const std::size_t in_plane = g.h * g.w;
    const std::size_t out_plane = g.oh * g.ow;
    const std::size_t taps = g.kh * g.kw;
    std::vector<double> out(g.batch * channels * out_plane, 0.0);
    const auto x = input.data();
    const auto k = kernel.data();
    const auto s = static_cast<std::ptrdiff_t>(g.opt.stride);
    const auto d = static_cast<std::ptrdiff_t>(g.opt.dilation);
    const auto pad = static_cast<std::ptrdiff_t>(g.opt.padding);

    for (std::size_t n = 0; n < g.batch; ++n) {
        for (std::size_t c = 0; c < channels; ++c) {
            const double* in = x.data() + (n * channels + c) * in_plane;
            double* o = out.data() + (n * channels + c) * out_plane;
            if (bias.defined()) std::fill(o, o + out_plane, bias.data()[c]);
            const double* kc = k.data() + c * taps;
            for (std::size_t y = 0; y < g.oh; ++y) {
                double* __restrict orow = o + y * g.ow;
                for (std::size_t ky = 0; ky < g.kh; ++ky) {
                    const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y) * s + static_cast<std::ptrdiff_t>(ky) * d - pad;
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
                    const double* irow = in + iy * static_cast<std::ptrdiff_t>(g.w);
                    for (std::size_t kx = 0; kx < g.kw; ++kx) {
                        const std::ptrdiff_t off = static_cast<std::ptrdiff_t>(kx) * d - pad;
                        const auto [lo, hi] = valid_columns(off, g.opt.stride, g.w, g.ow);
                        const double wv = kc[ky * g.kw + kx];
                        if (s == 1) {
                            const double* __restrict src = irow + off;
                            for (std::size_t xo = lo; xo < hi; ++xo) orow[xo] += wv * src[xo];
                        } else {
                            for (std::size_t xo = lo; xo < hi; ++xo) orow[xo] += wv * irow[static_cast<std::ptrdiff_t>(xo) * s + off];
                        }
                    }
                }
            }
        }
    }

    std::vector<Tensor> inputs{input, kernel};
    if (bias.defined()) inputs.push_back(bias);
    Shape shape{g.batch, channels, g.oh, g.ow};
    return make_result(std::move(shape), std::move(out), std::move(inputs), [input, kernel, bias, g](const Tensor& result) {
        const std::size_t channels = g.cin;
        const std::size_t in_plane = g.h * g.w;
        const std::size_t out_plane = g.oh * g.ow;
        const std::size_t taps = g.kh * g.kw;
        const auto dout = result.grad();
        const auto x = input.data();
        const auto k = kernel.data();
        const auto s = static_cast<std::ptrdiff_t>(g.opt.stride);
        const auto d = static_cast<std::ptrdiff_t>(g.opt.dilation);
        const auto pad = static_cast<std::ptrdiff_t>(g.opt.padding);
        const bool want_dx = input.requires_grad();
        const bool want_dk = kernel.requires_grad();
        std::span<double> dx = want_dx ? input.grad_buffer() : std::span<double>{};
        std::span<double> dk = want_dk ? kernel.grad_buffer() : std::span<double>{};
        std::vector<double> row_acc(g.ow);

        for (std::size_t c = 0; c < channels; ++c) {
            const double* kc = k.data() + c * taps;
            for (std::size_t ky = 0; ky < g.kh; ++ky) {
                for (std::size_t kx = 0; kx < g.kw; ++kx) {
                    const std::ptrdiff_t off = static_cast<std::ptrdiff_t>(kx) * d - pad;
                    const auto [lo, hi] = valid_columns(off, g.opt.stride, g.w, g.ow);
                    const double wv = kc[ky * g.kw + kx];
                    std::fill(row_acc.begin(), row_acc.end(), 0.0);
                    for (std::size_t n = 0; n < g.batch; ++n) {
                        const double* in = x.data() + (n * channels + c) * in_plane;
                        const double* go = dout.data() + (n * channels + c) * out_plane;
                        double* gi = want_dx ? dx.data() + (n * channels + c) * in_plane : nullptr;
                        for (std::size_t y = 0; y < g.oh; ++y) {
                            const std::ptrdiff_t iy =
                                static_cast<std::ptrdiff_t>(y) * s + static_cast<std::ptrdiff_t>(ky) * d - pad;
                            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
                            const double* __restrict grow = go + y * g.ow;
                            const double* __restrict irow = in + iy * static_cast<std::ptrdiff_t>(g.w);
                            if (s == 1) {
                                const double* __restrict src = irow + off;
                                if (want_dk)
                                    for (std::size_t xo = lo; xo < hi; ++xo) row_acc[xo] += grow[xo] * src[xo];
                                if (want_dx) {
                                    double* __restrict dst = gi + iy * static_cast<std::ptrdiff_t>(g.w) + off;
                                    for (std::size_t xo = lo; xo < hi; ++xo) dst[xo] += wv * grow[xo];
                                }
                            } else {
                                for (std::size_t xo = lo; xo < hi; ++xo) {
                                    const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(xo) * s + off;
                                    if (want_dk) row_acc[xo] += grow[xo] * irow[ix];
                                    if (want_dx) gi[iy * static_cast<std::ptrdiff_t>(g.w) + ix] += wv * grow[xo];
                                }
                            }
                        }
                    }
                    if (want_dk) {
                        double acc = 0.0;
                        for (double v : row_acc) acc += v;
                        dk[c * taps + ky * g.kw + kx] += acc;
                    }
                }
            }
        }
        if (bias.defined() && bias.requires_grad()) {
            auto db = bias.grad_buffer();
            for (std::size_t n = 0; n < g.batch; ++n)
                for (std::size_t c = 0; c < channels; ++c) {
                    const double* go = dout.data() + (n * channels + c) * out_plane;
                    double acc = 0.0;
                    for (std::size_t i = 0; i < out_plane; ++i) acc += go[i];
                    db[c] += acc;
                }
        }
    });
}

// Reference direct convolution used for every configuration without a fast path.
Tensor general_conv(const Tensor& input, const Tensor& kernel, const Tensor& bias, const ConvGeometry& g) {
    const std::size_t groups = g.opt.groups;
    const std::size_t cin_g = g.cin / groups;
    const std::size_t cout_g = g.cout / groups;
    const auto s = static_cast<std::ptrdiff_t>(g.opt.stride);
    const auto d = static_cast<std::ptrdiff_t>(g.opt.dilation);
    const auto pad = static_cast<std::ptrdiff_t>(g.opt.padding);
    const auto x = input.data();
    const auto k = kernel.data();
    std::vector<double> out(g.batch * g.cout * g.oh * g.ow, 0.0);

    // Calls fn(output_index, input_index, kernel_index) for every in-bounds term
    // in a fixed order. Captures by value: it is reused by the backward rule.
    auto for_each_term = [g, cin_g, cout_g, s, d, pad](auto&& fn) {
        for (std::size_t n = 0; n < g.batch; ++n)
            for (std::size_t co = 0; co < g.cout; ++co) {
                const std::size_t group = co / cout_g;
                for (std::size_t y = 0; y < g.oh; ++y)
                    for (std::size_t xo = 0; xo < g.ow; ++xo) {
                        const std::size_t oi = ((n * g.cout + co) * g.oh + y) * g.ow + xo;
                        for (std::size_t ci = 0; ci < cin_g; ++ci)
                            for (std::size_t ky = 0; ky < g.kh; ++ky) {
                                const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y) * s +
                                                          static_cast<std::ptrdiff_t>(ky) * d - pad;
                                if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
                                for (std::size_t kx = 0; kx < g.kw; ++kx) {
                                    const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(xo) * s +
                                                              static_cast<std::ptrdiff_t>(kx) * d - pad;
                                    if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) continue;
                                    const std::size_t ii =
                                        ((n * g.cin + group * cin_g + ci) * g.h + static_cast<std::size_t>(iy)) * g.w +
                                        static_cast<std::size_t>(ix);
                                    const std::size_t ki = ((co * cin_g + ci) * g.kh + ky) * g.kw + kx;
                                    fn(oi, ii, ki);
                                }
                            }
                    }
            }
    };

    if (bias.defined()) {
        const auto b = bias.data();
        for (std::size_t n = 0; n < g.batch; ++n)
            for (std::size_t co = 0; co < g.cout; ++co)
                std::fill_n(out.begin() + static_cast<std::ptrdiff_t>((n * g.cout + co) * g.oh * g.ow), g.oh * g.ow,
                            b[co]);
    }
    for_each_term([&](std::size_t oi, std::size_t ii, std::size_t ki) { out[oi] += k[ki] * x[ii]; });

    std::vector<Tensor> inputs{input, kernel};
    if (bias.defined()) inputs.push_back(bias);
    Shape shape{g.batch, g.cout, g.oh, g.ow};
    return make_result(std::move(shape), std::move(out), std::move(inputs),
                       [input, kernel, bias, g, for_each_term](const Tensor& result) {
                           const auto dout = result.grad();
                           const auto x = input.data();
                           const auto k = kernel.data();
                           std::span<double> dx = input.requires_grad() ? input.grad_buffer() : std::span<double>{};
                           std::span<double> dk = kernel.requires_grad() ? kernel.grad_buffer() : std::span<double>{};
                           for_each_term([&](std::size_t oi, std::size_t ii, std::size_t ki) {
                               if (!dx.empty()) dx[ii] += k[ki] * dout[oi];
                               if (!dk.empty()) dk[ki] += x[ii] * dout[oi];
                           });
                           if (bias.defined() && bias.requires_grad()) {
                               auto db = bias.grad_buffer();
                               const std::size_t plane = g.oh * g.ow;
                               for (std::size_t n = 0; n < g.batch; ++n)
                                   for (std::size_t co = 0; co < g.cout; ++co) {
                                       double acc = 0.0;
                                       for (std::size_t i = 0; i < plane; ++i) acc += dout[(n * g.cout + co) * plane + i];
                                       db[co] += acc;
                                   }
                           }
                       });
}

template <typename Forward, typename Derivative>
Tensor unary(const Tensor& x, Forward forward, Derivative derivative) {
    const auto in = x.data();
    std::vector<double> out(in.size());
    for (std::size_t i = 0; i < in.size(); ++i) out[i] = forward(in[i]);
    return make_result(x.shape(), std::move(out), {x}, [x, derivative](const Tensor& result) {
        const auto dout = result.grad();
        const auto y = result.data();
        const auto in = x.data();
        auto dx = x.grad_buffer();
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dout[i] * derivative(in[i], y[i]);
    });
}

void check_counts(std::span<const std::size_t> counts, std::size_t batch, std::size_t points, const char* op) {
    if (points == 0) throw EmptyInputError(std::string(op) + ": point axis is empty");
    if (counts.empty()) return;
    if (counts.size() != batch) {
        throw DimensionError(std::string(op) + ": counts has " + std::to_string(counts.size()) +
                             " entries for batch axis 0 of extent " + std::to_string(batch));
    }
    for (auto c : counts) {
        if (c == 0) throw EmptyInputError(std::string(op) + ": a sample has no points");
        if (c > points) {
            throw DimensionError(std::string(op) + ": count " + std::to_string(c) + " exceeds point axis 2 extent " +
                                 std::to_string(points));
        }
    }
}

}  // namespace

std::size_t same_padding(std::size_t kernel_size, std::size_t dilation) { return dilation * (kernel_size - 1) / 2; }

Tensor conv2d(const Tensor& input, const Tensor& kernel, Conv2dOptions options) {
    return conv2d(input, kernel, Tensor{}, options);
}

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, Conv2dOptions options) {
    require_rank(input, 4, "conv2d", "input");
    require_rank(kernel, 4, "conv2d", "kernel");
    if (options.stride == 0 || options.dilation == 0 || options.groups == 0) {
        throw ContractError("conv2d: stride, dilation and groups must be >= 1");
    }
    ConvGeometry g{};
    g.batch = input.dim(0);
    g.cin = input.dim(1);
    g.h = input.dim(2);
    g.w = input.dim(3);
    g.cout = kernel.dim(0);
    g.kh = kernel.dim(2);
    g.kw = kernel.dim(3);
    g.opt = options;
    if (g.cin % options.groups != 0) {
        throw DimensionError("conv2d: input channel axis 1 extent " + std::to_string(g.cin) +
                             " is not divisible by groups=" + std::to_string(options.groups));
    }
    if (g.cout % options.groups != 0) {
        throw DimensionError("conv2d: kernel output axis 0 extent " + std::to_string(g.cout) +
                             " is not divisible by groups=" + std::to_string(options.groups));
    }
    require_axis("conv2d", "kernel", 1, kernel.dim(1), g.cin / options.groups);
    if (bias.defined()) {
        require_rank(bias, 1, "conv2d", "bias");
        require_axis("conv2d", "bias", 0, bias.dim(0), g.cout);
    }
    const std::size_t extent_h = options.dilation * (g.kh - 1) + 1;
    const std::size_t extent_w = options.dilation * (g.kw - 1) + 1;
    if (g.h + 2 * options.padding < extent_h) {
        throw DimensionError("conv2d: input axis 2 extent " + std::to_string(g.h) + " is smaller than the kernel");
    }
    if (g.w + 2 * options.padding < extent_w) {
        throw DimensionError("conv2d: input axis 3 extent " + std::to_string(g.w) + " is smaller than the kernel");
    }
    g.oh = (g.h + 2 * options.padding - extent_h) / options.stride + 1;
    g.ow = (g.w + 2 * options.padding - extent_w) / options.stride + 1;

    if (g.kh == 1 && g.kw == 1 && options.stride == 1 && options.padding == 0 && options.groups == 1) {
        return pointwise_map(input, kernel, bias, Shape{g.batch, g.cout, g.oh, g.ow}, g.cin, g.cout, g.h * g.w);
    }
    if (options.groups == g.cin && g.cout == g.cin) return depthwise_conv(input, kernel, bias, g);
    return general_conv(input, kernel, bias, g);
}

Tensor pixel_shuffle(const Tensor& input, std::size_t r) {
    require_rank(input, 4, "pixel_shuffle", "input");
    if (r == 0) throw ContractError("pixel_shuffle: factor must be >= 1");
    const std::size_t n = input.dim(0), cin = input.dim(1), h = input.dim(2), w = input.dim(3);
    if (cin % (r * r) != 0) {
        throw DimensionError("pixel_shuffle: channel axis 1 extent " + std::to_string(cin) +
                             " is not divisible by r^2=" + std::to_string(r * r));
    }
    const std::size_t c = cin / (r * r);
    const std::size_t oh = h * r, ow = w * r;
    // Forward gather index for every output element; the backward scatters through it.
    auto source_index = [=](std::size_t b, std::size_t ch, std::size_t y, std::size_t x) {
        const std::size_t a = y % r, bb = x % r;
        return ((b * cin + ch * r * r + a * r + bb) * h + y / r) * w + x / r;
    };
    const auto in = input.data();
    std::vector<double> out(in.size());
    std::size_t o = 0;
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t y = 0; y < oh; ++y)
                for (std::size_t x = 0; x < ow; ++x) out[o++] = in[source_index(b, ch, y, x)];
    return make_result(Shape{n, c, oh, ow}, std::move(out), {input}, [input, n, c, oh, ow, source_index](const Tensor& result) {
        const auto dout = result.grad();
        auto dx = input.grad_buffer();
        std::size_t o = 0;
        for (std::size_t b = 0; b < n; ++b)
            for (std::size_t ch = 0; ch < c; ++ch)
                for (std::size_t y = 0; y < oh; ++y)
                    for (std::size_t x = 0; x < ow; ++x) dx[source_index(b, ch, y, x)] += dout[o++];
    });
}

Tensor space_to_depth(const Tensor& input, std::size_t r) {
    require_rank(input, 4, "space_to_depth", "input");
    if (r == 0) throw ContractError("space_to_depth: factor must be >= 1");
    const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
    if (h % r != 0) throw DimensionError("space_to_depth: axis 2 extent " + std::to_string(h) + " not divisible by r");
    if (w % r != 0) throw DimensionError("space_to_depth: axis 3 extent " + std::to_string(w) + " not divisible by r");
    const std::size_t oh = h / r, ow = w / r, oc = c * r * r;
    auto source_index = [=](std::size_t b, std::size_t ch, std::size_t y, std::size_t x) {
        const std::size_t base = ch / (r * r), rem = ch % (r * r);
        const std::size_t a = rem / r, bb = rem % r;
        return ((b * c + base) * h + y * r + a) * w + x * r + bb;
    };
    const auto in = input.data();
    std::vector<double> out(in.size());
    std::size_t o = 0;
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t ch = 0; ch < oc; ++ch)
            for (std::size_t y = 0; y < oh; ++y)
                for (std::size_t x = 0; x < ow; ++x) out[o++] = in[source_index(b, ch, y, x)];
    return make_result(Shape{n, oc, oh, ow}, std::move(out), {input}, [input, n, oc, oh, ow, source_index](const Tensor& result) {
        const auto dout = result.grad();
        auto dx = input.grad_buffer();
        std::size_t o = 0;
        for (std::size_t b = 0; b < n; ++b)
            for (std::size_t ch = 0; ch < oc; ++ch)
                for (std::size_t y = 0; y < oh; ++y)
                    for (std::size_t x = 0; x < ow; ++x) dx[source_index(b, ch, y, x)] += dout[o++];
    });
}

Tensor relu(const Tensor& x) {
    if (auto* probe = active_branch_probe())
        for (double v : x.data()) probe->note(v > 0.0);
    return unary(x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& x) {
    return unary(
        x,
        [](double v) {
            if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
            const double e = std::exp(v);
            return e / (1.0 + e);
        },
        [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor& x) {
    return unary(x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    const auto x = a.data(), y = b.data();
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
    return make_result(a.shape(), std::move(out), {a, b}, [a, b](const Tensor& result) {
        const auto g = result.grad();
        for (const Tensor* t : {&a, &b}) {
            if (!t->requires_grad()) continue;
            auto d = t->grad_buffer();
            for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i];
        }
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    const auto x = a.data(), y = b.data();
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
    return make_result(a.shape(), std::move(out), {a, b}, [a, b](const Tensor& result) {
        const auto g = result.grad();
        if (a.requires_grad()) {
            auto d = a.grad_buffer();
            for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i];
        }
        if (b.requires_grad()) {
            auto d = b.grad_buffer();
            for (std::size_t i = 0; i < d.size(); ++i) d[i] -= g[i];
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    const auto x = a.data(), y = b.data();
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
    return make_result(a.shape(), std::move(out), {a, b}, [a, b](const Tensor& result) {
        const auto g = result.grad();
        const auto x = a.data(), y = b.data();
        if (a.requires_grad()) {
            auto d = a.grad_buffer();
            for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] * y[i];
        }
        if (b.requires_grad()) {
            auto d = b.grad_buffer();
            for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] * x[i];
        }
    });
}

Tensor scale(const Tensor& x, double factor) {
    const auto in = x.data();
    std::vector<double> out(in.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = in[i] * factor;
    return make_result(x.shape(), std::move(out), {x}, [x, factor](const Tensor& result) {
        const auto g = result.grad();
        auto d = x.grad_buffer();
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] * factor;
    });
}

Tensor sum(const Tensor& x) {
    double acc = 0.0;
    for (double v : x.data()) acc += v;
    return make_result(Shape{1}, {acc}, {x}, [x](const Tensor& result) {
        const double g = result.grad()[0];
        auto d = x.grad_buffer();
        for (auto& v : d) v += g;
    });
}

Tensor mean(const Tensor& x) {
    if (x.size() == 0) throw EmptyInputError("mean of an empty tensor");
    return scale(sum(x), 1.0 / static_cast<double>(x.size()));
}

Tensor max_pool2d(const Tensor& input, std::size_t k, std::size_t stride) {
    require_rank(input, 4, "max_pool2d", "input");
    if (k == 0 || stride == 0) throw ContractError("max_pool2d: window and stride must be >= 1");
    const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
    if (h < k) throw DimensionError("max_pool2d: input axis 2 extent smaller than window");
    if (w < k) throw DimensionError("max_pool2d: input axis 3 extent smaller than window");
    const std::size_t oh = (h - k) / stride + 1, ow = (w - k) / stride + 1;
    const auto in = input.data();
    std::vector<double> out(n * c * oh * ow);
    std::vector<std::size_t> argmax(out.size());
    std::size_t o = 0;
    for (std::size_t plane = 0; plane < n * c; ++plane)
        for (std::size_t y = 0; y < oh; ++y)
            for (std::size_t x = 0; x < ow; ++x, ++o) {
                std::size_t best = plane * h * w + y * stride * w + x * stride;
                for (std::size_t ky = 0; ky < k; ++ky)
                    for (std::size_t kx = 0; kx < k; ++kx) {
                        const std::size_t idx = plane * h * w + (y * stride + ky) * w + x * stride + kx;
                        if (in[idx] > in[best]) best = idx;
                    }
                out[o] = in[best];
                argmax[o] = best;
            }
    if (auto* probe = active_branch_probe())
        for (auto idx : argmax) probe->note(idx);
    return make_result(Shape{n, c, oh, ow}, std::move(out), {input}, [input, argmax = std::move(argmax)](const Tensor& result) {
        const auto g = result.grad();
        auto d = input.grad_buffer();
        for (std::size_t i = 0; i < argmax.size(); ++i) d[argmax[i]] += g[i];
    });
}

Tensor max_over_points(const Tensor& input, std::span<const std::size_t> counts) {
    require_rank(input, 3, "max_over_points", "input");
    const std::size_t n = input.dim(0), c = input.dim(1), p = input.dim(2);
    check_counts(counts, n, p, "max_over_points");
    const auto in = input.data();
    std::vector<double> out(n * c);
    std::vector<std::size_t> argmax(n * c);
    for (std::size_t b = 0; b < n; ++b) {
        const std::size_t valid = counts.empty() ? p : counts[b];
        for (std::size_t ch = 0; ch < c; ++ch) {
            const double* row = in.data() + (b * c + ch) * p;
            std::size_t best = 0;
            for (std::size_t i = 1; i < valid; ++i)
                if (row[i] > row[best]) best = i;
            out[b * c + ch] = row[best];
            argmax[b * c + ch] = (b * c + ch) * p + best;
        }
    }
    if (auto* probe = active_branch_probe())
        for (auto idx : argmax) probe->note(idx);
    return make_result(Shape{n, c}, std::move(out), {input}, [input, argmax = std::move(argmax)](const Tensor& result) {
        const auto g = result.grad();
        auto d = input.grad_buffer();
        for (std::size_t i = 0; i < argmax.size(); ++i) d[argmax[i]] += g[i];
    });
}

Tensor avg_over_points(const Tensor& input, std::span<const std::size_t> counts) {
    require_rank(input, 3, "avg_over_points", "input");
    const std::size_t n = input.dim(0), c = input.dim(1), p = input.dim(2);
    check_counts(counts, n, p, "avg_over_points");
    std::vector<std::size_t> valid(n, p);
    if (!counts.empty()) valid.assign(counts.begin(), counts.end());
    const auto in = input.data();
    std::vector<double> out(n * c);
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t ch = 0; ch < c; ++ch) {
            const double* row = in.data() + (b * c + ch) * p;
            double acc = 0.0;
            for (std::size_t i = 0; i < valid[b]; ++i) acc += row[i];
            out[b * c + ch] = acc / static_cast<double>(valid[b]);
        }
    return make_result(Shape{n, c}, std::move(out), {input}, [input, valid = std::move(valid), c, p](const Tensor& result) {
        const auto g = result.grad();
        auto d = input.grad_buffer();
        for (std::size_t b = 0; b < valid.size(); ++b)
            for (std::size_t ch = 0; ch < c; ++ch) {
                const double share = g[b * c + ch] / static_cast<double>(valid[b]);
                double* row = d.data() + (b * c + ch) * p;
                for (std::size_t i = 0; i < valid[b]; ++i) row[i] += share;
            }
    });
}

Tensor conv1d(const Tensor& input, const Tensor& kernel, const Tensor& bias) {
    require_rank(input, 3, "conv1d", "input");
    require_rank(kernel, 3, "conv1d", "kernel");
    require_axis("conv1d", "kernel", 2, kernel.dim(2), 1);
    require_axis("conv1d", "kernel", 1, kernel.dim(1), input.dim(1));
    if (bias.defined()) {
        require_rank(bias, 1, "conv1d", "bias");
        require_axis("conv1d", "bias", 0, bias.dim(0), kernel.dim(0));
    }
    const std::size_t n = input.dim(0), cin = input.dim(1), p = input.dim(2), cout = kernel.dim(0);
    return pointwise_map(input, kernel, bias, Shape{n, cout, p}, cin, cout, p);
}

Tensor concat_broadcast(const Tensor& points, const Tensor& global) {
    require_rank(points, 3, "concat_broadcast", "points");
    require_rank(global, 2, "concat_broadcast", "global");
    require_axis("concat_broadcast", "global", 0, global.dim(0), points.dim(0));
    const std::size_t n = points.dim(0), c = points.dim(1), p = points.dim(2), gdim = global.dim(1);
    const auto x = points.data(), gv = global.data();
    std::vector<double> out(n * (c + gdim) * p);
    for (std::size_t b = 0; b < n; ++b) {
        std::copy_n(x.data() + b * c * p, c * p, out.data() + b * (c + gdim) * p);
        for (std::size_t j = 0; j < gdim; ++j)
            std::fill_n(out.data() + (b * (c + gdim) + c + j) * p, p, gv[b * gdim + j]);
    }
    return make_result(Shape{n, c + gdim, p}, std::move(out), {points, global},
                       [points, global, n, c, p, gdim](const Tensor& result) {
                           const auto g = result.grad();
                           if (points.requires_grad()) {
                               auto d = points.grad_buffer();
                               for (std::size_t b = 0; b < n; ++b) {
                                   const double* src = g.data() + b * (c + gdim) * p;
                                   double* dst = d.data() + b * c * p;
                                   for (std::size_t i = 0; i < c * p; ++i) dst[i] += src[i];
                               }
                           }
                           if (global.requires_grad()) {
                               auto d = global.grad_buffer();
                               for (std::size_t b = 0; b < n; ++b)
                                   for (std::size_t j = 0; j < gdim; ++j) {
                                       const double* src = g.data() + (b * (c + gdim) + c + j) * p;
                                       double acc = 0.0;
                                       for (std::size_t i = 0; i < p; ++i) acc += src[i];
                                       d[b * gdim + j] += acc;
                                   }
                           }
                       });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
    require_rank(x, 2, "linear", "input");
    require_rank(weight, 2, "linear", "weight");
    require_axis("linear", "weight", 1, weight.dim(1), x.dim(1));
    if (bias.defined()) {
        require_rank(bias, 1, "linear", "bias");
        require_axis("linear", "bias", 0, bias.dim(0), weight.dim(0));
    }
    const std::size_t n = x.dim(0), in_dim = x.dim(1), out_dim = weight.dim(0);
    const auto xv = x.data(), wv = weight.data();
    std::vector<double> out(n * out_dim);
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t o = 0; o < out_dim; ++o) {
            double acc = bias.defined() ? bias.data()[o] : 0.0;
            const double* wrow = wv.data() + o * in_dim;
            const double* xrow = xv.data() + b * in_dim;
            for (std::size_t i = 0; i < in_dim; ++i) acc += wrow[i] * xrow[i];
            out[b * out_dim + o] = acc;
        }
    std::vector<Tensor> inputs{x, weight};
    if (bias.defined()) inputs.push_back(bias);
    return make_result(Shape{n, out_dim}, std::move(out), std::move(inputs),
                       [x, weight, bias, n, in_dim, out_dim](const Tensor& result) {
                           const auto g = result.grad();
                           const auto xv = x.data(), wv = weight.data();
                           if (x.requires_grad()) {
                               auto d = x.grad_buffer();
                               for (std::size_t b = 0; b < n; ++b)
                                   for (std::size_t o = 0; o < out_dim; ++o) {
                                       const double go = g[b * out_dim + o];
                                       const double* wrow = wv.data() + o * in_dim;
                                       double* drow = d.data() + b * in_dim;
                                       for (std::size_t i = 0; i < in_dim; ++i) drow[i] += go * wrow[i];
                                   }
                           }
                           if (weight.requires_grad()) {
                               auto d = weight.grad_buffer();
                               for (std::size_t b = 0; b < n; ++b)
                                   for (std::size_t o = 0; o < out_dim; ++o) {
                                       const double go = g[b * out_dim + o];
                                       const double* xrow = xv.data() + b * in_dim;
                                       double* drow = d.data() + o * in_dim;
                                       for (std::size_t i = 0; i < in_dim; ++i) drow[i] += go * xrow[i];
                                   }
                           }
                           if (bias.defined() && bias.requires_grad()) {
                               auto d = bias.grad_buffer();
                               for (std::size_t b = 0; b < n; ++b)
                                   for (std::size_t o = 0; o < out_dim; ++o) d[o] += g[b * out_dim + o];
                           }
                       });
}

Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end) {
    require_rank(x, 2, "slice_cols", "input");
    if (begin > end || end > x.dim(1)) {
        throw DimensionError("slice_cols: range [" + std::to_string(begin) + "," + std::to_string(end) +
                             ") outside axis 1 extent " + std::to_string(x.dim(1)));
    }
    const std::size_t n = x.dim(0), d = x.dim(1), width = end - begin;
    const auto in = x.data();
    std::vector<double> out(n * width);
    for (std::size_t b = 0; b < n; ++b) std::copy_n(in.data() + b * d + begin, width, out.data() + b * width);
    return make_result(Shape{n, width}, std::move(out), {x}, [x, n, d, begin, width](const Tensor& result) {
        const auto g = result.grad();
        auto dx = x.grad_buffer();
        for (std::size_t b = 0; b < n; ++b)
            for (std::size_t j = 0; j < width; ++j) dx[b * d + begin + j] += g[b * width + j];
    });
}

Tensor stack_steps(const std::vector<Tensor>& steps) {
    if (steps.empty()) throw EmptyInputError("stack_steps: no steps");
    for (const auto& s : steps) {
        require_rank(s, 2, "stack_steps", "step");
        require_axis("stack_steps", "step", 0, s.dim(0), steps.front().dim(0));
        require_axis("stack_steps", "step", 1, s.dim(1), steps.front().dim(1));
    }
    const std::size_t n = steps.front().dim(0), k = steps.front().dim(1), t = steps.size();
    std::vector<double> out(n * t * k);
    for (std::size_t s = 0; s < t; ++s) {
        const auto src = steps[s].data();
        for (std::size_t b = 0; b < n; ++b) std::copy_n(src.data() + b * k, k, out.data() + (b * t + s) * k);
    }
    return make_result(Shape{n, t, k}, std::move(out), steps, [steps, n, t, k](const Tensor& result) {
        const auto g = result.grad();
        for (std::size_t s = 0; s < t; ++s) {
            if (!steps[s].requires_grad()) continue;
            auto d = steps[s].grad_buffer();
            for (std::size_t b = 0; b < n; ++b)
                for (std::size_t j = 0; j < k; ++j) d[b * k + j] += g[(b * t + s) * k + j];
        }
    });
}

LstmState lstm_cell(const Tensor& x, const LstmState& state, const LstmParams& params) {
    require_rank(x, 2, "lstm_cell", "input");
    require_rank(state.hidden, 2, "lstm_cell", "hidden state");
    require_rank(state.cell, 2, "lstm_cell", "cell state");
    const std::size_t hidden = state.hidden.dim(1);
    require_axis("lstm_cell", "cell state", 1, state.cell.dim(1), hidden);
    require_axis("lstm_cell", "cell state", 0, state.cell.dim(0), x.dim(0));
    require_axis("lstm_cell", "hidden state", 0, state.hidden.dim(0), x.dim(0));
    require_rank(params.input_weight, 2, "lstm_cell", "input weight");
    require_rank(params.hidden_weight, 2, "lstm_cell", "hidden weight");
    require_axis("lstm_cell", "input weight", 0, params.input_weight.dim(0), 4 * hidden);
    require_axis("lstm_cell", "hidden weight", 0, params.hidden_weight.dim(0), 4 * hidden);
    require_axis("lstm_cell", "hidden weight", 1, params.hidden_weight.dim(1), hidden);

    const Tensor gates = add(linear(x, params.input_weight, params.bias), linear(state.hidden, params.hidden_weight, Tensor{}));
    const Tensor input_gate = sigmoid(slice_cols(gates, 0, hidden));
    const Tensor forget_gate = sigmoid(slice_cols(gates, hidden, 2 * hidden));
    const Tensor candidate = tanh(slice_cols(gates, 2 * hidden, 3 * hidden));
    const Tensor output_gate = sigmoid(slice_cols(gates, 3 * hidden, 4 * hidden));
    Tensor cell = add(mul(forget_gate, state.cell), mul(input_gate, candidate));
    Tensor h = mul(output_gate, tanh(cell));
    return LstmState{std::move(h), std::move(cell)};
}

}  // namespace lanedet::ops
