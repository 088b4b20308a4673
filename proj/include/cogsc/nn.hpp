#pragma once

// Spatial and feature-map operators on [C x H x W] tensors.

#include "cogsc/tensor.hpp"

namespace cogsc {

namespace detail {

struct ConvGeom {
    std::size_t cin, h, w, cout, k, stride, pad, oh, ow;
};

// Convolutions run as im2col + dense products. Column layout:
// cols[(ci * k + ky) * k + kx][oy * ow + ox] = x[ci, oy * s + ky - p, ox * s + kx - p] (0 outside).

inline std::vector<double> im2col(const ConvGeom& g, const double* x) {
    const std::size_t rows = g.cin * g.k * g.k, cols = g.oh * g.ow;
    std::vector<double> out(rows * cols, 0.0);
    for (std::size_t ci = 0; ci < g.cin; ++ci)
        for (std::size_t ky = 0; ky < g.k; ++ky)
            for (std::size_t kx = 0; kx < g.k; ++kx) {
                double* row = out.data() + ((ci * g.k + ky) * g.k + kx) * cols;
                for (std::size_t oy = 0; oy < g.oh; ++oy) {
                    const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
                    if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
                    const double* xrow = x + (ci * g.h + static_cast<std::size_t>(iy)) * g.w;
                    for (std::size_t ox = 0; ox < g.ow; ++ox) {
                        const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
                        if (ix >= 0 && ix < static_cast<long>(g.w)) row[oy * g.ow + ox] = xrow[ix];
                    }
                }
            }
    return out;
}

inline void col2im(const ConvGeom& g, const std::vector<double>& in, double* x) {
    const std::size_t cols = g.oh * g.ow;
    for (std::size_t ci = 0; ci < g.cin; ++ci)
        for (std::size_t ky = 0; ky < g.k; ++ky)
            for (std::size_t kx = 0; kx < g.k; ++kx) {
                const double* row = in.data() + ((ci * g.k + ky) * g.k + kx) * cols;
                for (std::size_t oy = 0; oy < g.oh; ++oy) {
                    const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
                    if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
                    double* xrow = x + (ci * g.h + static_cast<std::size_t>(iy)) * g.w;
                    for (std::size_t ox = 0; ox < g.ow; ++ox) {
                        const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
                        if (ix >= 0 && ix < static_cast<long>(g.w)) xrow[ix] += row[oy * g.ow + ox];
                    }
                }
            }
}

// Cross-correlation of x[cin,h,w] with wt[cout,cin,k,k] accumulated into y[cout,oh,ow].
inline void conv_accumulate(const ConvGeom& g, const double* x, const double* wt, double* y) {
    const std::size_t r = g.cin * g.k * g.k, p = g.oh * g.ow;
    const auto cols = im2col(g, x);
    for (std::size_t co = 0; co < g.cout; ++co) {
        double* yrow = y + co * p;
        for (std::size_t i = 0; i < r; ++i) {
            const double wv = wt[co * r + i];
            if (wv == 0.0) continue;
            const double* crow = cols.data() + i * p;
            for (std::size_t j = 0; j < p; ++j) yrow[j] += wv * crow[j];
        }
    }
}

// Adjoint of conv_accumulate w.r.t. x: scatters gy[cout,oh,ow] into gx[cin,h,w].
inline void conv_adjoint_input(const ConvGeom& g, const double* gy, const double* wt, double* gx) {
    const std::size_t r = g.cin * g.k * g.k, p = g.oh * g.ow;
    std::vector<double> cols(r * p, 0.0);
    for (std::size_t co = 0; co < g.cout; ++co) {
        const double* grow = gy + co * p;
        for (std::size_t i = 0; i < r; ++i) {
            const double wv = wt[co * r + i];
            if (wv == 0.0) continue;
            double* crow = cols.data() + i * p;
            for (std::size_t j = 0; j < p; ++j) crow[j] += wv * grow[j];
        }
    }
    col2im(g, cols, gx);
}

// Weight gradient: gw[co,ci,ky,kx] += sum gy[co,oy,ox] * x[ci,iy,ix].
inline void conv_adjoint_weight(const ConvGeom& g, const double* gy, const double* x, double* gw) {
    const std::size_t r = g.cin * g.k * g.k, p = g.oh * g.ow;
    const auto cols = im2col(g, x);
    for (std::size_t co = 0; co < g.cout; ++co) {
        const double* grow = gy + co * p;
        for (std::size_t i = 0; i < r; ++i) {
            const double* crow = cols.data() + i * p;
            double a0 = 0, a1 = 0, a2 = 0, a3 = 0;
            std::size_t j = 0;
            for (; j + 4 <= p; j += 4) {
                a0 += grow[j] * crow[j];
                a1 += grow[j + 1] * crow[j + 1];
                a2 += grow[j + 2] * crow[j + 2];
                a3 += grow[j + 3] * crow[j + 3];
            }
            for (; j < p; ++j) a0 += grow[j] * crow[j];
            gw[co * r + i] += (a0 + a1) + (a2 + a3);
        }
    }
}

inline void check_conv_args(const Tensor& x, const Tensor& w, std::size_t stride, std::size_t pad,
                            const char* op) {
    if (x.rank() != 3) throw ShapeError(std::string(op) + ": input must be [C x H x W], got " + shape_str(x.shape()));
    if (w.rank() != 4 || w.dim(2) != w.dim(3))
        throw ShapeError(std::string(op) + ": weight must be [A x B x K x K], got " + shape_str(w.shape()));
    if (stride < 1) throw ShapeError(std::string(op) + ": stride must be >= 1");
    const std::size_t k = w.dim(2);
    if (x.dim(1) + 2 * pad < k || x.dim(2) + 2 * pad < k)
        throw ShapeError(std::string(op) + ": kernel " + std::to_string(k) + " larger than padded input " +
                         shape_str(x.shape()));
}

inline void add_channel_bias(std::vector<double>& y, const Tensor& b, std::size_t c, std::size_t plane) {
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t i = 0; i < plane; ++i) y[ch * plane + i] += b[ch];
}

inline void bias_grad(const Tensor& b, const std::vector<double>& gy, std::size_t c, std::size_t plane) {
    if (!b.defined() || !b.requires_grad()) return;
    auto& gb = b.node()->ensure_grad();
    for (std::size_t ch = 0; ch < c; ++ch) {
        double s = 0;
        for (std::size_t i = 0; i < plane; ++i) s += gy[ch * plane + i];
        gb[ch] += s;
    }
}

}  // namespace detail

/// Cross-correlation. x[Cin x H x W], w[Cout x Cin x K x K], optional b[Cout].
inline Tensor conv2d(const Tensor& x, const Tensor& w, std::size_t stride, std::size_t padding,
                     const Tensor& b = {}) {
    detail::check_conv_args(x, w, stride, padding, "conv2d");
    if (w.dim(1) != x.dim(0))
        throw ShapeError("conv2d: weight " + shape_str(w.shape()) + " expects " + std::to_string(w.dim(1)) +
                         " input channels, input is " + shape_str(x.shape()));
    if (b.defined() && b.size() != w.dim(0))
        throw ShapeError("conv2d: bias " + shape_str(b.shape()) + " vs weight " + shape_str(w.shape()));
    detail::ConvGeom g{x.dim(0), x.dim(1), x.dim(2), w.dim(0), w.dim(2), stride, padding, 0, 0};
    g.oh = (g.h + 2 * padding - g.k) / stride + 1;
    g.ow = (g.w + 2 * padding - g.k) / stride + 1;
    std::vector<double> y(g.cout * g.oh * g.ow, 0.0);
    detail::conv_accumulate(g, x.values().data(), w.values().data(), y.data());
    if (b.defined()) detail::add_channel_bias(y, b, g.cout, g.oh * g.ow);
    std::vector<Tensor> parents{x, w};
    if (b.defined()) parents.push_back(b);
    return detail::make_result({g.cout, g.oh, g.ow}, std::move(y), parents, [x, w, b, g](detail::Node& self) {
        if (x.requires_grad())
            detail::conv_adjoint_input(g, self.grad.data(), w.values().data(), x.node()->ensure_grad().data());
        if (w.requires_grad())
            detail::conv_adjoint_weight(g, self.grad.data(), x.values().data(), w.node()->ensure_grad().data());
        detail::bias_grad(b, self.grad, g.cout, g.oh * g.ow);
    });
}

/// Transposed convolution. x[Cin x H x W], w[Cin x Cout x K x K], optional b[Cout].
/// Output spatial size is (H - 1) * stride - 2 * padding + K.
inline Tensor deconv2d(const Tensor& x, const Tensor& w, std::size_t stride, std::size_t padding,
                       const Tensor& b = {}) {
    if (x.rank() != 3) throw ShapeError("deconv2d: input must be [C x H x W], got " + shape_str(x.shape()));
    if (w.rank() != 4 || w.dim(2) != w.dim(3))
        throw ShapeError("deconv2d: weight must be [Cin x Cout x K x K], got " + shape_str(w.shape()));
    if (w.dim(0) != x.dim(0))
        throw ShapeError("deconv2d: weight " + shape_str(w.shape()) + " expects " + std::to_string(w.dim(0)) +
                         " input channels, input is " + shape_str(x.shape()));
    if (stride < 1) throw ShapeError("deconv2d: stride must be >= 1");
    const std::size_t k = w.dim(2);
    const long oh = static_cast<long>((x.dim(1) - 1) * stride + k) - 2 * static_cast<long>(padding);
    const long ow = static_cast<long>((x.dim(2) - 1) * stride + k) - 2 * static_cast<long>(padding);
    if (oh < 1 || ow < 1) throw ShapeError("deconv2d: padding too large for input " + shape_str(x.shape()));
    if (b.defined() && b.size() != w.dim(1))
        throw ShapeError("deconv2d: bias " + shape_str(b.shape()) + " vs weight " + shape_str(w.shape()));
    // The forward pass is the input-adjoint of a conv whose output is x.
    detail::ConvGeom g{w.dim(1), static_cast<std::size_t>(oh), static_cast<std::size_t>(ow), w.dim(0), k,
                       stride, padding, x.dim(1), x.dim(2)};
    std::vector<double> y(g.cin * g.h * g.w, 0.0);
    detail::conv_adjoint_input(g, x.values().data(), w.values().data(), y.data());
    if (b.defined()) detail::add_channel_bias(y, b, g.cin, g.h * g.w);
    std::vector<Tensor> parents{x, w};
    if (b.defined()) parents.push_back(b);
    return detail::make_result({g.cin, g.h, g.w}, std::move(y), parents, [x, w, b, g](detail::Node& self) {
        if (x.requires_grad())
            detail::conv_accumulate(g, self.grad.data(), w.values().data(), x.node()->ensure_grad().data());
        if (w.requires_grad())
            detail::conv_adjoint_weight(g, x.values().data(), self.grad.data(), w.node()->ensure_grad().data());
        detail::bias_grad(b, self.grad, g.cin, g.h * g.w);
    });
}

/// [C x H x W] -> [C]
inline Tensor global_average_pool(const Tensor& x) {
    require_rank(x, 3, "global_average_pool");
    const std::size_t c = x.dim(0), plane = x.dim(1) * x.dim(2);
    std::vector<double> out(c, 0.0);
    for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t i = 0; i < plane; ++i) out[ch] += x[ch * plane + i];
        out[ch] /= static_cast<double>(plane);
    }
    return detail::make_result({c}, std::move(out), {x}, [x, c, plane](detail::Node& self) {
        if (!x.requires_grad()) return;
        auto& g = x.node()->ensure_grad();
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t i = 0; i < plane; ++i) g[ch * plane + i] += self.grad[ch] / static_cast<double>(plane);
    });
}

/// Q[i,:,:] = s[i] * O[i,:,:]
inline Tensor channel_scale(const Tensor& x, const Tensor& s) {
    require_rank(x, 3, "channel_scale");
    if (s.size() != x.dim(0))
        throw ShapeError("channel_scale: " + shape_str(s.shape()) + " factors for " + shape_str(x.shape()));
    const std::size_t plane = x.dim(1) * x.dim(2);
    return reshape(row_scale(reshape(x, {x.dim(0), plane}), s), x.shape());
}

/// Nearest-neighbour upsampling by an integer factor.
inline Tensor upsample_nearest(const Tensor& x, std::size_t factor) {
    require_rank(x, 3, "upsample_nearest");
    const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2), oh = h * factor, ow = w * factor;
    std::vector<double> out(c * oh * ow);
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t y = 0; y < oh; ++y)
            for (std::size_t xx = 0; xx < ow; ++xx) out[(ch * oh + y) * ow + xx] = x[(ch * h + y / factor) * w + xx / factor];
    return detail::make_result({c, oh, ow}, std::move(out), {x}, [x, c, h, w, oh, ow, factor](detail::Node& self) {
        if (!x.requires_grad()) return;
        auto& g = x.node()->ensure_grad();
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t y = 0; y < oh; ++y)
                for (std::size_t xx = 0; xx < ow; ++xx)
                    g[(ch * h + y / factor) * w + xx / factor] += self.grad[(ch * oh + y) * ow + xx];
    });
}

/// Non-overlapping average pooling by an integer factor (dims must divide).
inline Tensor avg_pool(const Tensor& x, std::size_t factor) {
    require_rank(x, 3, "avg_pool");
    const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
    if (h % factor || w % factor) throw ShapeError("avg_pool: " + shape_str(x.shape()) + " not divisible by factor");
    const std::size_t oh = h / factor, ow = w / factor;
    const double inv = 1.0 / static_cast<double>(factor * factor);
    std::vector<double> out(c * oh * ow, 0.0);
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t xx = 0; xx < w; ++xx) out[(ch * oh + y / factor) * ow + xx / factor] += inv * x[(ch * h + y) * w + xx];
    return detail::make_result({c, oh, ow}, std::move(out), {x}, [x, c, h, w, oh, ow, factor, inv](detail::Node& self) {
        if (!x.requires_grad()) return;
        auto& g = x.node()->ensure_grad();
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t y = 0; y < h; ++y)
                for (std::size_t xx = 0; xx < w; ++xx)
                    g[(ch * h + y) * w + xx] += inv * self.grad[(ch * oh + y / factor) * ow + xx / factor];
    });
}

/// Cell rectangle [y0, y1) x [x0, x1) on a feature map.
struct CellRect {
    std::size_t y0, y1, x0, x1;
};

/// Average-pools region r of x[C x H x W] into a bins x bins grid -> [C x bins x bins].
/// Every bin covers at least one cell.
inline Tensor roi_average_pool(const Tensor& x, CellRect r, std::size_t bins = 2) {
    require_rank(x, 3, "roi_average_pool");
    const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
    r.y1 = std::min(std::max(r.y1, r.y0 + 1), h);
    r.x1 = std::min(std::max(r.x1, r.x0 + 1), w);
    r.y0 = std::min(r.y0, r.y1 - 1);
    r.x0 = std::min(r.x0, r.x1 - 1);
    auto edges = [bins](std::size_t a, std::size_t b, std::size_t i) {
        const std::size_t len = b - a;
        std::size_t lo = a + (i * len) / bins;
        std::size_t hi = a + ((i + 1) * len + bins - 1) / bins;
        if (hi <= lo) hi = lo + 1;
        return std::pair{lo, std::min(hi, b)};
    };
    // Per output cell: list of input offsets (within one channel plane).
    std::vector<std::vector<std::size_t>> cells(bins * bins);
    for (std::size_t by = 0; by < bins; ++by)
        for (std::size_t bx = 0; bx < bins; ++bx) {
            auto [ya, yb] = edges(r.y0, r.y1, by);
            auto [xa, xb] = edges(r.x0, r.x1, bx);
            for (std::size_t y = ya; y < yb; ++y)
                for (std::size_t xx = xa; xx < xb; ++xx) cells[by * bins + bx].push_back(y * w + xx);
        }
    const std::size_t plane = h * w, ob = bins * bins;
    std::vector<double> out(c * ob, 0.0);
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t o = 0; o < ob; ++o) {
            double s = 0;
            for (auto off : cells[o]) s += x[ch * plane + off];
            out[ch * ob + o] = s / static_cast<double>(cells[o].size());
        }
    return detail::make_result({c, bins, bins}, std::move(out), {x}, [x, c, plane, ob, cells](detail::Node& self) {
        if (!x.requires_grad()) return;
        auto& g = x.node()->ensure_grad();
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t o = 0; o < ob; ++o) {
                const double gv = self.grad[ch * ob + o] / static_cast<double>(cells[o].size());
                for (auto off : cells[o]) g[ch * plane + off] += gv;
            }
    });
}

}  // namespace cogsc
