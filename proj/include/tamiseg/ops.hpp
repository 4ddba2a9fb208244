#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <vector>

#include "autograd.hpp"

namespace tamiseg {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMatrix<T>>;

namespace detail {

struct ConvGeometry {
    int channels, height, width;
    int kernel, stride, pad, dilation;

    int out_h() const { return (height + 2 * pad - dilation * (kernel - 1) - 1) / stride + 1; }
    int out_w() const { return (width + 2 * pad - dilation * (kernel - 1) - 1) / stride + 1; }
    bool is_pointwise() const { return kernel == 1 && stride == 1 && pad == 0; }
};

// Column rows are ordered (channel, ky, kx); columns are output positions.
template <typename T>
void im2col(const T* x, const ConvGeometry& g, T* col) {
    const int oh = g.out_h(), ow = g.out_w();
    for (int c = 0; c < g.channels; ++c) {
        const T* xc = x + static_cast<std::size_t>(c) * g.height * g.width;
        for (int ky = 0; ky < g.kernel; ++ky) {
            for (int kx = 0; kx < g.kernel; ++kx) {
                T* row = col;
                col += static_cast<std::size_t>(oh) * ow;
                for (int oy = 0; oy < oh; ++oy) {
                    const int iy = oy * g.stride - g.pad + ky * g.dilation;
                    T* dst = row + static_cast<std::size_t>(oy) * ow;
                    if (iy < 0 || iy >= g.height) {
                        std::fill(dst, dst + ow, T(0));
                        continue;
                    }
                    const T* src = xc + static_cast<std::size_t>(iy) * g.width;
                    for (int ox = 0; ox < ow; ++ox) {
                        const int ix = ox * g.stride - g.pad + kx * g.dilation;
                        dst[ox] = (ix >= 0 && ix < g.width) ? src[ix] : T(0);
                    }
                }
            }
        }
    }
}

template <typename T>
void col2im(const T* col, const ConvGeometry& g, T* dx) {
    const int oh = g.out_h(), ow = g.out_w();
    for (int c = 0; c < g.channels; ++c) {
        T* xc = dx + static_cast<std::size_t>(c) * g.height * g.width;
        for (int ky = 0; ky < g.kernel; ++ky) {
            for (int kx = 0; kx < g.kernel; ++kx) {
                const T* row = col;
                col += static_cast<std::size_t>(oh) * ow;
                for (int oy = 0; oy < oh; ++oy) {
                    const int iy = oy * g.stride - g.pad + ky * g.dilation;
                    if (iy < 0 || iy >= g.height) continue;
                    const T* src = row + static_cast<std::size_t>(oy) * ow;
                    T* dst = xc + static_cast<std::size_t>(iy) * g.width;
                    for (int ox = 0; ox < ow; ++ox) {
                        const int ix = ox * g.stride - g.pad + kx * g.dilation;
                        if (ix >= 0 && ix < g.width) dst[ix] += src[ox];
                    }
                }
            }
        }
    }
}

struct InterpTable {
    std::vector<int> lo, hi;
    std::vector<double> frac;
};

// Half-pixel centres, no corner alignment.
inline InterpTable interp_table(int in, int out) {
    InterpTable t;
    t.lo.resize(out);
    t.hi.resize(out);
    t.frac.resize(out);
    const double scale = static_cast<double>(in) / out;
    for (int o = 0; o < out; ++o) {
        double src = (o + 0.5) * scale - 0.5;
        if (src < 0) src = 0;
        int i0 = std::min(static_cast<int>(src), in - 1);
        t.lo[o] = i0;
        t.hi[o] = std::min(i0 + 1, in - 1);
        t.frac[o] = src - i0;
    }
    return t;
}

}  // namespace detail

/// 2-D convolution. `weight` is (out, in, k, k); `bias` is (1, out, 1, 1) or undefined.
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, int stride = 1,
              int pad = 0, int dilation = 1) {
    const Shape xs = x.shape(), ws = weight.shape();
    if (ws.h != ws.w) throw ShapeError("conv2d: non-square kernel " + ws.str());
    if (xs.c != ws.c)
        throw ShapeError("conv2d: input has " + std::to_string(xs.c) + " channels, kernel expects " +
                         std::to_string(ws.c));
    if (bias.defined() && bias.shape() != Shape{1, ws.n, 1, 1})
        throw ShapeError("conv2d: bias shape " + bias.shape().str());
    const detail::ConvGeometry g{xs.c, xs.h, xs.w, ws.h, stride, pad, dilation};
    const int oh = g.out_h(), ow = g.out_w();
    if (oh <= 0 || ow <= 0) throw ShapeError("conv2d: empty output for input " + xs.str());
    const int cout = ws.n, krows = xs.c * ws.h * ws.w, opix = oh * ow;

    Tensor<T> out(Shape{xs.n, cout, oh, ow});
    ConstMatMap<T> wm(weight.value().data(), cout, krows);
    typename Tensor<T>::Storage col(g.is_pointwise() ? 0 : static_cast<std::size_t>(krows) * opix);
    for (int n = 0; n < xs.n; ++n) {
        const T* cp = x.value().plane(n, 0);
        if (!g.is_pointwise()) {
            detail::im2col(cp, g, col.data());
            cp = col.data();
        }
        MatMap<T> om(out.plane(n, 0), cout, opix);
        om.noalias() = wm * ConstMatMap<T>(cp, krows, opix);
        if (bias.defined())
            for (int o = 0; o < cout; ++o) om.row(o).array() += bias.value()[o];
    }

    std::vector<Var<T>> inputs{x, weight};
    if (bias.defined()) inputs.push_back(bias);
    return make_result<T>(std::move(out), inputs, [x, weight, bias, g](Node<T>& self) {
        const Shape xs = x.shape(), ws = weight.shape();
        const int oh = g.out_h(), ow = g.out_w();
        const int cout = ws.n, krows = xs.c * ws.h * ws.w, opix = oh * ow;
        ConstMatMap<T> wm(weight.value().data(), cout, krows);
        typename Tensor<T>::Storage col(static_cast<std::size_t>(krows) * opix);
        for (int n = 0; n < xs.n; ++n) {
            ConstMatMap<T> dout(self.grad.plane(n, 0), cout, opix);
            if (weight.requires_grad()) {
                const T* cp = x.value().plane(n, 0);
                if (!g.is_pointwise()) {
                    detail::im2col(cp, g, col.data());
                    cp = col.data();
                }
                MatMap<T> dw(weight.node()->grad_buffer().data(), cout, krows);
                dw.noalias() += dout * ConstMatMap<T>(cp, krows, opix).transpose();
            }
            if (bias.defined() && bias.requires_grad()) {
                auto& db = bias.node()->grad_buffer();
                for (int o = 0; o < cout; ++o) db[o] += dout.row(o).sum();
            }
            if (x.requires_grad()) {
                T* dx = x.node()->grad_buffer().plane(n, 0);
                if (g.is_pointwise()) {
                    MatMap<T>(dx, krows, opix).noalias() += wm.transpose() * dout;
                } else {
                    MatMap<T>(col.data(), krows, opix).noalias() = wm.transpose() * dout;
                    detail::col2im(col.data(), g, dx);
                }
            }
        }
    });
}

/// Bilinear resize to (out_h, out_w) with half-pixel centres.
template <typename T>
Var<T> resize_bilinear(const Var<T>& x, int out_h, int out_w) {
    const Shape s = x.shape();
    if (out_h <= 0 || out_w <= 0) throw ShapeError("resize_bilinear: non-positive target size");
    if (s.h == out_h && s.w == out_w) return x;
    auto ty = std::make_shared<detail::InterpTable>(detail::interp_table(s.h, out_h));
    auto tx = std::make_shared<detail::InterpTable>(detail::interp_table(s.w, out_w));
    Tensor<T> out(Shape{s.n, s.c, out_h, out_w});
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c) {
            const T* src = x.value().plane(n, c);
            T* dst = out.plane(n, c);
            for (int oy = 0; oy < out_h; ++oy) {
                const T fy = static_cast<T>(ty->frac[oy]);
                const T* r0 = src + static_cast<std::size_t>(ty->lo[oy]) * s.w;
                const T* r1 = src + static_cast<std::size_t>(ty->hi[oy]) * s.w;
                for (int ox = 0; ox < out_w; ++ox) {
                    const T fx = static_cast<T>(tx->frac[ox]);
                    const int x0 = tx->lo[ox], x1 = tx->hi[ox];
                    const T top = r0[x0] + fx * (r0[x1] - r0[x0]);
                    const T bot = r1[x0] + fx * (r1[x1] - r1[x0]);
                    dst[oy * out_w + ox] = top + fy * (bot - top);
                }
            }
        }
    return make_result<T>(std::move(out), {x}, [x, ty, tx](Node<T>& self) {
        const Shape s = x.shape();
        const int out_h = self.value.shape().h, out_w = self.value.shape().w;
        auto& gx = x.node()->grad_buffer();
        for (int n = 0; n < s.n; ++n)
            for (int c = 0; c < s.c; ++c) {
                const T* go = self.grad.plane(n, c);
                T* gi = gx.plane(n, c);
                for (int oy = 0; oy < out_h; ++oy) {
                    const T fy = static_cast<T>(ty->frac[oy]);
                    T* r0 = gi + static_cast<std::size_t>(ty->lo[oy]) * s.w;
                    T* r1 = gi + static_cast<std::size_t>(ty->hi[oy]) * s.w;
                    for (int ox = 0; ox < out_w; ++ox) {
                        const T fx = static_cast<T>(tx->frac[ox]);
                        const int x0 = tx->lo[ox], x1 = tx->hi[ox];
                        const T gv = go[oy * out_w + ox];
                        r0[x0] += gv * (1 - fy) * (1 - fx);
                        r0[x1] += gv * (1 - fy) * fx;
                        r1[x0] += gv * fy * (1 - fx);
                        r1[x1] += gv * fy * fx;
                    }
                }
            }
    });
}

template <typename T>
Var<T> upsample(const Var<T>& x, int factor) {
    return resize_bilinear(x, x.shape().h * factor, x.shape().w * factor);
}

template <typename T>
Var<T> relu(const Var<T>& x) {
    Tensor<T> out = x.value();
    for (auto& v : out.values()) v = v > T(0) ? v : T(0);
    return make_result<T>(std::move(out), {x}, [x](Node<T>& self) {
        auto& gx = x.node()->grad_buffer();
        for (std::size_t i = 0; i < gx.size(); ++i)
            if (self.value[i] > T(0)) gx[i] += self.grad[i];
    });
}

template <typename T>
Var<T> sigmoid(const Var<T>& x) {
    Tensor<T> out = x.value();
    for (auto& v : out.values()) v = T(1) / (T(1) + std::exp(-v));
    return make_result<T>(std::move(out), {x}, [x](Node<T>& self) {
        auto& gx = x.node()->grad_buffer();
        for (std::size_t i = 0; i < gx.size(); ++i) {
            const T s = self.value[i];
            gx[i] += self.grad[i] * s * (T(1) - s);
        }
    });
}

/// Elementwise sum of equally shaped variables.
template <typename T>
Var<T> add(const std::vector<Var<T>>& xs) {
    if (xs.empty()) throw ShapeError("add: no operands");
    Tensor<T> out = xs[0].value();
    for (std::size_t k = 1; k < xs.size(); ++k) out += xs[k].value();
    return make_result<T>(std::move(out), xs, [xs](Node<T>& self) {
        for (const auto& x : xs)
            if (x.requires_grad()) x.node()->grad_buffer() += self.grad;
    });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
    return add<T>(std::vector<Var<T>>{a, b});
}

template <typename T>
Var<T> scale(const Var<T>& x, T factor) {
    Tensor<T> out = x.value();
    for (auto& v : out.values()) v *= factor;
    return make_result<T>(std::move(out), {x}, [x, factor](Node<T>& self) {
        auto& gx = x.node()->grad_buffer();
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += factor * self.grad[i];
    });
}

/// Mean of all elements, as a scalar.
template <typename T>
Var<T> mean(const Var<T>& x) {
    T sum = 0;
    for (T v : x.value().values()) sum += v;
    const T inv = T(1) / static_cast<T>(x.value().size());
    return make_result<T>(Tensor<T>(Shape{1, 1, 1, 1}, sum * inv), {x}, [x, inv](Node<T>& self) {
        auto& gx = x.node()->grad_buffer();
        const T g = self.grad[0] * inv;
        for (auto& v : gx.values()) v += g;
    });
}

template <typename T>
Var<T> concat_channels(const std::vector<Var<T>>& xs) {
    if (xs.empty()) throw ShapeError("concat_channels: no operands");
    Shape s = xs[0].shape();
    s.c = 0;
    for (const auto& x : xs) {
        const Shape& q = x.shape();
        if (q.n != s.n || q.h != s.h || q.w != s.w)
            throw ShapeError("concat_channels: spatial mismatch " + q.str() + " vs " +
                             xs[0].shape().str());
        s.c += q.c;
    }
    Tensor<T> out(s);
    for (int n = 0; n < s.n; ++n) {
        int c0 = 0;
        for (const auto& x : xs) {
            const T* src = x.value().plane(n, 0);
            std::copy(src, src + x.shape().c * s.plane(), out.plane(n, c0));
            c0 += x.shape().c;
        }
    }
    return make_result<T>(std::move(out), xs, [xs](Node<T>& self) {
        const Shape s = self.value.shape();
        for (int n = 0; n < s.n; ++n) {
            int c0 = 0;
            for (const auto& x : xs) {
                const std::size_t len = x.shape().c * s.plane();
                if (x.requires_grad()) {
                    const T* src = self.grad.plane(n, c0);
                    T* dst = x.node()->grad_buffer().plane(n, 0);
                    for (std::size_t i = 0; i < len; ++i) dst[i] += src[i];
                }
                c0 += x.shape().c;
            }
        }
    });
}

/// (N,C,H,W) -> (N,C,1,1) spatial mean.
template <typename T>
Var<T> global_avg_pool(const Var<T>& x) {
    const Shape s = x.shape();
    Tensor<T> out(Shape{s.n, s.c, 1, 1});
    const T inv = T(1) / static_cast<T>(s.plane());
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c) {
            const T* p = x.value().plane(n, c);
            T sum = 0;
            for (std::size_t i = 0; i < s.plane(); ++i) sum += p[i];
            out.at(n, c, 0, 0) = sum * inv;
        }
    return make_result<T>(std::move(out), {x}, [x, inv](Node<T>& self) {
        const Shape s = x.shape();
        auto& gx = x.node()->grad_buffer();
        for (int n = 0; n < s.n; ++n)
            for (int c = 0; c < s.c; ++c) {
                const T g = self.grad.at(n, c, 0, 0) * inv;
                T* p = gx.plane(n, c);
                for (std::size_t i = 0; i < s.plane(); ++i) p[i] += g;
            }
    });
}

/// 1-D convolution along the channel axis of an (N,C,1,1) descriptor, zero padded,
/// kernel (1,1,1,k) with odd k. No bias.
template <typename T>
Var<T> channel_conv1d(const Var<T>& desc, const Var<T>& kernel) {
    const Shape s = desc.shape();
    const int k = kernel.shape().w;
    if (s.h != 1 || s.w != 1) throw ShapeError("channel_conv1d: expects (N,C,1,1)");
    if (k % 2 == 0 || kernel.value().size() != static_cast<std::size_t>(k))
        throw ShapeError("channel_conv1d: kernel must be odd-length (1,1,1,k)");
    const int half = k / 2;
    Tensor<T> out(s);
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c) {
            T acc = 0;
            for (int j = 0; j < k; ++j) {
                const int src = c + j - half;
                if (src >= 0 && src < s.c) acc += kernel.value()[j] * desc.value().at(n, src, 0, 0);
            }
            out.at(n, c, 0, 0) = acc;
        }
    return make_result<T>(std::move(out), {desc, kernel}, [desc, kernel, k, half](Node<T>& self) {
        const Shape s = desc.shape();
        for (int n = 0; n < s.n; ++n)
            for (int c = 0; c < s.c; ++c) {
                const T g = self.grad.at(n, c, 0, 0);
                for (int j = 0; j < k; ++j) {
                    const int src = c + j - half;
                    if (src < 0 || src >= s.c) continue;
                    if (kernel.requires_grad())
                        kernel.node()->grad_buffer()[j] += g * desc.value().at(n, src, 0, 0);
                    if (desc.requires_grad())
                        desc.node()->grad_buffer().at(n, src, 0, 0) += g * kernel.value()[j];
                }
            }
    });
}

/// x * gate with gate (N,C,1,1) broadcast over space.
template <typename T>
Var<T> mul_channel_gate(const Var<T>& x, const Var<T>& gate) {
    const Shape s = x.shape();
    if (gate.shape() != Shape{s.n, s.c, 1, 1})
        throw ShapeError("mul_channel_gate: gate shape " + gate.shape().str());
    Tensor<T> out = x.value();
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c) {
            const T g = gate.value().at(n, c, 0, 0);
            T* p = out.plane(n, c);
            for (std::size_t i = 0; i < s.plane(); ++i) p[i] *= g;
        }
    return make_result<T>(std::move(out), {x, gate}, [x, gate](Node<T>& self) {
        const Shape s = x.shape();
        for (int n = 0; n < s.n; ++n)
            for (int c = 0; c < s.c; ++c) {
                const T* go = self.grad.plane(n, c);
                const T* xv = x.value().plane(n, c);
                const T g = gate.value().at(n, c, 0, 0);
                if (x.requires_grad()) {
                    T* gx = x.node()->grad_buffer().plane(n, c);
                    for (std::size_t i = 0; i < s.plane(); ++i) gx[i] += go[i] * g;
                }
                if (gate.requires_grad()) {
                    T acc = 0;
                    for (std::size_t i = 0; i < s.plane(); ++i) acc += go[i] * xv[i];
                    gate.node()->grad_buffer().at(n, c, 0, 0) += acc;
                }
            }
    });
}

/// x * gate with gate (N,1,H,W) broadcast over channels.
template <typename T>
Var<T> mul_spatial_gate(const Var<T>& x, const Var<T>& gate) {
    const Shape s = x.shape();
    if (gate.shape() != Shape{s.n, 1, s.h, s.w})
        throw ShapeError("mul_spatial_gate: gate shape " + gate.shape().str());
    Tensor<T> out = x.value();
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c) {
            const T* g = gate.value().plane(n, 0);
            T* p = out.plane(n, c);
            for (std::size_t i = 0; i < s.plane(); ++i) p[i] *= g[i];
        }
    return make_result<T>(std::move(out), {x, gate}, [x, gate](Node<T>& self) {
        const Shape s = x.shape();
        for (int n = 0; n < s.n; ++n) {
            const T* g = gate.value().plane(n, 0);
            for (int c = 0; c < s.c; ++c) {
                const T* go = self.grad.plane(n, c);
                if (x.requires_grad()) {
                    T* gx = x.node()->grad_buffer().plane(n, c);
                    for (std::size_t i = 0; i < s.plane(); ++i) gx[i] += go[i] * g[i];
                }
                if (gate.requires_grad()) {
                    const T* xv = x.value().plane(n, c);
                    T* gg = gate.node()->grad_buffer().plane(n, 0);
                    for (std::size_t i = 0; i < s.plane(); ++i) gg[i] += go[i] * xv[i];
                }
            }
        }
    });
}

/// (N,C,H,W) -> (N,2,H,W): channel mean and channel max at every position.
template <typename T>
Var<T> channel_avg_max(const Var<T>& x) {
    const Shape s = x.shape();
    Tensor<T> out(Shape{s.n, 2, s.h, s.w});
    auto argmax = std::make_shared<std::vector<int>>(static_cast<std::size_t>(s.n) * s.plane());
    const T inv = T(1) / static_cast<T>(s.c);
    for (int n = 0; n < s.n; ++n)
        for (std::size_t i = 0; i < s.plane(); ++i) {
            T sum = 0, best = x.value().plane(n, 0)[i];
            int arg = 0;
            for (int c = 0; c < s.c; ++c) {
                const T v = x.value().plane(n, c)[i];
                sum += v;
                if (v > best) {
                    best = v;
                    arg = c;
                }
            }
            out.plane(n, 0)[i] = sum * inv;
            out.plane(n, 1)[i] = best;
            (*argmax)[n * s.plane() + i] = arg;
        }
    return make_result<T>(std::move(out), {x}, [x, argmax, inv](Node<T>& self) {
        const Shape s = x.shape();
        auto& gx = x.node()->grad_buffer();
        for (int n = 0; n < s.n; ++n)
            for (std::size_t i = 0; i < s.plane(); ++i) {
                const T ga = self.grad.plane(n, 0)[i] * inv;
                for (int c = 0; c < s.c; ++c) gx.plane(n, c)[i] += ga;
                gx.plane(n, (*argmax)[n * s.plane() + i])[i] += self.grad.plane(n, 1)[i];
            }
    });
}

}  // namespace tamiseg
