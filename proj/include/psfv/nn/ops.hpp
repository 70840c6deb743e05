#pragma once

#include "psfv/nn/tape.hpp"

#include <cmath>
#include <memory>
#include <random>

namespace psfv::nn {

struct Stride
{
    int w = 1;
    int h = 1;
};

namespace detail {

template <class Scalar>
bool any_grad(const Tape<Scalar>& t, std::initializer_list<Var<Scalar>> vs)
{
    for (auto v : vs) {
        if (t.requires_grad(v)) return true;
    }
    return false;
}

inline Index ceil_div(Index a, Index b)
{
    return (a + b - 1) / b;
}

/// Unfolds 3x3 windows (zero padding 1) into a (C*9) x (Ho*Wo) matrix.
template <class Scalar>
void im2col(const Scalar* in, Index C, Index H, Index W, Stride s, Index Ho, Index Wo, RowMatrix<Scalar>& cols)
{
    cols.setZero(C * 9, Ho * Wo);
    for (Index c = 0; c < C; ++c) {
        for (int ky = 0; ky < 3; ++ky) {
            for (int kx = 0; kx < 3; ++kx) {
                Scalar* row = cols.row(c * 9 + ky * 3 + kx).data();
                for (Index oy = 0; oy < Ho; ++oy) {
                    const Index iy = oy * s.h + ky - 1;
                    if (iy < 0 || iy >= H) continue;
                    const Scalar* src = in + (c * H + iy) * W;
                    Scalar* dst = row + oy * Wo;
                    for (Index ox = 0; ox < Wo; ++ox) {
                        const Index ix = ox * s.w + kx - 1;
                        if (ix >= 0 && ix < W) dst[ox] = src[ix];
                    }
                }
            }
        }
    }
}

/// Adjoint of im2col: scatter-adds columns back onto the input grid.
template <class Scalar>
void col2im_add(const RowMatrix<Scalar>& cols, Index C, Index H, Index W, Stride s, Index Ho, Index Wo, Scalar* out)
{
    for (Index c = 0; c < C; ++c) {
        for (int ky = 0; ky < 3; ++ky) {
            for (int kx = 0; kx < 3; ++kx) {
                const Scalar* row = cols.row(c * 9 + ky * 3 + kx).data();
                for (Index oy = 0; oy < Ho; ++oy) {
                    const Index iy = oy * s.h + ky - 1;
                    if (iy < 0 || iy >= H) continue;
                    Scalar* dst = out + (c * H + iy) * W;
                    const Scalar* src = row + oy * Wo;
                    for (Index ox = 0; ox < Wo; ++ox) {
                        const Index ix = ox * s.w + kx - 1;
                        if (ix >= 0 && ix < W) dst[ix] += src[ox];
                    }
                }
            }
        }
    }
}

template <class Scalar>
Scalar sigmoid(Scalar x)
{
    if (x >= 0) return Scalar(1) / (Scalar(1) + std::exp(-x));
    const Scalar e = std::exp(x);
    return e / (Scalar(1) + e);
}

} // namespace detail

/// 3x3 cross-correlation with zero padding 1. Input C_in x H x W, kernels
/// C_out x C_in x 3 x 3, output C_out x ceil(H/sH) x ceil(W/sW).
template <class Scalar>
Var<Scalar> conv2d(Var<Scalar> x, Var<Scalar> kernels, Var<Scalar> bias, Stride stride = {})
{
    auto& tape = *x.tape;
    const auto& in = x.value();
    const auto& k = kernels.value();
    if (in.rank() != 3) throw ShapeError("conv2d input must be C x H x W, got " + to_string(in.shape()));
    if (k.rank() != 4 || k.dim(2) != 3 || k.dim(3) != 3 || k.dim(1) != in.dim(0)) {
        throw ShapeError("conv2d kernels " + to_string(k.shape()) + " do not match input " + to_string(in.shape()));
    }
    if (bias.value().size() != k.dim(0)) throw ShapeError("conv2d bias length must equal kernel count");
    if (stride.w < 1 || stride.w > 2 || stride.h < 1 || stride.h > 2) throw ShapeError("conv2d stride must be 1 or 2");

    const Index C = in.dim(0), H = in.dim(1), W = in.dim(2), O = k.dim(0);
    const Index Ho = detail::ceil_div(H, stride.h), Wo = detail::ceil_div(W, stride.w);

    auto cols = std::make_shared<RowMatrix<Scalar>>();
    detail::im2col(in.data().data(), C, H, W, stride, Ho, Wo, *cols);

    Tensor<Scalar> out(Shape{O, Ho, Wo});
    auto om = out.matrix(O, Ho * Wo);
    om.noalias() = k.matrix(O, C * 9) * (*cols);
    om.colwise() += bias.value().data();

    const auto xi = x.index, ki = kernels.index, bi = bias.index;
    return tape.record(
        std::move(out),
        [=](Tape<Scalar>& t, std::size_t self) {
            const auto g = t.grad(self).matrix(O, Ho * Wo);
            if (t.wants_grad(ki)) t.grad(ki).matrix(O, C * 9).noalias() += g * cols->transpose();
            if (t.wants_grad(bi)) t.grad(bi).data() += g.rowwise().sum();
            if (t.wants_grad(xi)) {
                RowMatrix<Scalar> dcols = t.value(ki).matrix(O, C * 9).transpose() * g;
                detail::col2im_add(dcols, C, H, W, stride, Ho, Wo, t.grad(xi).data().data());
            }
        },
        detail::any_grad(tape, {x, kernels, bias}));
}

/// Non-overlapping 2x2 mean pooling over C x H x W with H and W even.
template <class Scalar>
Var<Scalar> avgpool2d(Var<Scalar> x)
{
    auto& tape = *x.tape;
    const auto& in = x.value();
    if (in.rank() != 3) throw ShapeError("avgpool2d input must be C x H x W");
    const Index C = in.dim(0), H = in.dim(1), W = in.dim(2);
    if (H % 2 != 0 || W % 2 != 0) throw ShapeError("avgpool2d needs even extents, got " + to_string(in.shape()));
    const Index Ho = H / 2, Wo = W / 2;

    Tensor<Scalar> out(Shape{C, Ho, Wo});
    const Scalar* src = in.data().data();
    Scalar* dst = out.data().data();
    for (Index c = 0; c < C; ++c) {
        for (Index oy = 0; oy < Ho; ++oy) {
            const Scalar* r0 = src + (c * H + 2 * oy) * W;
            const Scalar* r1 = r0 + W;
            Scalar* o = dst + (c * Ho + oy) * Wo;
            for (Index ox = 0; ox < Wo; ++ox) {
                o[ox] = (r0[2 * ox] + r0[2 * ox + 1] + r1[2 * ox] + r1[2 * ox + 1]) * Scalar(0.25);
            }
        }
    }

    const auto xi = x.index;
    return tape.record(
        std::move(out),
        [=](Tape<Scalar>& t, std::size_t self) {
            if (!t.wants_grad(xi)) return;
            const Scalar* g = t.grad(self).data().data();
            Scalar* d = t.grad(xi).data().data();
            for (Index c = 0; c < C; ++c) {
                for (Index oy = 0; oy < Ho; ++oy) {
                    Scalar* r0 = d + (c * H + 2 * oy) * W;
                    Scalar* r1 = r0 + W;
                    const Scalar* go = g + (c * Ho + oy) * Wo;
                    for (Index ox = 0; ox < Wo; ++ox) {
                        const Scalar v = go[ox] * Scalar(0.25);
                        r0[2 * ox] += v;
                        r0[2 * ox + 1] += v;
                        r1[2 * ox] += v;
                        r1[2 * ox + 1] += v;
                    }
                }
            }
        },
        tape.requires_grad(x));
}

/// weight (m x n) * input (n) + bias (m). Input of any shape is read flat.
template <class Scalar>
Var<Scalar> linear(Var<Scalar> x, Var<Scalar> weight, Var<Scalar> bias)
{
    auto& tape = *x.tape;
    const auto& w = weight.value();
    const Index n = x.value().size();
    if (w.rank() != 2 || w.dim(1) != n) {
        throw ShapeError("linear weight " + to_string(w.shape()) + " does not accept input of size " + std::to_string(n));
    }
    const Index m = w.dim(0);
    if (bias.value().size() != m) throw ShapeError("linear bias length must equal output size");

    Tensor<Scalar> out(Shape{m});
    out.data().noalias() = w.matrix(m, n) * x.value().data();
    out.data() += bias.value().data();

    const auto xi = x.index, wi = weight.index, bi = bias.index;
    return tape.record(
        std::move(out),
        [=](Tape<Scalar>& t, std::size_t self) {
            const auto& g = t.grad(self).data();
            if (t.wants_grad(wi)) t.grad(wi).matrix(m, n).noalias() += g * t.value(xi).data().transpose();
            if (t.wants_grad(bi)) t.grad(bi).data() += g;
            if (t.wants_grad(xi)) t.grad(xi).data().noalias() += t.value(wi).matrix(m, n).transpose() * g;
        },
        detail::any_grad(tape, {x, weight, bias}));
}

template <class Scalar>
Var<Scalar> relu(Var<Scalar> x)
{
    auto& tape = *x.tape;
    Tensor<Scalar> out(x.shape(), x.value().data().cwiseMax(Scalar(0)));
    const auto xi = x.index;
    return tape.record(
        std::move(out),
        [=](Tape<Scalar>& t, std::size_t self) {
            if (!t.wants_grad(xi)) return;
            t.grad(xi).data().array() +=
                (t.value(xi).data().array() > Scalar(0)).select(t.grad(self).data().array(), Scalar(0));
        },
        tape.requires_grad(x));
}

template <class Scalar>
Var<Scalar> sigmoid(Var<Scalar> x)
{
    auto& tape = *x.tape;
    Tensor<Scalar> out(x.shape(), x.value().data().unaryExpr([](Scalar v) { return detail::sigmoid(v); }));
    const auto xi = x.index;
    return tape.record(
        std::move(out),
        [=](Tape<Scalar>& t, std::size_t self) {
            if (!t.wants_grad(xi)) return;
            const auto y = t.value(self).data().array();
            t.grad(xi).data().array() += t.grad(self).data().array() * y * (Scalar(1) - y);
        },
        tape.requires_grad(x));
}

/// Elementwise product of two same-shaped values.
template <class Scalar>
Var<Scalar> hadamard(Var<Scalar> a, Var<Scalar> b)
{
    auto& tape = *a.tape;
    if (a.value().size() != b.value().size()) throw ShapeError("hadamard operands differ in size");
    Tensor<Scalar> out(a.shape(), a.value().data().cwiseProduct(b.value().data()));
    const auto ai = a.index, bi = b.index;
    return tape.record(
        std::move(out),
        [=](Tape<Scalar>& t, std::size_t self) {
            const auto& g = t.grad(self).data();
            if (t.wants_grad(ai)) t.grad(ai).data() += g.cwiseProduct(t.value(bi).data());
            if (t.wants_grad(bi)) t.grad(bi).data() += g.cwiseProduct(t.value(ai).data());
        },
        detail::any_grad(tape, {a, b}));
}

/// out[i] = x[indices[i]], shaped as `shape`.
template <class Scalar>
Var<Scalar> gather(Var<Scalar> x, std::vector<Index> indices, Shape shape)
{
    auto& tape = *x.tape;
    if (shape_size(shape) != static_cast<Index>(indices.size())) throw ShapeError("gather shape/index count mismatch");
    const auto& src = x.value().data();
    Tensor<Scalar> out(std::move(shape));
    for (std::size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] < 0 || indices[i] >= src.size()) throw ShapeError("gather index out of range");
        out[static_cast<Index>(i)] = src[indices[i]];
    }
    const auto xi = x.index;
    auto idx = std::make_shared<const std::vector<Index>>(std::move(indices));
    return tape.record(
        std::move(out),
        [=](Tape<Scalar>& t, std::size_t self) {
            if (!t.wants_grad(xi)) return;
            const auto& g = t.grad(self).data();
            auto& d = t.grad(xi).data();
            for (std::size_t i = 0; i < idx->size(); ++i) d[(*idx)[i]] += g[static_cast<Index>(i)];
        },
        tape.requires_grad(x));
}

/// Contiguous range [offset, offset + length) of the flattened value.
template <class Scalar>
Var<Scalar> slice(Var<Scalar> x, Index offset, Index length)
{
    std::vector<Index> idx(static_cast<std::size_t>(length));
    std::iota(idx.begin(), idx.end(), offset);
    return gather(x, std::move(idx), Shape{length});
}

/// Column `col` of a C x 1 x W map as a length-C vector.
template <class Scalar>
Var<Scalar> column(Var<Scalar> x, Index col)
{
    const auto& s = x.shape();
    if (s.size() != 3 || s[1] != 1) throw ShapeError("column expects C x 1 x W, got " + to_string(s));
    const Index C = s[0], W = s[2];
    if (col < 0 || col >= W) throw ShapeError("column index out of range");
    std::vector<Index> idx(static_cast<std::size_t>(C));
    for (Index c = 0; c < C; ++c) idx[static_cast<std::size_t>(c)] = c * W + col;
    return gather(x, std::move(idx), Shape{C});
}

template <class Scalar>
Var<Scalar> reshape(Var<Scalar> x, Shape shape)
{
    auto& tape = *x.tape;
    auto out = x.value().reshaped(std::move(shape));
    const auto xi = x.index;
    return tape.record(
        std::move(out),
        [=](Tape<Scalar>& t, std::size_t self) {
            if (t.wants_grad(xi)) t.grad(xi).data() += t.grad(self).data();
        },
        tape.requires_grad(x));
}

/// Inverted dropout: kept units are scaled by 1 / (1 - p) so inference needs
/// no rescaling.
template <class Scalar, class Rng>
Var<Scalar> dropout(Var<Scalar> x, double p, Rng& rng)
{
    auto& tape = *x.tape;
    std::bernoulli_distribution keep(1.0 - p);
    auto mask = std::make_shared<Vector<Scalar>>(x.value().size());
    const Scalar scale = Scalar(1.0 / (1.0 - p));
    for (Index i = 0; i < mask->size(); ++i) (*mask)[i] = keep(rng) ? scale : Scalar(0);
    Tensor<Scalar> out(x.shape(), x.value().data().cwiseProduct(*mask));
    const auto xi = x.index;
    return tape.record(
        std::move(out),
        [=](Tape<Scalar>& t, std::size_t self) {
            if (t.wants_grad(xi)) t.grad(xi).data() += t.grad(self).data().cwiseProduct(*mask);
        },
        tape.requires_grad(x));
}

inline constexpr double kBceEpsilon = 1e-7;

/// Binary cross-entropy of a probability against a 0/1 label. The
/// probability is clamped to [eps, 1 - eps]; the gradient is evaluated at the
/// clamped point and passed through the clamp.
template <class Scalar>
Var<Scalar> bce_loss(Var<Scalar> prob, double label)
{
    auto& tape = *prob.tape;
    if (prob.value().size() != 1) throw ShapeError("bce_loss expects a single probability");
    const double p = std::clamp(static_cast<double>(prob.value()[0]), kBceEpsilon, 1.0 - kBceEpsilon);
    Tensor<Scalar> out(Shape{1});
    out[0] = Scalar(-label * std::log(p) - (1.0 - label) * std::log(1.0 - p));
    const Scalar dp = Scalar(-label / p + (1.0 - label) / (1.0 - p));
    const auto pi = prob.index;
    return tape.record(
        std::move(out),
        [=](Tape<Scalar>& t, std::size_t self) {
            if (t.wants_grad(pi)) t.grad(pi)[0] += t.grad(self)[0] * dp;
        },
        tape.requires_grad(prob));
}

template <class Scalar>
struct LstmState
{
    Var<Scalar> h;
    Var<Scalar> c;
};

/// One LSTM step. `weight` is 4k x (d + k) acting on [x; h_prev] with gate
/// blocks ordered input, forget, cell, output; `bias` has length 4k.
template <class Scalar>
LstmState<Scalar> lstm_cell(Var<Scalar> x, Var<Scalar> h_prev, Var<Scalar> c_prev, Var<Scalar> weight, Var<Scalar> bias)
{
    auto& tape = *x.tape;
    const Index d = x.value().size();
    const Index k = h_prev.value().size();
    if (c_prev.value().size() != k) throw ShapeError("lstm_cell h and c sizes differ");
    const auto& w = weight.value();
    if (w.rank() != 2 || w.dim(0) != 4 * k || w.dim(1) != d + k) {
        throw ShapeError("lstm_cell weight " + to_string(w.shape()) + " does not match d=" + std::to_string(d) +
                         " k=" + std::to_string(k));
    }
    if (bias.value().size() != 4 * k) throw ShapeError("lstm_cell bias must have 4k entries");

    Vector<Scalar> xh(d + k);
    xh << x.value().data(), h_prev.value().data();
    Vector<Scalar> z = w.matrix(4 * k, d + k) * xh + bias.value().data();

    // gates = [i; f; g; o] after activation
    auto gates = std::make_shared<Vector<Scalar>>(4 * k);
    for (Index j = 0; j < k; ++j) {
        (*gates)[j] = detail::sigmoid(z[j]);
        (*gates)[k + j] = detail::sigmoid(z[k + j]);
        (*gates)[2 * k + j] = std::tanh(z[2 * k + j]);
        (*gates)[3 * k + j] = detail::sigmoid(z[3 * k + j]);
    }
    const auto i = gates->segment(0, k);
    const auto f = gates->segment(k, k);
    const auto g = gates->segment(2 * k, k);
    const auto o = gates->segment(3 * k, k);

    Tensor<Scalar> out(Shape{2 * k});
    auto c = out.data().segment(k, k);
    c = f.cwiseProduct(c_prev.value().data()) + i.cwiseProduct(g);
    out.data().segment(0, k) = o.cwiseProduct(c.array().tanh().matrix());

    const auto xi = x.index, hi = h_prev.index, ci = c_prev.index, wi = weight.index, bi = bias.index;
    auto fused = tape.record(
        std::move(out),
        [=](Tape<Scalar>& t, std::size_t self) {
            const auto& gout = t.grad(self).data();
            const auto dh = gout.segment(0, k).array();
            const auto c_new = t.value(self).data().segment(k, k).array();
            const auto ig = gates->segment(0, k).array();
            const auto fg = gates->segment(k, k).array();
            const auto gg = gates->segment(2 * k, k).array();
            const auto og = gates->segment(3 * k, k).array();
            const auto cp = t.value(ci).data().array();

            const Eigen::Array<Scalar, Eigen::Dynamic, 1> tc = c_new.tanh();
            const Eigen::Array<Scalar, Eigen::Dynamic, 1> dc =
                gout.segment(k, k).array() + dh * og * (Scalar(1) - tc.square());
            Vector<Scalar> dz(4 * k);
            dz.segment(0, k) = (dc * gg * ig * (Scalar(1) - ig)).matrix();
            dz.segment(k, k) = (dc * cp * fg * (Scalar(1) - fg)).matrix();
            dz.segment(2 * k, k) = (dc * ig * (Scalar(1) - gg.square())).matrix();
            dz.segment(3 * k, k) = (dh * tc * og * (Scalar(1) - og)).matrix();

            if (t.wants_grad(ci)) t.grad(ci).data().array() += dc * fg;
            if (t.wants_grad(bi)) t.grad(bi).data() += dz;
            if (t.wants_grad(wi)) {
                Vector<Scalar> xh_(d + k);
                xh_ << t.value(xi).data(), t.value(hi).data();
                t.grad(wi).matrix(4 * k, d + k).noalias() += dz * xh_.transpose();
            }
            if (t.wants_grad(xi) || t.wants_grad(hi)) {
                Vector<Scalar> dxh = t.value(wi).matrix(4 * k, d + k).transpose() * dz;
                if (t.wants_grad(xi)) t.grad(xi).data() += dxh.head(d);
                if (t.wants_grad(hi)) t.grad(hi).data() += dxh.tail(k);
            }
        },
        detail::any_grad(tape, {x, h_prev, c_prev, weight, bias}));

    return {slice(fused, 0, k), slice(fused, k, k)};
}

} // namespace psfv::nn
