#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "layers.hpp"
#include "rng.hpp"
#include "synth_data.hpp"

namespace tamiseg {

/// L x C token matrix stored as a (1,1,L,C) tensor.
template <typename T>
struct TextEmbedding {
    Tensor<T> matrix;
    std::vector<std::string> tokens;

    int length() const { return matrix.shape().h; }
    int dim() const { return matrix.shape().w; }
};

/// A frozen prompt encoder.
template <typename T>
class TextModel {
public:
    virtual ~TextModel() = default;
    virtual std::string name() const = 0;
    virtual std::uint64_t seed() const = 0;
    virtual int dim() const = 0;
    virtual TextEmbedding<T> embed(const std::string& prompt) const = 0;

    std::string identity() const { return name() + ":" + std::to_string(seed()); }
};

/// Stand-in text encoder: each token maps to a fixed Gaussian vector keyed by the
/// token's hash and the encoder seed.
template <typename T>
class HashTextEncoder final : public TextModel<T> {
public:
    explicit HashTextEncoder(std::uint64_t seed, int dim = 32) : seed_(seed), dim_(dim) {
        if (dim <= 0) throw ConfigError("text embedding dimension must be positive");
    }

    std::string name() const override { return "hash"; }
    std::uint64_t seed() const override { return seed_; }
    int dim() const override { return dim_; }

    TextEmbedding<T> embed(const std::string& prompt) const override {
        TextEmbedding<T> e;
        e.tokens = tokenize(prompt);
        if (e.tokens.empty()) throw ConfigError("cannot embed an empty prompt");
        e.matrix = Tensor<T>(Shape{1, 1, static_cast<int>(e.tokens.size()), dim_});
        for (std::size_t l = 0; l < e.tokens.size(); ++l) {
            Rng rng(derive_seed(seed_, fnv1a(e.tokens[l])));
            for (int d = 0; d < dim_; ++d) e.matrix.at(0, 0, static_cast<int>(l), d) = static_cast<T>(rng.normal());
        }
        return e;
    }

private:
    std::uint64_t seed_;
    int dim_;
};

template <typename T>
std::unique_ptr<TextModel<T>> make_text_encoder(const std::string& spec, int dim) {
    const auto colon = spec.find(':');
    if (colon == std::string::npos || spec.substr(0, colon) != "hash")
        throw ConfigError("unknown text encoder '" + spec + "' (expected hash:<seed>)");
    return std::make_unique<HashTextEncoder<T>>(std::stoull(spec.substr(colon + 1)), dim);
}

/// Projections for one pyramid level: W_q (c x d), W_k (C_t x d), W_v (C_t x c),
/// each stored as a (1,1,rows,cols) parameter.
template <typename T>
struct CrossAttnParams {
    Var<T> wq, wk, wv;

    CrossAttnParams() = default;
    CrossAttnParams(ParamStore<T>& store, const std::string& name, int visual, int text, Rng& rng) {
        const int d = std::min(visual, text);
        auto init = [&](int rows, int cols) {
            Tensor<T> t(Shape{1, 1, rows, cols});
            const double sd = 1.0 / std::sqrt(static_cast<double>(rows));
            for (auto& v : t.values()) v = static_cast<T>(rng.normal() * sd);
            return t;
        };
        wq = store.add(name + ".wq", init(visual, d));
        wk = store.add(name + ".wk", init(text, d));
        // Small value projection so the aligned map starts close to the visual input.
        Tensor<T> v = init(text, visual);
        for (auto& x : v.values()) x *= T(0.1);
        wv = store.add(name + ".wv", std::move(v));
    }

    int visual_dim() const { return wq.shape().h; }
    int key_dim() const { return wq.shape().w; }
    int text_dim() const { return wk.shape().h; }
};

namespace detail {

template <typename T>
void check_attn_shapes(const Shape& f, const CrossAttnParams<T>& p, int text_dim) {
    const Shape q = p.wq.shape(), k = p.wk.shape(), v = p.wv.shape();
    if (f.c != q.h) throw ShapeError("cross attention: feature has " + std::to_string(f.c) +
                                     " channels, W_q expects " + std::to_string(q.h));
    if (k.w != q.w) throw ShapeError("cross attention: W_q/W_k key width mismatch");
    if (k.h != text_dim || v.h != text_dim)
        throw ShapeError("cross attention: text width " + std::to_string(text_dim) + " vs W_k/W_v rows");
    if (v.w != f.c) throw ShapeError("cross attention: W_v must output the visual channel count");
}

}  // namespace detail

/// Row-stochastic attention of visual positions (queries) over text tokens (keys),
/// for sample `n`: (H*W) x L.
template <typename T>
RowMatrix<T> attention_map(const Tensor<T>& f, int n, const TextEmbedding<T>& text,
                           const CrossAttnParams<T>& p) {
    const Shape s = f.shape();
    detail::check_attn_shapes(s, p, text.dim());
    const int hw = static_cast<int>(s.plane()), d = p.key_dim();
    ConstMatMap<T> x(f.plane(n, 0), s.c, hw);
    ConstMatMap<T> tm(text.matrix.data(), text.length(), text.dim());
    const RowMatrix<T> q = x.transpose() * ConstMatMap<T>(p.wq.value().data(), s.c, d);
    const RowMatrix<T> k = tm * ConstMatMap<T>(p.wk.value().data(), text.dim(), d);
    RowMatrix<T> a = (q * k.transpose()) / std::sqrt(static_cast<T>(d));
    for (int r = 0; r < a.rows(); ++r) {
        const T mx = a.row(r).maxCoeff();
        a.row(r) = (a.row(r).array() - mx).exp();
        a.row(r) /= a.row(r).sum();
    }
    return a;
}

/// f + Softmax((f W_q)(T W_k)^T / sqrt(d)) (T W_v), per sample, reshaped back to f's
/// layout. `texts[n]` is the prompt embedding of sample n.
template <typename T>
Var<T> cross_modal_align(const Var<T>& f, const std::vector<TextEmbedding<T>>& texts,
                         const CrossAttnParams<T>& p) {
    const Shape s = f.shape();
    if (static_cast<int>(texts.size()) != s.n)
        throw ShapeError("cross attention: need one text embedding per sample");
    const int hw = static_cast<int>(s.plane());
    auto maps = std::make_shared<std::vector<RowMatrix<T>>>();
    Tensor<T> out = f.value();
    for (int n = 0; n < s.n; ++n) {
        maps->push_back(attention_map(f.value(), n, texts[n], p));
        ConstMatMap<T> tm(texts[n].matrix.data(), texts[n].length(), texts[n].dim());
        const RowMatrix<T> v = tm * ConstMatMap<T>(p.wv.value().data(), texts[n].dim(), s.c);
        MatMap<T>(out.plane(n, 0), s.c, hw).noalias() += (maps->back() * v).transpose();
    }
    return make_result<T>(std::move(out), {f, p.wq, p.wk, p.wv}, [f, texts, p, maps](Node<T>& self) {
        const Shape s = f.shape();
        const int hw = static_cast<int>(s.plane()), d = p.key_dim();
        const T inv_scale = T(1) / std::sqrt(static_cast<T>(d));
        ConstMatMap<T> wq(p.wq.value().data(), s.c, d);
        for (int n = 0; n < s.n; ++n) {
            const auto& a = (*maps)[n];
            const int tdim = texts[n].dim(), len = texts[n].length();
            ConstMatMap<T> tm(texts[n].matrix.data(), len, tdim);
            ConstMatMap<T> wk(p.wk.value().data(), tdim, d);
            ConstMatMap<T> wv(p.wv.value().data(), tdim, s.c);
            ConstMatMap<T> x(f.value().plane(n, 0), s.c, hw);  // x^T is (hw x c)
            const RowMatrix<T> dout = ConstMatMap<T>(self.grad.plane(n, 0), s.c, hw).transpose();
            const RowMatrix<T> v = tm * wv;
            const RowMatrix<T> k = tm * wk;
            const RowMatrix<T> q = x.transpose() * wq;
            // Softmax backward.
            const RowMatrix<T> da = dout * v.transpose();
            RowMatrix<T> ds = a.cwiseProduct(da);
            for (int r = 0; r < ds.rows(); ++r) ds.row(r) -= a.row(r) * ds.row(r).sum();
            ds *= inv_scale;
            const RowMatrix<T> dq = ds * k;
            if (p.wv.requires_grad())
                MatMap<T>(p.wv.node()->grad_buffer().data(), tdim, s.c).noalias() +=
                    tm.transpose() * (a.transpose() * dout);
            if (p.wk.requires_grad())
                MatMap<T>(p.wk.node()->grad_buffer().data(), tdim, d).noalias() +=
                    tm.transpose() * (ds.transpose() * q);
            if (p.wq.requires_grad())
                MatMap<T>(p.wq.node()->grad_buffer().data(), s.c, d).noalias() += x * dq;
            if (f.requires_grad()) {
                MatMap<T> gx(f.node()->grad_buffer().plane(n, 0), s.c, hw);
                gx += ConstMatMap<T>(self.grad.plane(n, 0), s.c, hw);
                gx.noalias() += (dq * wq.transpose()).transpose();
            }
        }
    });
}

}  // namespace tamiseg
