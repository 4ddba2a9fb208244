#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "encoder.hpp"
#include "layers.hpp"
#include "rng.hpp"

namespace tamiseg {

/// Unit-norm token grids, one per pyramid level, each (N, D, H/stride, W/stride).
template <typename T>
using TeacherPyramid = std::array<Tensor<T>, 4>;

/// A frozen visual teacher. Implementations expose no trainable state.
template <typename T>
class TeacherModel {
public:
    virtual ~TeacherModel() = default;
    virtual std::string name() const = 0;
    virtual std::uint64_t seed() const = 0;
    virtual int dim() const = 0;
    /// `images` is (N,3,H,W) in [0,1].
    virtual TeacherPyramid<T> features(const Tensor<T>& images) const = 0;

    std::string identity() const { return name() + ":" + std::to_string(seed()); }
};

/// Stand-in teacher: at each level, every stride x stride patch is mapped through a
/// fixed seeded random projection of its (centred) pixels and L2-normalized.
template <typename T>
class HashTeacher final : public TeacherModel<T> {
public:
    explicit HashTeacher(std::uint64_t seed, int dim = 32) : seed_(seed), dim_(dim) {
        if (dim <= 0) throw ConfigError("teacher dimension must be positive");
        for (int level = 0; level < 4; ++level) {
            const int s = kLevelStrides[level];
            const int fan = 3 * s * s;
            Rng rng(derive_seed(seed, 0x7eac0000ULL + level));
            auto& p = proj_[level];
            p.resize(static_cast<std::size_t>(dim) * fan);
            const double sd = 1.0 / std::sqrt(static_cast<double>(fan));
            for (auto& v : p) v = rng.normal() * sd;
        }
    }

    std::string name() const override { return "hash"; }
    std::uint64_t seed() const override { return seed_; }
    int dim() const override { return dim_; }

    TeacherPyramid<T> features(const Tensor<T>& images) const override {
        const Shape is = images.shape();
        if (is.c != 3) throw ShapeError("teacher expects 3 channels");
        check_divisible_by_32(is.h, is.w);
        TeacherPyramid<T> out;
        for (int level = 0; level < 4; ++level) {
            const int s = kLevelStrides[level];
            const int gh = is.h / s, gw = is.w / s, fan = 3 * s * s;
            Tensor<T> grid(Shape{is.n, dim_, gh, gw});
            std::vector<double> patch(fan), token(dim_);
            for (int n = 0; n < is.n; ++n)
                for (int gy = 0; gy < gh; ++gy)
                    for (int gx = 0; gx < gw; ++gx) {
                        int k = 0;
                        for (int c = 0; c < 3; ++c)
                            for (int dy = 0; dy < s; ++dy)
                                for (int dx = 0; dx < s; ++dx)
                                    patch[k++] = static_cast<double>(images.at(n, c, gy * s + dy, gx * s + dx)) - 0.5;
                        double norm2 = 0;
                        for (int d = 0; d < dim_; ++d) {
                            const double* row = proj_[level].data() + static_cast<std::size_t>(d) * fan;
                            double acc = 0;
                            for (int i = 0; i < fan; ++i) acc += row[i] * patch[i];
                            token[d] = acc;
                            norm2 += acc * acc;
                        }
                        const double norm = std::sqrt(norm2);
                        for (int d = 0; d < dim_; ++d)
                            grid.at(n, d, gy, gx) =
                                static_cast<T>(norm > 1e-12 ? token[d] / norm : (d == 0 ? 1.0 : 0.0));
                    }
            out[level] = std::move(grid);
        }
        return out;
    }

private:
    std::uint64_t seed_;
    int dim_;
    std::array<std::vector<double>, 4> proj_;
};

/// Parses "hash:<seed>".
template <typename T>
std::unique_ptr<TeacherModel<T>> make_teacher(const std::string& spec, int dim) {
    const auto colon = spec.find(':');
    if (spec.substr(0, colon) != "hash" || colon == std::string::npos)
        throw ConfigError("unknown teacher '" + spec + "' (expected hash:<seed>)");
    return std::make_unique<HashTeacher<T>>(std::stoull(spec.substr(colon + 1)), dim);
}

/// Per-level two-layer MLP (1x1 conv, ReLU, 1x1 conv) mapping c_i channels to D.
template <typename T>
struct Projection {
    Conv2d<T> first, second;

    Projection() = default;
    Projection(ParamStore<T>& store, const std::string& name, int in, int dim, Rng& rng)
        : first(store, name + ".fc1", in, dim, 1, rng), second(store, name + ".fc2", dim, dim, 1, rng) {}

    Var<T> operator()(const Var<T>& f) const {
        if (f.shape().c != first.in_channels())
            throw ShapeError("projection expects " + std::to_string(first.in_channels()) +
                             " channels, got " + std::to_string(f.shape().c));
        return second(relu(first(f)));
    }
};

template <typename T>
class ProjectionSet {
public:
    ProjectionSet(ParamStore<T>& store, const std::array<int, 4>& widths, int dim, Rng& rng,
                  const std::string& prefix = "distill") {
        for (int i = 0; i < 4; ++i)
            levels_[i] = Projection<T>(store, prefix + ".phi" + std::to_string(i + 1), widths[i], dim, rng);
    }

    const Projection<T>& operator[](int i) const { return levels_[i]; }

    std::vector<Var<T>> operator()(const FeaturePyramid<T>& pyr) const {
        std::vector<Var<T>> out;
        for (int i = 0; i < 4; ++i) out.push_back(levels_[i](pyr[i]));
        return out;
    }

private:
    std::array<Projection<T>, 4> levels_;
};

inline constexpr double kCosineEps = 1e-8;

/// Negative mean cosine similarity over every token of every level. Teacher grids
/// are constants.
template <typename T>
Var<T> distill_loss(const std::vector<Var<T>>& projected, const std::vector<Tensor<T>>& teacher) {
    if (projected.size() != teacher.size() || projected.empty())
        throw ShapeError("distill_loss: level count mismatch");
    std::size_t total_tokens = 0;
    for (std::size_t l = 0; l < projected.size(); ++l) {
        if (projected[l].shape() != teacher[l].shape())
            throw ShapeError("distill_loss: level " + std::to_string(l) + " grid " +
                             projected[l].shape().str() + " vs teacher " + teacher[l].shape().str());
        total_tokens += static_cast<std::size_t>(teacher[l].shape().n) * teacher[l].shape().plane();
    }
    double sum = 0;
    for (std::size_t l = 0; l < projected.size(); ++l) {
        const Shape s = teacher[l].shape();
        const auto& p = projected[l].value();
        const auto& t = teacher[l];
        for (int n = 0; n < s.n; ++n)
            for (std::size_t i = 0; i < s.plane(); ++i) {
                double dot = 0, pp = 0, tt = 0;
                for (int d = 0; d < s.c; ++d) {
                    const double a = p.plane(n, d)[i], b = t.plane(n, d)[i];
                    dot += a * b;
                    pp += a * a;
                    tt += b * b;
                }
                sum += dot / ((std::sqrt(pp) + kCosineEps) * (std::sqrt(tt) + kCosineEps));
            }
    }
    const double inv_n = 1.0 / static_cast<double>(total_tokens);
    Tensor<T> out(Shape{1, 1, 1, 1}, static_cast<T>(-sum * inv_n));
    return make_result<T>(std::move(out), projected, [projected, teacher, inv_n](Node<T>& self) {
        const double g = -static_cast<double>(self.grad[0]) * inv_n;
        for (std::size_t l = 0; l < projected.size(); ++l) {
            if (!projected[l].requires_grad()) continue;
            const Shape s = teacher[l].shape();
            const auto& p = projected[l].value();
            const auto& t = teacher[l];
            auto& gp = projected[l].node()->grad_buffer();
            for (int n = 0; n < s.n; ++n)
                for (std::size_t i = 0; i < s.plane(); ++i) {
                    double dot = 0, pp = 0, tt = 0;
                    for (int d = 0; d < s.c; ++d) {
                        const double a = p.plane(n, d)[i], b = t.plane(n, d)[i];
                        dot += a * b;
                        pp += a * a;
                        tt += b * b;
                    }
                    const double pn = std::sqrt(pp);
                    const double a = pn + kCosineEps, b = std::sqrt(tt) + kCosineEps;
                    const double radial = pn > 0 ? dot / (a * a * b * pn) : 0.0;
                    for (int d = 0; d < s.c; ++d)
                        gp.plane(n, d)[i] += static_cast<T>(
                            g * (t.plane(n, d)[i] / (a * b) - radial * p.plane(n, d)[i]));
                }
        }
    });
}

template <typename T>
Var<T> distill_loss(const std::vector<Var<T>>& projected, const TeacherPyramid<T>& teacher) {
    return distill_loss(projected, std::vector<Tensor<T>>(teacher.begin(), teacher.end()));
}

}  // namespace tamiseg
