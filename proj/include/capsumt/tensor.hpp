#pragma once

#include <cmath>
#include <initializer_list>
#include <vector>

#include "capsumt/common.hpp"
#include "capsumt/rng.hpp"

namespace capsumt {

// Dense row-major tensor. Rank 0 (empty shape) is a scalar with one element.
// `node` is a handle into the tape that produced the tensor; -1 means the
// value is detached (plain data, nothing recorded).
template <class T>
class Tensor {
public:
    Tensor() : shape_{}, data_(1, T(0)) {}

    explicit Tensor(Shape shape) : shape_(std::move(shape)), data_(shape_numel(shape_), T(0)) {}

    Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
        if (data_.size() != shape_numel(shape_))
            throw ShapeError("tensor: data length " + std::to_string(data_.size()) +
                             " does not match shape " + shape_str(shape_));
    }

    static Tensor scalar(T v) {
        Tensor t;
        t.data_[0] = v;
        return t;
    }

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

    static Tensor full(Shape shape, T v) {
        Tensor t(std::move(shape));
        for (auto& x : t.data_) x = v;
        return t;
    }

    static Tensor uniform(Shape shape, Rng& rng, T lo, T hi) {
        Tensor t(std::move(shape));
        for (auto& x : t.data_) x = static_cast<T>(rng.uniform(lo, hi));
        return t;
    }

    static Tensor normal(Shape shape, Rng& rng, T stddev) {
        Tensor t(std::move(shape));
        for (auto& x : t.data_) x = static_cast<T>(rng.normal(0.0, stddev));
        return t;
    }

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }
    std::size_t dim(std::size_t axis) const { return shape_[axis]; }
    bool is_scalar() const { return data_.size() == 1 && shape_.empty(); }

    std::vector<T>& data() { return data_; }
    const std::vector<T>& data() const { return data_; }

    T& operator[](std::size_t flat) { return data_[flat]; }
    const T& operator[](std::size_t flat) const { return data_[flat]; }

    T& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
    const T& at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }

    T item() const {
        if (data_.size() != 1)
            throw ShapeError("item(): tensor " + shape_str(shape_) + " is not a scalar");
        return data_[0];
    }

    bool all_finite() const {
        for (const T& x : data_)
            if (!std::isfinite(static_cast<double>(x))) return false;
        return true;
    }

    Tensor reshaped(Shape s) const {
        if (shape_numel(s) != data_.size())
            throw ShapeError("reshape: cannot view " + shape_str(shape_) + " as " + shape_str(s));
        Tensor t;
        t.shape_ = std::move(s);
        t.data_ = data_;
        return t;
    }

    int node = -1;

private:
    Shape shape_;
    std::vector<T> data_;
};

// Trailing-dimension broadcast: shapes are right-aligned, an extent of 1
// stretches. Throws when extents conflict.
inline Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
    std::size_t rank = std::max(a.size(), b.size());
    Shape out(rank, 1);
    for (std::size_t i = 0; i < rank; ++i) {
        std::size_t da = i < a.size() ? a[a.size() - 1 - i] : 1;
        std::size_t db = i < b.size() ? b[b.size() - 1 - i] : 1;
        if (da != db && da != 1 && db != 1)
            throw ShapeError(std::string(op) + ": shapes " + shape_str(a) + " and " + shape_str(b) +
                             " do not broadcast");
        out[rank - 1 - i] = std::max(da, db);
    }
    return out;
}

namespace detail {

// Row-major strides, with 0 on axes that broadcast against `out`.
inline std::vector<std::size_t> broadcast_strides(const Shape& in, const Shape& out) {
    std::vector<std::size_t> strides(out.size(), 0);
    std::size_t stride = 1;
    for (std::size_t i = 0; i < in.size(); ++i) {
        std::size_t axis_in = in.size() - 1 - i;
        std::size_t axis_out = out.size() - 1 - i;
        strides[axis_out] = (in[axis_in] == 1 && out[axis_out] != 1) ? 0 : stride;
        stride *= in[axis_in];
    }
    return strides;
}

template <class T, class F>
void broadcast_apply(const Tensor<T>& a, const Tensor<T>& b, Tensor<T>& out, F&& f) {
    const Shape& os = out.shape();
    auto sa = broadcast_strides(a.shape(), os);
    auto sb = broadcast_strides(b.shape(), os);
    std::vector<std::size_t> idx(os.size(), 0);
    for (std::size_t flat = 0; flat < out.size(); ++flat) {
        std::size_t ia = 0, ib = 0;
        for (std::size_t d = 0; d < os.size(); ++d) {
            ia += idx[d] * sa[d];
            ib += idx[d] * sb[d];
        }
        out[flat] = f(a[ia], b[ib]);
        for (std::size_t d = os.size(); d-- > 0;) {
            if (++idx[d] < os[d]) break;
            idx[d] = 0;
        }
    }
}

// Sum `g` down to `target` shape (inverse of broadcasting).
template <class T>
Tensor<T> reduce_to_shape(const Tensor<T>& g, const Shape& target) {
    if (g.shape() == target) return g;
    Tensor<T> out(target);
    const Shape& gs = g.shape();
    auto st = broadcast_strides(target, gs);
    std::vector<std::size_t> idx(gs.size(), 0);
    for (std::size_t flat = 0; flat < g.size(); ++flat) {
        std::size_t it = 0;
        for (std::size_t d = 0; d < gs.size(); ++d) it += idx[d] * st[d];
        out[it] += g[flat];
        for (std::size_t d = gs.size(); d-- > 0;) {
            if (++idx[d] < gs[d]) break;
            idx[d] = 0;
        }
    }
    return out;
}

}  // namespace detail
}  // namespace capsumt
