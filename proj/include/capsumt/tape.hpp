#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "capsumt/common.hpp"
#include "capsumt/rng.hpp"
#include "capsumt/tensor.hpp"

namespace capsumt {

template <class T>
struct Parameter {
    std::string name;
    Tensor<T> value;
};

// Flat registry of named trainable tensors. A parameter's id is its index and
// stays stable for the model's lifetime; gradient maps and the optimizer key
// off it.
template <class T>
class ParameterSet {
public:
    int add(std::string name, Tensor<T> init) {
        items_.push_back({std::move(name), std::move(init)});
        return static_cast<int>(items_.size()) - 1;
    }

    Parameter<T>& operator[](int id) { return items_[static_cast<std::size_t>(id)]; }
    const Parameter<T>& operator[](int id) const { return items_[static_cast<std::size_t>(id)]; }

    std::size_t size() const { return items_.size(); }

    std::size_t numel() const {
        std::size_t n = 0;
        for (const auto& p : items_) n += p.value.size();
        return n;
    }

    auto begin() { return items_.begin(); }
    auto end() { return items_.end(); }
    auto begin() const { return items_.begin(); }
    auto end() const { return items_.end(); }

private:
    std::vector<Parameter<T>> items_;
};

template <class T>
using GradMap = std::unordered_map<int, Tensor<T>>;

// Recorded-tape reverse-mode differentiation. Each op appends one node in
// topological order (parents always precede children); backward() walks the
// node list once in reverse, so every node's adjoint is complete before it is
// propagated. A tape belongs to one logical execution context; build a fresh
// one per training step.
template <class T>
class Tape {
public:
    Tensor<T> leaf(const Tensor<T>& value, int param_id = -1) {
        Tensor<T> out = value;
        out.node = record("leaf", out, {}, nullptr, param_id);
        return out;
    }

    Tensor<T> param(const ParameterSet<T>& ps, int id) { return leaf(ps[id].value, id); }

    // ---- elementwise / broadcast -------------------------------------------

    Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
        return binary_broadcast("add", a, b, [](T x, T y) { return x + y; },
                                [](T, T, T g) { return std::pair<T, T>{g, g}; });
    }

    Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
        return binary_broadcast("sub", a, b, [](T x, T y) { return x - y; },
                                [](T, T, T g) { return std::pair<T, T>{g, -g}; });
    }

    Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
        return binary_broadcast("mul", a, b, [](T x, T y) { return x * y; },
                                [](T x, T y, T g) { return std::pair<T, T>{g * y, g * x}; });
    }

    // Elementwise minimum; ties send the gradient to the first operand.
    Tensor<T> min_elem(const Tensor<T>& a, const Tensor<T>& b) {
        if (a.shape() != b.shape())
            throw ShapeError("min_elem: shapes " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
        int pa = ensure(a), pb = ensure(b);
        Tensor<T> out(a.shape());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::min(a[i], b[i]);
        out.node = record("min_elem", out, {pa, pb}, [pa, pb](Tape& tp, int self) {
            const Tensor<T>& g = tp.grad_of(self);
            const Tensor<T>& x = tp.value_of(pa);
            const Tensor<T>& y = tp.value_of(pb);
            Tensor<T> ga(x.shape()), gb(y.shape());
            for (std::size_t i = 0; i < g.size(); ++i) {
                if (x[i] <= y[i])
                    ga[i] = g[i];
                else
                    gb[i] = g[i];
            }
            tp.accumulate(pa, ga);
            tp.accumulate(pb, gb);
        });
        return out;
    }

    Tensor<T> tanh(const Tensor<T>& x) {
        return unary("tanh", x, [](T v) { return std::tanh(v); },
                     [](T, T y, T g) { return g * (T(1) - y * y); });
    }

    Tensor<T> sigmoid(const Tensor<T>& x) {
        return unary("sigmoid", x,
                     [](T v) {
                         // Evaluate on the non-overflowing branch.
                         if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
                         T e = std::exp(v);
                         return e / (T(1) + e);
                     },
                     [](T, T y, T g) { return g * y * (T(1) - y); });
    }

    Tensor<T> relu(const Tensor<T>& x) {
        return unary("relu", x, [](T v) { return v > T(0) ? v : T(0); },
                     [](T v, T, T g) { return v > T(0) ? g : T(0); });
    }

    // log(max(x, floor)); floor <= 0 means plain log. The floor keeps losses
    // finite on untrained models that assign ~0 probability to a target.
    Tensor<T> log(const Tensor<T>& x, T floor = T(0)) {
        return unary("log", x,
                     [floor](T v) { return std::log(std::max(v, floor)); },
                     [floor](T v, T, T g) { return v > floor ? g / v : T(0); });
    }

    // alpha * x + beta with scalar coefficients.
    Tensor<T> affine(const Tensor<T>& x, T alpha, T beta) {
        return unary("affine", x, [alpha, beta](T v) { return alpha * v + beta; },
                     [alpha](T, T, T g) { return alpha * g; });
    }

    Tensor<T> scale(const Tensor<T>& x, T alpha) { return affine(x, alpha, T(0)); }

    // ---- linear algebra ----------------------------------------------------

    // 2-D x 2-D contraction; 1-D operands follow the usual promotion rules
    // ((k)x(k,n)->(n), (m,k)x(k)->(m), (k)x(k)->scalar).
    Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
        if (a.rank() > 2 || b.rank() > 2 || a.rank() == 0 || b.rank() == 0)
            throw ShapeError("matmul: ranks " + shape_str(a.shape()) + " x " +
                             shape_str(b.shape()) + " unsupported");
        bool avec = a.rank() == 1, bvec = b.rank() == 1;
        std::size_t m = avec ? 1 : a.dim(0);
        std::size_t k = avec ? a.dim(0) : a.dim(1);
        std::size_t kb = bvec ? b.dim(0) : b.dim(0);
        std::size_t n = bvec ? 1 : b.dim(1);
        if (k != kb)
            throw ShapeError("matmul: inner extents differ, " + shape_str(a.shape()) + " x " +
                             shape_str(b.shape()));
        int pa = ensure(a), pb = ensure(b);
        Tensor<T> out = mm_raw(a.data(), b.data(), m, k, n);
        Shape oshape;
        if (!avec && !bvec)
            oshape = {m, n};
        else if (avec && !bvec)
            oshape = {n};
        else if (!avec && bvec)
            oshape = {m};
        out = Tensor<T>(oshape, std::move(out.data()));
        out.node = record("matmul", out, {pa, pb},
                          [pa, pb, m, k, n, avec, bvec](Tape& tp, int self) {
                              const auto& g = tp.grad_of(self).data();
                              const auto& av = tp.value_of(pa).data();
                              const auto& bv = tp.value_of(pb).data();
                              // dA = G B^T, dB = A^T G.
                              Tensor<T> da = mm_nt(g, bv, m, n, k);
                              Tensor<T> db = mm_tn(av, g, k, m, n);
                              Shape sa = avec ? Shape{k} : Shape{m, k};
                              Shape sb = bvec ? Shape{k} : Shape{k, n};
                              tp.accumulate(pa, Tensor<T>(sa, std::move(da.data())));
                              tp.accumulate(pb, Tensor<T>(sb, std::move(db.data())));
                          });
        return out;
    }

    Tensor<T> transpose(const Tensor<T>& x) {
        if (x.rank() != 2) throw ShapeError("transpose: need rank 2, got " + shape_str(x.shape()));
        int px = ensure(x);
        std::size_t r = x.dim(0), c = x.dim(1);
        Tensor<T> out(Shape{c, r});
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) out.at(j, i) = x.at(i, j);
        out.node = record("transpose", out, {px}, [px, r, c](Tape& tp, int self) {
            const Tensor<T>& g = tp.grad_of(self);
            Tensor<T> gx(Shape{r, c});
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) gx.at(i, j) = g.at(j, i);
            tp.accumulate(px, gx);
        });
        return out;
    }

    // ---- structure ---------------------------------------------------------

    Tensor<T> reshape(const Tensor<T>& x, Shape s) {
        int px = ensure(x);
        Tensor<T> out = x.reshaped(std::move(s));
        Shape orig = x.shape();
        out.node = record("reshape", out, {px}, [px, orig](Tape& tp, int self) {
            tp.accumulate(px, tp.grad_of(self).reshaped(orig));
        });
        return out;
    }

    Tensor<T> concat(const std::vector<Tensor<T>>& xs, std::size_t axis = 0) {
        if (xs.empty()) throw ShapeError("concat: no inputs");
        std::size_t rank = xs[0].rank();
        if (rank < 1 || rank > 2 || axis >= rank)
            throw ShapeError("concat: unsupported rank/axis");
        std::vector<int> parents;
        std::size_t total = 0;
        for (const auto& x : xs) {
            if (x.rank() != rank) throw ShapeError("concat: mixed ranks");
            for (std::size_t d = 0; d < rank; ++d)
                if (d != axis && x.dim(d) != xs[0].dim(d))
                    throw ShapeError("concat: shapes " + shape_str(x.shape()) + " vs " +
                                     shape_str(xs[0].shape()) + " differ off-axis");
            total += x.dim(axis);
        }
        for (const auto& x : xs) parents.push_back(ensure(x));
        Shape oshape = xs[0].shape();
        oshape[axis] = total;
        Tensor<T> out(oshape);
        std::vector<std::size_t> extents;
        std::size_t offset = 0;
        for (const auto& x : xs) {
            copy_block(x, out, axis, offset, /*to_out=*/true);
            extents.push_back(x.dim(axis));
            offset += x.dim(axis);
        }
        out.node = record("concat", out, parents,
                          [parents, extents, axis](Tape& tp, int self) {
                              const Tensor<T>& g = tp.grad_of(self);
                              std::size_t off = 0;
                              for (std::size_t i = 0; i < parents.size(); ++i) {
                                  Shape s = tp.value_of(parents[i]).shape();
                                  Tensor<T> gi(s);
                                  copy_block(gi, const_cast<Tensor<T>&>(g), axis, off,
                                             /*to_out=*/false);
                                  tp.accumulate(parents[i], gi);
                                  off += extents[i];
                              }
                          });
        return out;
    }

    // Stack rank-1 vectors into the rows of a matrix.
    Tensor<T> stack_rows(const std::vector<Tensor<T>>& xs) {
        if (xs.empty()) throw ShapeError("stack_rows: no inputs");
        std::size_t d = xs[0].size();
        std::vector<int> parents;
        for (const auto& x : xs) {
            if (x.rank() != 1 || x.size() != d)
                throw ShapeError("stack_rows: need equal rank-1 vectors");
            parents.push_back(ensure(x));
        }
        Tensor<T> out(Shape{xs.size(), d});
        for (std::size_t i = 0; i < xs.size(); ++i)
            for (std::size_t j = 0; j < d; ++j) out.at(i, j) = xs[i][j];
        out.node = record("stack_rows", out, parents, [parents, d](Tape& tp, int self) {
            const Tensor<T>& g = tp.grad_of(self);
            for (std::size_t i = 0; i < parents.size(); ++i) {
                Tensor<T> gi(Shape{d});
                for (std::size_t j = 0; j < d; ++j) gi[j] = g.at(i, j);
                tp.accumulate(parents[i], gi);
            }
        });
        return out;
    }

    Tensor<T> slice_rows(const Tensor<T>& x, std::size_t r0, std::size_t r1) {
        if (x.rank() != 2 || r1 > x.dim(0) || r0 >= r1)
            throw ShapeError("slice_rows: bad range on " + shape_str(x.shape()));
        int px = ensure(x);
        std::size_t c = x.dim(1);
        Tensor<T> out(Shape{r1 - r0, c});
        for (std::size_t i = r0; i < r1; ++i)
            for (std::size_t j = 0; j < c; ++j) out.at(i - r0, j) = x.at(i, j);
        out.node = record("slice_rows", out, {px}, [px, r0, r1, c](Tape& tp, int self) {
            const Tensor<T>& g = tp.grad_of(self);
            Tensor<T> gx(tp.value_of(px).shape());
            for (std::size_t i = r0; i < r1; ++i)
                for (std::size_t j = 0; j < c; ++j) gx.at(i, j) = g.at(i - r0, j);
            tp.accumulate(px, gx);
        });
        return out;
    }

    // Row gather; this is also the embedding lookup (table rows by token id).
    Tensor<T> gather_rows(const Tensor<T>& x, const std::vector<std::size_t>& ids) {
        if (x.rank() != 2) throw ShapeError("gather_rows: need rank 2, got " + shape_str(x.shape()));
        std::size_t c = x.dim(1);
        for (std::size_t id : ids)
            if (id >= x.dim(0))
                throw ShapeError("gather_rows: row " + std::to_string(id) + " out of " +
                                 std::to_string(x.dim(0)));
        int px = ensure(x);
        Tensor<T> out(Shape{ids.size(), c});
        for (std::size_t i = 0; i < ids.size(); ++i)
            for (std::size_t j = 0; j < c; ++j) out.at(i, j) = x.at(ids[i], j);
        out.node = record("gather_rows", out, {px}, [px, ids, c](Tape& tp, int self) {
            const Tensor<T>& g = tp.grad_of(self);
            Tensor<T> gx(tp.value_of(px).shape());
            for (std::size_t i = 0; i < ids.size(); ++i)
                for (std::size_t j = 0; j < c; ++j) gx.at(ids[i], j) += g.at(i, j);
            tp.accumulate(px, gx);
        });
        return out;
    }

    Tensor<T> row(const Tensor<T>& x, std::size_t i) {
        Tensor<T> r = gather_rows(x, {i});
        return reshape(r, Shape{x.dim(1)});
    }

    // Per-word subword composition: out[w] = sum of x rows listed in groups[w].
    Tensor<T> gather_sum_rows(const Tensor<T>& x, const std::vector<std::vector<std::size_t>>& groups) {
        if (x.rank() != 2) throw ShapeError("gather_sum_rows: need rank 2");
        std::size_t c = x.dim(1);
        int px = ensure(x);
        Tensor<T> out(Shape{groups.size(), c});
        for (std::size_t w = 0; w < groups.size(); ++w)
            for (std::size_t id : groups[w]) {
                if (id >= x.dim(0)) throw ShapeError("gather_sum_rows: row out of range");
                for (std::size_t j = 0; j < c; ++j) out.at(w, j) += x.at(id, j);
            }
        out.node = record("gather_sum_rows", out, {px}, [px, groups, c](Tape& tp, int self) {
            const Tensor<T>& g = tp.grad_of(self);
            Tensor<T> gx(tp.value_of(px).shape());
            for (std::size_t w = 0; w < groups.size(); ++w)
                for (std::size_t id : groups[w])
                    for (std::size_t j = 0; j < c; ++j) gx.at(id, j) += g.at(w, j);
            tp.accumulate(px, gx);
        });
        return out;
    }

    Tensor<T> pick(const Tensor<T>& x, std::size_t flat) {
        if (flat >= x.size()) throw ShapeError("pick: index out of range");
        int px = ensure(x);
        Tensor<T> out = Tensor<T>::scalar(x[flat]);
        out.node = record("pick", out, {px}, [px, flat](Tape& tp, int self) {
            Tensor<T> gx(tp.value_of(px).shape());
            gx[flat] = tp.grad_of(self)[0];
            tp.accumulate(px, gx);
        });
        return out;
    }

    // out[i] = x[i, ids[i]] — one picked column per row (cross-entropy gather).
    Tensor<T> pick_per_row(const Tensor<T>& x, const std::vector<std::size_t>& ids) {
        if (x.rank() != 2 || ids.size() != x.dim(0))
            throw ShapeError("pick_per_row: need rank 2 with one index per row");
        for (std::size_t j : ids)
            if (j >= x.dim(1)) throw ShapeError("pick_per_row: column out of range");
        int px = ensure(x);
        Tensor<T> out(Shape{ids.size()});
        for (std::size_t i = 0; i < ids.size(); ++i) out[i] = x.at(i, ids[i]);
        out.node = record("pick_per_row", out, {px}, [px, ids](Tape& tp, int self) {
            const Tensor<T>& g = tp.grad_of(self);
            Tensor<T> gx(tp.value_of(px).shape());
            for (std::size_t i = 0; i < ids.size(); ++i) gx.at(i, ids[i]) = g[i];
            tp.accumulate(px, gx);
        });
        return out;
    }

    // out[ids[j]] += v[j]; builds the copy distribution over an extended vocab.
    Tensor<T> scatter_add(const Tensor<T>& v, const std::vector<std::size_t>& ids,
                          std::size_t out_size) {
        if (v.rank() != 1 || ids.size() != v.size())
            throw ShapeError("scatter_add: need rank-1 values with one id each");
        for (std::size_t j : ids)
            if (j >= out_size) throw ShapeError("scatter_add: id out of range");
        int pv = ensure(v);
        Tensor<T> out(Shape{out_size});
        for (std::size_t j = 0; j < ids.size(); ++j) out[ids[j]] += v[j];
        out.node = record("scatter_add", out, {pv}, [pv, ids](Tape& tp, int self) {
            const Tensor<T>& g = tp.grad_of(self);
            Tensor<T> gv(tp.value_of(pv).shape());
            for (std::size_t j = 0; j < ids.size(); ++j) gv[j] = g[ids[j]];
            tp.accumulate(pv, gv);
        });
        return out;
    }

    // ---- reductions & normalizations ----------------------------------------

    Tensor<T> sum(const Tensor<T>& x) {
        int px = ensure(x);
        T s = T(0);
        for (std::size_t i = 0; i < x.size(); ++i) s += x[i];
        Tensor<T> out = Tensor<T>::scalar(s);
        out.node = record("sum", out, {px}, [px](Tape& tp, int self) {
            T g = tp.grad_of(self)[0];
            tp.accumulate(px, Tensor<T>::full(tp.value_of(px).shape(), g));
        });
        return out;
    }

    Tensor<T> mean(const Tensor<T>& x) {
        int px = ensure(x);
        T s = T(0);
        for (std::size_t i = 0; i < x.size(); ++i) s += x[i];
        T n = static_cast<T>(x.size());
        Tensor<T> out = Tensor<T>::scalar(s / n);
        out.node = record("mean", out, {px}, [px, n](Tape& tp, int self) {
            T g = tp.grad_of(self)[0] / n;
            tp.accumulate(px, Tensor<T>::full(tp.value_of(px).shape(), g));
        });
        return out;
    }

    // Softmax over the last axis, computed with max subtraction.
    Tensor<T> softmax(const Tensor<T>& x) {
        if (x.rank() < 1 || x.rank() > 2) throw ShapeError("softmax: need rank 1 or 2");
        int px = ensure(x);
        std::size_t cols = x.dim(x.rank() - 1);
        std::size_t rows = x.size() / cols;
        Tensor<T> out(x.shape());
        for (std::size_t r = 0; r < rows; ++r) {
            const T* in = x.data().data() + r * cols;
            T* o = out.data().data() + r * cols;
            T mx = in[0];
            for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, in[j]);
            T z = T(0);
            for (std::size_t j = 0; j < cols; ++j) {
                o[j] = std::exp(in[j] - mx);
                z += o[j];
            }
            for (std::size_t j = 0; j < cols; ++j) o[j] /= z;
        }
        out.node = record("softmax", out, {px}, [px, rows, cols](Tape& tp, int self) {
            const Tensor<T>& y = tp.value_of(self);
            const Tensor<T>& g = tp.grad_of(self);
            Tensor<T> gx(y.shape());
            for (std::size_t r = 0; r < rows; ++r) {
                T dot = T(0);
                for (std::size_t j = 0; j < cols; ++j) dot += g[r * cols + j] * y[r * cols + j];
                for (std::size_t j = 0; j < cols; ++j)
                    gx[r * cols + j] = y[r * cols + j] * (g[r * cols + j] - dot);
            }
            tp.accumulate(px, gx);
        });
        return out;
    }

    // Per-row layer normalization with learned gain/bias.
    Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias,
                         T eps = T(1e-5)) {
        std::size_t d = x.dim(x.rank() - 1);
        if (gain.shape() != Shape{d} || bias.shape() != Shape{d})
            throw ShapeError("layer_norm: gain/bias must be rank-1 of width " + std::to_string(d));
        int px = ensure(x), pg = ensure(gain), pb = ensure(bias);
        std::size_t rows = x.size() / d;
        Tensor<T> out(x.shape());
        std::vector<T> xhat(x.size()), inv_s(rows);
        for (std::size_t r = 0; r < rows; ++r) {
            const T* in = x.data().data() + r * d;
            T mu = T(0);
            for (std::size_t j = 0; j < d; ++j) mu += in[j];
            mu /= static_cast<T>(d);
            T var = T(0);
            for (std::size_t j = 0; j < d; ++j) var += (in[j] - mu) * (in[j] - mu);
            var /= static_cast<T>(d);
            T is = T(1) / std::sqrt(var + eps);
            inv_s[r] = is;
            for (std::size_t j = 0; j < d; ++j) {
                xhat[r * d + j] = (in[j] - mu) * is;
                out[r * d + j] = gain[j] * xhat[r * d + j] + bias[j];
            }
        }
        out.node = record("layer_norm", out, {px, pg, pb},
                          [px, pg, pb, rows, d, xhat, inv_s](Tape& tp, int self) {
                              const Tensor<T>& g = tp.grad_of(self);
                              const Tensor<T>& gain = tp.value_of(pg);
                              Tensor<T> gx(tp.value_of(px).shape());
                              Tensor<T> gg(Shape{d}), gb(Shape{d});
                              for (std::size_t r = 0; r < rows; ++r) {
                                  T mean_gh = T(0), mean_ghx = T(0);
                                  for (std::size_t j = 0; j < d; ++j) {
                                      T gh = g[r * d + j] * gain[j];
                                      mean_gh += gh;
                                      mean_ghx += gh * xhat[r * d + j];
                                      gg[j] += g[r * d + j] * xhat[r * d + j];
                                      gb[j] += g[r * d + j];
                                  }
                                  mean_gh /= static_cast<T>(d);
                                  mean_ghx /= static_cast<T>(d);
                                  for (std::size_t j = 0; j < d; ++j) {
                                      T gh = g[r * d + j] * gain[j];
                                      gx[r * d + j] =
                                          inv_s[r] * (gh - mean_gh - xhat[r * d + j] * mean_ghx);
                                  }
                              }
                              tp.accumulate(px, gx);
                              tp.accumulate(pg, gg);
                              tp.accumulate(pb, gb);
                          });
        return out;
    }

    // Inverted dropout; rate 0 is the identity (records nothing).
    Tensor<T> dropout(const Tensor<T>& x, double rate, Rng& rng) {
        if (rate <= 0.0) return x;
        if (rate >= 1.0) throw ConfigError("dropout: rate must be in [0,1)");
        int px = ensure(x);
        T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
        std::vector<T> mask(x.size());
        for (auto& m : mask) m = rng.uniform() < rate ? T(0) : keep_scale;
        Tensor<T> out(x.shape());
        for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * mask[i];
        out.node = record("dropout", out, {px}, [px, mask](Tape& tp, int self) {
            const Tensor<T>& g = tp.grad_of(self);
            Tensor<T> gx(g.shape());
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] = g[i] * mask[i];
            tp.accumulate(px, gx);
        });
        return out;
    }

    // ---- reverse pass -------------------------------------------------------

    // Seeds the scalar loss with adjoint 1 and visits every node exactly once
    // in reverse topological order. Every registered parameter leaf appears in
    // the result; leaves unreachable from the loss get a zero gradient.
    GradMap<T> backward(const Tensor<T>& loss) {
        if (loss.node < 0 || loss.node >= static_cast<int>(nodes_.size()))
            throw ShapeError("backward: loss is not on this tape");
        if (loss.size() != 1)
            throw ShapeError("backward: loss must be scalar, got " + shape_str(loss.shape()));
        Node& top = nodes_[static_cast<std::size_t>(loss.node)];
        top.grad = Tensor<T>::full(top.value.shape(), T(1));
        top.has_grad = true;
        for (int i = loss.node; i >= 0; --i) {
            Node& n = nodes_[static_cast<std::size_t>(i)];
            if (n.has_grad && n.backward) n.backward(*this, i);
        }
        GradMap<T> grads;
        for (auto& n : nodes_) {
            if (n.param_id < 0) continue;
            Tensor<T> g = n.has_grad ? n.grad : Tensor<T>::zeros(n.value.shape());
            auto it = grads.find(n.param_id);
            if (it == grads.end()) {
                grads.emplace(n.param_id, std::move(g));
            } else {
                for (std::size_t i = 0; i < g.size(); ++i) it->second[i] += g[i];
            }
        }
        return grads;
    }

    std::size_t size() const { return nodes_.size(); }

    const Tensor<T>& value_of(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
    const Tensor<T>& grad_of(int id) const { return nodes_[static_cast<std::size_t>(id)].grad; }

    void accumulate(int id, const Tensor<T>& g) {
        Node& n = nodes_[static_cast<std::size_t>(id)];
        if (g.shape() != n.value.shape())
            throw ShapeError(std::string("backward of ") + n.op + ": gradient shape " +
                             shape_str(g.shape()) + " != value shape " + shape_str(n.value.shape()));
        if (!n.has_grad) {
            n.grad = g;
            n.has_grad = true;
        } else {
            for (std::size_t i = 0; i < g.size(); ++i) n.grad[i] += g[i];
        }
    }

private:
    using BackwardFn = std::function<void(Tape&, int)>;

    struct Node {
        const char* op;
        std::vector<int> parents;
        Tensor<T> value;
        Tensor<T> grad;
        bool has_grad = false;
        BackwardFn backward;
        int param_id = -1;
    };

    int ensure(const Tensor<T>& t) {
        if (t.node >= 0) {
            if (t.node >= static_cast<int>(nodes_.size()))
                throw ShapeError("tensor references a node from another tape");
            return t.node;
        }
        Tensor<T> copy = t;
        return record("const", copy, {}, nullptr, -1);
    }

    int record(const char* op, const Tensor<T>& value, std::vector<int> parents, BackwardFn fn,
               int param_id = -1) {
        if (!value.all_finite())
            throw NumericError(std::string(op) + ": non-finite value in output " +
                               shape_str(value.shape()));
        Node n;
        n.op = op;
        n.parents = std::move(parents);
        n.value = value;
        n.backward = std::move(fn);
        n.param_id = param_id;
        nodes_.push_back(std::move(n));
        return static_cast<int>(nodes_.size()) - 1;
    }

    template <class FwdF, class BwdF>
    Tensor<T> unary(const char* op, const Tensor<T>& x, FwdF&& f, BwdF&& df) {
        int px = ensure(x);
        Tensor<T> out(x.shape());
        for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
        out.node = record(op, out, {px}, [px, df](Tape& tp, int self) {
            const Tensor<T>& g = tp.grad_of(self);
            const Tensor<T>& y = tp.value_of(self);
            const Tensor<T>& x = tp.value_of(px);
            Tensor<T> gx(x.shape());
            for (std::size_t i = 0; i < x.size(); ++i) gx[i] = df(x[i], y[i], g[i]);
            tp.accumulate(px, gx);
        });
        return out;
    }

    template <class FwdF, class BwdF>
    Tensor<T> binary_broadcast(const char* op, const Tensor<T>& a, const Tensor<T>& b, FwdF&& f,
                               BwdF&& df) {
        Shape oshape = broadcast_shape(a.shape(), b.shape(), op);
        int pa = ensure(a), pb = ensure(b);
        Tensor<T> out(oshape);
        detail::broadcast_apply(a, b, out, f);
        out.node = record(op, out, {pa, pb}, [pa, pb, df](Tape& tp, int self) {
            const Tensor<T>& g = tp.grad_of(self);
            const Tensor<T>& a = tp.value_of(pa);
            const Tensor<T>& b = tp.value_of(pb);
            // Expand operand gradients at output shape, then reduce back.
            Tensor<T> ga_full(g.shape()), gb_full(g.shape());
            auto sa = detail::broadcast_strides(a.shape(), g.shape());
            auto sb = detail::broadcast_strides(b.shape(), g.shape());
            const Shape& os = g.shape();
            std::vector<std::size_t> idx(os.size(), 0);
            for (std::size_t flat = 0; flat < g.size(); ++flat) {
                std::size_t ia = 0, ib = 0;
                for (std::size_t d = 0; d < os.size(); ++d) {
                    ia += idx[d] * sa[d];
                    ib += idx[d] * sb[d];
                }
                auto [da, db] = df(a[ia], b[ib], g[flat]);
                ga_full[flat] = da;
                gb_full[flat] = db;
                for (std::size_t d = os.size(); d-- > 0;) {
                    if (++idx[d] < os[d]) break;
                    idx[d] = 0;
                }
            }
            tp.accumulate(pa, detail::reduce_to_shape(ga_full, a.shape()));
            tp.accumulate(pb, detail::reduce_to_shape(gb_full, b.shape()));
        });
        return out;
    }

    static Tensor<T> mm_raw(const std::vector<T>& a, const std::vector<T>& b, std::size_t m,
                            std::size_t k, std::size_t n) {
        Tensor<T> c(Shape{m, n});
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
                T av = a[i * k + p];
                if (av == T(0)) continue;
                for (std::size_t j = 0; j < n; ++j) c[i * n + j] += av * b[p * n + j];
            }
        return c;
    }

    // a (m,n) * b^T with b (k,n) -> (m,k)
    static Tensor<T> mm_nt(const std::vector<T>& a, const std::vector<T>& b, std::size_t m,
                           std::size_t n, std::size_t k) {
        Tensor<T> c(Shape{m, k});
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
                T s = T(0);
                for (std::size_t j = 0; j < n; ++j) s += a[i * n + j] * b[p * n + j];
                c[i * k + p] = s;
            }
        return c;
    }

    // a^T with a (m,k) times b (m,n) -> (k,n)
    static Tensor<T> mm_tn(const std::vector<T>& a, const std::vector<T>& b, std::size_t k,
                           std::size_t m, std::size_t n) {
        Tensor<T> c(Shape{k, n});
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
                T av = a[i * k + p];
                if (av == T(0)) continue;
                for (std::size_t j = 0; j < n; ++j) c[p * n + j] += av * b[i * n + j];
            }
        return c;
    }

    // Copy a block along `axis` between a member tensor and the concat output.
    static void copy_block(const Tensor<T>& part_in, Tensor<T>& out, std::size_t axis,
                           std::size_t offset, bool to_out) {
        Tensor<T>& part = const_cast<Tensor<T>&>(part_in);
        if (part.rank() == 1) {
            for (std::size_t i = 0; i < part.size(); ++i) {
                if (to_out)
                    out[offset + i] = part[i];
                else
                    part[i] = out[offset + i];
            }
            return;
        }
        std::size_t rows = part.dim(0), cols = part.dim(1);
        for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t j = 0; j < cols; ++j) {
                std::size_t oi = axis == 0 ? i + offset : i;
                std::size_t oj = axis == 0 ? j : j + offset;
                if (to_out)
                    out.at(oi, oj) = part.at(i, j);
                else
                    part.at(i, j) = out.at(oi, oj);
            }
    }

    std::vector<Node> nodes_;
};

}  // namespace capsumt
