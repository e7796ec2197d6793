#pragma once

#include <string>

#include "capsumt/rng.hpp"
#include "capsumt/tape.hpp"

namespace capsumt {

// Standard LSTM cell. Parameters are registered once in a ParameterSet; bind()
// turns them into leaves on a given tape so a sequence of steps shares one
// registration.
template <class T>
struct LstmCell {
    std::size_t input = 0, hidden = 0;
    int wxi = -1, whi = -1, bi = -1;
    int wxf = -1, whf = -1, bf = -1;
    int wxo = -1, who = -1, bo = -1;
    int wxg = -1, whg = -1, bg = -1;

    LstmCell() = default;

    LstmCell(ParameterSet<T>& ps, const std::string& prefix, std::size_t input_size,
             std::size_t hidden_size, Rng& rng)
        : input(input_size), hidden(hidden_size) {
        T a = static_cast<T>(0.08);
        auto w = [&](const char* name, std::size_t r, std::size_t c) {
            return ps.add(prefix + "." + name, Tensor<T>::uniform({r, c}, rng, -a, a));
        };
        auto b = [&](const char* name) { return ps.add(prefix + "." + name, Tensor<T>::zeros({hidden})); };
        wxi = w("wxi", hidden, input);
        whi = w("whi", hidden, hidden);
        bi = b("bi");
        wxf = w("wxf", hidden, input);
        whf = w("whf", hidden, hidden);
        bf = b("bf");
        wxo = w("wxo", hidden, input);
        who = w("who", hidden, hidden);
        bo = b("bo");
        wxg = w("wxg", hidden, input);
        whg = w("whg", hidden, hidden);
        bg = b("bg");
    }

    struct Bound {
        Tensor<T> wxi, whi, bi, wxf, whf, bf, wxo, who, bo, wxg, whg, bg;
    };

    Bound bind(Tape<T>& tp, const ParameterSet<T>& ps) const {
        return Bound{tp.param(ps, wxi), tp.param(ps, whi), tp.param(ps, bi),
                     tp.param(ps, wxf), tp.param(ps, whf), tp.param(ps, bf),
                     tp.param(ps, wxo), tp.param(ps, who), tp.param(ps, bo),
                     tp.param(ps, wxg), tp.param(ps, whg), tp.param(ps, bg)};
    }

    struct State {
        Tensor<T> h, c;
    };

    State zero_state(Tape<T>& tp) const {
        return {tp.leaf(Tensor<T>::zeros({hidden})), tp.leaf(Tensor<T>::zeros({hidden}))};
    }

    static State step(Tape<T>& tp, const Bound& w, const Tensor<T>& x, const State& prev) {
        Tensor<T> i = tp.sigmoid(tp.add(tp.add(tp.matmul(w.wxi, x), tp.matmul(w.whi, prev.h)), w.bi));
        Tensor<T> f = tp.sigmoid(tp.add(tp.add(tp.matmul(w.wxf, x), tp.matmul(w.whf, prev.h)), w.bf));
        Tensor<T> o = tp.sigmoid(tp.add(tp.add(tp.matmul(w.wxo, x), tp.matmul(w.who, prev.h)), w.bo));
        Tensor<T> g = tp.tanh(tp.add(tp.add(tp.matmul(w.wxg, x), tp.matmul(w.whg, prev.h)), w.bg));
        Tensor<T> c = tp.add(tp.mul(f, prev.c), tp.mul(i, g));
        Tensor<T> h = tp.mul(o, tp.tanh(c));
        return {h, c};
    }
};

}  // namespace capsumt
