#pragma once

#include <cmath>
#include <vector>

#include "capsumt/common.hpp"
#include "capsumt/tape.hpp"

namespace capsumt {

// Adam with bias correction (Kingma & Ba). Moments are kept per parameter id
// and allocated lazily on the first step so the optimizer can be constructed
// before the model finishes registering parameters.
template <class T>
class Adam {
public:
    explicit Adam(double lr = 2e-5, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void step(ParameterSet<T>& params, const GradMap<T>& grads) {
        ++t_;
        if (m_.size() < params.size()) {
            m_.resize(params.size());
            v_.resize(params.size());
        }
        double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
        double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
        for (int id = 0; id < static_cast<int>(params.size()); ++id) {
            auto it = grads.find(id);
            if (it == grads.end()) continue;
            Tensor<T>& p = params[id].value;
            const Tensor<T>& g = it->second;
            if (g.shape() != p.shape())
                throw ShapeError("adam: gradient shape " + shape_str(g.shape()) +
                                 " != parameter '" + params[id].name + "' shape " +
                                 shape_str(p.shape()));
            auto& m = m_[static_cast<std::size_t>(id)];
            auto& v = v_[static_cast<std::size_t>(id)];
            if (m.size() != p.size()) {
                m.assign(p.size(), T(0));
                v.assign(p.size(), T(0));
            }
            for (std::size_t i = 0; i < p.size(); ++i) {
                m[i] = static_cast<T>(beta1_) * m[i] + static_cast<T>(1.0 - beta1_) * g[i];
                v[i] = static_cast<T>(beta2_) * v[i] + static_cast<T>(1.0 - beta2_) * g[i] * g[i];
                double mhat = static_cast<double>(m[i]) / bc1;
                double vhat = static_cast<double>(v[i]) / bc2;
                p[i] -= static_cast<T>(lr_ * mhat / (std::sqrt(vhat) + eps_));
            }
        }
    }

    std::uint64_t steps() const { return t_; }
    double learning_rate() const { return lr_; }
    void set_learning_rate(double lr) { lr_ = lr; }

private:
    double lr_, beta1_, beta2_, eps_;
    std::uint64_t t_ = 0;
    std::vector<std::vector<T>> m_, v_;
};

}  // namespace capsumt
