#pragma once

// Adam with bias correction. State tensors are shaped lazily on the first
// step and must line up with the same parameter list from then on.

#include <cmath>
#include <cstdint>
#include <vector>

#include "opstyle/tensor.hpp"

namespace opstyle {

class Adam {
public:
    Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {
        check_arg(lr > 0.0, "adam: learning rate must be positive");
        check_arg(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0,
                  "adam: betas must lie in [0,1)");
    }

    double lr() const { return lr_; }
    void set_lr(double lr) { lr_ = lr; }
    int64_t steps_taken() const { return t_; }

    void step(const std::vector<Tensor*>& params, const std::vector<Tensor*>& grads) {
        check_arg(params.size() == grads.size(), "adam: param/grad count mismatch");
        if (m_.empty()) {
            for (const Tensor* p : params) {
                m_.emplace_back(p->shape());
                v_.emplace_back(p->shape());
            }
        }
        check_arg(m_.size() == params.size(), "adam: parameter list changed size");
        ++t_;
        const double bc1 = 1.0 - std::pow(b1_, double(t_));
        const double bc2 = 1.0 - std::pow(b2_, double(t_));
        for (size_t k = 0; k < params.size(); ++k) {
            Tensor& p = *params[k];
            const Tensor& g = *grads[k];
            check_arg(p.same_shape(g) && p.same_shape(m_[k]), "adam: shape mismatch");
            float* pd = p.data();
            const float* gd = g.data();
            float* md = m_[k].data();
            float* vd = v_[k].data();
            for (int64_t i = 0; i < p.size(); ++i) {
                const double gi = double(gd[i]);
                const double m = double(b1_) * double(md[i]) + (1.0 - b1_) * gi;
                const double v = double(b2_) * double(vd[i]) + (1.0 - b2_) * gi * gi;
                md[i] = float(m);
                vd[i] = float(v);
                const double mhat = m / bc1;
                const double vhat = v / bc2;
                pd[i] = float(double(pd[i]) - lr_ * mhat / (std::sqrt(vhat) + eps_));
            }
        }
    }

private:
    double lr_, b1_, b2_, eps_;
    int64_t t_ = 0;
    std::vector<Tensor> m_, v_;
};

} // namespace opstyle
