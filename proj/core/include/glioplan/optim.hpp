#pragma once

#include "glioplan/nn.hpp"

namespace glioplan::nn {

// Fixed or scheduled step along the negative gradient.
class Sgd {
public:
    explicit Sgd(double lr) : lr_(lr) {}
    void set_lr(double lr) { lr_ = lr; }
    double lr() const { return lr_; }
    void step(ParamStore& ps);

private:
    double lr_;
};

// Per-parameter adaptive first/second-moment stepping.
class Adam {
public:
    explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}
    void set_lr(double lr) { lr_ = lr; }
    double lr() const { return lr_; }
    void step(ParamStore& ps);

private:
    double lr_, beta1_, beta2_, eps_;
    long t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

// Polynomial decay (exponent 0.9) pinned to both endpoints:
// lr(1) = lr_start and lr(epoch_end) = lr_end exactly; the horizon is solved
// from the endpoint pair. Epochs past the horizon clamp to lr_end.
class PolyDecaySchedule {
public:
    PolyDecaySchedule(double lr_start, double lr_end, int epoch_end);
    double lr_at(int epoch) const; // epoch is 1-based

private:
    double lr_start_, lr_end_;
    double horizon_;
};

} // namespace glioplan::nn
