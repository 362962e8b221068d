#include "glioplan/optim.hpp"

#include <cmath>

namespace glioplan::nn {

void Sgd::step(ParamStore& ps) {
    for (std::size_t i = 0; i < ps.count(); ++i) {
        ad::Var p = ps.var(i);
        auto node = p.node();
        if (node->grad.size() != node->value.size()) continue; // untouched this step
        for (std::size_t j = 0; j < node->value.size(); ++j)
            node->value[j] -= lr_ * node->grad[j];
    }
}

void Adam::step(ParamStore& ps) {
    if (m_.size() != ps.count()) {
        m_.resize(ps.count());
        v_.resize(ps.count());
    }
    ++t_;
    double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < ps.count(); ++i) {
        ad::Var p = ps.var(i);
        auto node = p.node();
        if (node->grad.size() != node->value.size()) continue;
        if (m_[i].size() != node->value.size()) {
            m_[i].assign(node->value.size(), 0.0);
            v_[i].assign(node->value.size(), 0.0);
        }
        for (std::size_t j = 0; j < node->value.size(); ++j) {
            double g = node->grad[j];
            m_[i][j] = beta1_ * m_[i][j] + (1.0 - beta1_) * g;
            v_[i][j] = beta2_ * v_[i][j] + (1.0 - beta2_) * g * g;
            double mhat = m_[i][j] / bc1;
            double vhat = v_[i][j] / bc2;
            node->value[j] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
        }
    }
}

PolyDecaySchedule::PolyDecaySchedule(double lr_start, double lr_end, int epoch_end)
    : lr_start_(lr_start), lr_end_(lr_end) {
    if (lr_start <= 0.0 || lr_end <= 0.0 || lr_end > lr_start || epoch_end < 2)
        throw ad::AutogradError("PolyDecaySchedule: invalid endpoints");
    double ratio = std::pow(lr_end / lr_start, 1.0 / 0.9);
    horizon_ = static_cast<double>(epoch_end - 1) / (1.0 - ratio);
}

double PolyDecaySchedule::lr_at(int epoch) const {
    double t = static_cast<double>(epoch - 1) / horizon_;
    if (t >= 1.0) return lr_end_;
    double lr = lr_start_ * std::pow(1.0 - t, 0.9);
    return lr < lr_end_ ? lr_end_ : lr;
}

} // namespace glioplan::nn
