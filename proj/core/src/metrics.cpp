#include "glioplan/metrics.hpp"

#include <algorithm>
#include <cmath>

namespace glioplan {

double cross_entropy(const std::vector<double>& p, const std::vector<double>& y) {
    if (p.size() != y.size()) throw MetricError("cross_entropy: length mismatch");
    double sum = 0.0;
    for (double v : p) sum += v;
    if (std::abs(sum - 1.0) > 1e-6) throw MetricError("cross_entropy: p must sum to 1");
    double loss = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i)
        loss -= y[i] * std::log(std::max(p[i], kLogClamp));
    return loss;
}

double hinge_objective(const std::vector<double>& w, double b, double C,
                       const std::vector<std::vector<double>>& X,
                       const std::vector<int>& y) {
    if (C <= 0.0) throw MetricError("hinge_objective: C must be > 0");
    if (X.size() != y.size()) throw MetricError("hinge_objective: X/y length mismatch");
    double reg = 0.0;
    for (double wi : w) reg += wi * wi;
    double obj = 0.5 * reg;
    for (std::size_t i = 0; i < X.size(); ++i) {
        if (X[i].size() != w.size()) throw MetricError("hinge_objective: feature dim mismatch");
        double score = b;
        for (std::size_t j = 0; j < w.size(); ++j) score += w[j] * X[i][j];
        obj += C * std::max(0.0, 1.0 - y[i] * score);
    }
    return obj;
}

namespace {
constexpr double kDiceEps = 1e-6;
}

double dice_loss(const std::vector<double>& pred, const std::vector<double>& truth) {
    if (pred.size() != truth.size()) throw MetricError("dice_loss: dim mismatch");
    double inter = 0.0, psum = 0.0, gsum = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        inter += pred[i] * truth[i];
        psum += pred[i];
        gsum += truth[i];
    }
    return 1.0 - (2.0 * inter + kDiceEps) / (psum + gsum + kDiceEps);
}

double mse(const std::vector<double>& y, const std::vector<double>& yhat) {
    if (y.size() != yhat.size()) throw MetricError("mse: dim mismatch");
    if (y.empty()) throw MetricError("mse: empty input");
    double acc = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        double d = y[i] - yhat[i];
        acc += d * d;
    }
    return acc / static_cast<double>(y.size());
}

double iou(const std::vector<double>& pred, const std::vector<double>& truth) {
    if (pred.size() != truth.size()) throw MetricError("iou: dim mismatch");
    std::size_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        bool p = pred[i] != 0.0, g = truth[i] != 0.0;
        inter += (p && g) ? 1 : 0;
        uni += (p || g) ? 1 : 0;
    }
    if (uni == 0) return 1.0;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

namespace {
std::vector<double> region_values(const SegMask& m, int region) {
    std::size_t n = m.channels.voxels_per_channel();
    const double* p = m.channels.data().data() + region * n;
    return std::vector<double>(p, p + n);
}
} // namespace

double dice_loss(const SegMask& pred, const SegMask& truth, int region) {
    return dice_loss(region_values(pred, region), region_values(truth, region));
}

double iou(const SegMask& pred, const SegMask& truth, int region) {
    return iou(region_values(pred, region), region_values(truth, region));
}

namespace {

struct WindowStats {
    double mu_x, mu_y, var_x, var_y, cov;
};

double ssim_from_stats(const WindowStats& s, const SSIMParams& p) {
    double c1 = p.c1(), c2 = p.c2();
    double num = (2.0 * s.mu_x * s.mu_y + c1) * (2.0 * s.cov + c2);
    double den = (s.mu_x * s.mu_x + s.mu_y * s.mu_y + c1) * (s.var_x + s.var_y + c2);
    return num / den;
}

} // namespace

double ssim(const Volume& x, const Volume& y, const SSIMParams& params) {
    if (!x.same_dims(y)) throw MetricError("ssim: dim mismatch");
    const int X = x.xdim(), Y = x.ydim(), Z = x.zdim();
    int wx = std::min(params.window, X);
    int wy = std::min(params.window, Y);
    int wz = std::min(params.window, Z);
    double total = 0.0;
    std::size_t count = 0;
    double inv_n = 1.0 / (static_cast<double>(wx) * wy * wz);
    for (int c = 0; c < x.channels(); ++c)
        for (int z0 = 0; z0 + wz <= Z; ++z0)
            for (int y0 = 0; y0 + wy <= Y; ++y0)
                for (int x0 = 0; x0 + wx <= X; ++x0) {
                    double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
                    for (int dz = 0; dz < wz; ++dz)
                        for (int dy = 0; dy < wy; ++dy)
                            for (int dx = 0; dx < wx; ++dx) {
                                double a = x.at(c, x0 + dx, y0 + dy, z0 + dz);
                                double b = y.at(c, x0 + dx, y0 + dy, z0 + dz);
                                sx += a;
                                sy += b;
                                sxx += a * a;
                                syy += b * b;
                                sxy += a * b;
                            }
                    WindowStats st;
                    st.mu_x = sx * inv_n;
                    st.mu_y = sy * inv_n;
                    st.var_x = std::max(0.0, sxx * inv_n - st.mu_x * st.mu_x);
                    st.var_y = std::max(0.0, syy * inv_n - st.mu_y * st.mu_y);
                    st.cov = sxy * inv_n - st.mu_x * st.mu_y;
                    total += ssim_from_stats(st, params);
                    ++count;
                }
    return total / static_cast<double>(count);
}

ConfusionStats confusion(const std::vector<int>& preds, const std::vector<int>& labels) {
    if (preds.size() != labels.size()) throw MetricError("confusion: length mismatch");
    if (preds.empty()) throw MetricError("confusion: empty input");
    std::size_t tp = 0, tn = 0, fp = 0, fn = 0, pos = 0, neg = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        bool p = preds[i] != 0, l = labels[i] != 0;
        pos += l ? 1 : 0;
        neg += l ? 0 : 1;
        if (p && l) ++tp;
        else if (!p && !l) ++tn;
        else if (p && !l) ++fp;
        else ++fn;
    }
    ConfusionStats s;
    if (pos > 0) {
        s.tp_rate = static_cast<double>(tp) / pos;
        s.fn_rate = static_cast<double>(fn) / pos;
    }
    if (neg > 0) {
        s.tn_rate = static_cast<double>(tn) / neg;
        s.fp_rate = static_cast<double>(fp) / neg;
    }
    return s;
}

std::vector<ConfusionStats> confusion_multiclass(const std::vector<int>& preds,
                                                 const std::vector<int>& labels, int classes) {
    std::vector<ConfusionStats> out;
    out.reserve(classes);
    for (int c = 0; c < classes; ++c) {
        std::vector<int> p(preds.size()), l(labels.size());
        for (std::size_t i = 0; i < preds.size(); ++i) {
            p[i] = preds[i] == c ? 1 : 0;
            l[i] = labels[i] == c ? 1 : 0;
        }
        out.push_back(confusion(p, l));
    }
    return out;
}

} // namespace glioplan
