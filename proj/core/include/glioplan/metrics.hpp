#pragma once

#include <optional>
#include <vector>

#include "glioplan/volume.hpp"

namespace glioplan {

struct MetricError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Binary confusion rates. tp_rate + fn_rate = 1 over positives,
// tn_rate + fp_rate = 1 over negatives. A rate is absent when its class is
// empty in the sample.
struct ConfusionStats {
    std::optional<double> tp_rate, tn_rate, fp_rate, fn_rate;
};

struct SSIMParams {
    double k1 = 0.01;
    double k2 = 0.03;
    double dynamic_range = 1.0; // L; volumes are min-max normalized
    int window = 8;             // cubic side w (square for 2D inputs)

    double c1() const { return (k1 * dynamic_range) * (k1 * dynamic_range); }
    double c2() const { return (k2 * dynamic_range) * (k2 * dynamic_range); }
};

// -sum_c y_c log(max(p_c, 1e-12)). p must sum to 1 within 1e-6.
double cross_entropy(const std::vector<double>& p, const std::vector<double>& y_one_hot);

inline constexpr double kLogClamp = 1e-12;

// 0.5*||w||^2 + C * sum_i max(0, 1 - y_i (w.x_i + b)), y_i in {-1,+1}.
double hinge_objective(const std::vector<double>& w, double b, double C,
                       const std::vector<std::vector<double>>& X,
                       const std::vector<int>& y);

// 1 - 2|P∩G| / (|P| + |G|) with smoothing eps = 1e-6 in numerator and
// denominator. P may be soft (values in [0,1]); G is binary.
double dice_loss(const std::vector<double>& pred, const std::vector<double>& truth);
inline double dice_similarity(const std::vector<double>& pred, const std::vector<double>& truth) {
    return 1.0 - dice_loss(pred, truth);
}

double mse(const std::vector<double>& y, const std::vector<double>& yhat);

// |P∩G| / |P∪G|; 1 when both masks are empty.
double iou(const std::vector<double>& pred, const std::vector<double>& truth);

// Mask-channel conveniences.
double dice_loss(const SegMask& pred, const SegMask& truth, int region);
double iou(const SegMask& pred, const SegMask& truth, int region);

// Mean over sliding windows of the luminance/contrast/structure product.
// Inputs must share dims and hold values in [0, L]. 3D volumes use cubic
// windows; single-slice volumes (Z = 1) degenerate to square windows.
double ssim(const Volume& x, const Volume& y, const SSIMParams& params = {});

// Binary confusion from {0,1} predictions and labels.
ConfusionStats confusion(const std::vector<int>& preds, const std::vector<int>& labels);

// One-vs-rest confusion per class for multiclass predictions in [0, classes).
std::vector<ConfusionStats> confusion_multiclass(const std::vector<int>& preds,
                                                 const std::vector<int>& labels, int classes);

} // namespace glioplan
