#pragma once

#include <cmath>
#include <cstddef>
#include <string>

#include "rcdepth/common.hpp"
#include "rcdepth/tensor.hpp"

// Depth evaluation metrics over ground-truth pixels with 0 < d <= cap.
// Predictions are never masked by their own value.
namespace rcdepth {

struct MetricReport {
    double mae = 0.0;      // meters
    double rmse = 0.0;     // meters
    double absrel = 0.0;
    double log10 = 0.0;
    double rmselog = 0.0;
    double delta1 = 0.0;
    double delta2 = 0.0;
    double delta3 = 0.0;
    double eval_cap = 0.0;   // meters
    std::size_t pixel_count = 0;
};

inline MetricReport evaluate_depth(const Tensor& pred, const Tensor& gt, double cap) {
    if (!pred.same_shape(gt)) throw ShapeError("evaluate_depth: prediction/ground-truth shape mismatch");
    if (cap <= 0.0) throw ConfigError("evaluate_depth: cap must be positive");
    MetricReport r;
    r.eval_cap = cap;
    double se = 0.0, selog = 0.0;
    for (std::size_t i = 0; i < gt.numel(); ++i) {
        const double d = gt[i];
        if (!(d > 0.0) || d > cap) continue;
        const double p = pred[i];
        if (!(p > 0.0)) throw DataError("evaluate_depth: non-positive prediction at a valid pixel");
        ++r.pixel_count;
        const double err = p - d;
        r.mae += std::abs(err);
        se += err * err;
        r.absrel += std::abs(err) / d;
        r.log10 += std::abs(std::log10(p) - std::log10(d));
        const double dl = std::log(p) - std::log(d);
        selog += dl * dl;
        const double ratio = p > d ? p / d : d / p;
        if (ratio < 1.25) r.delta1 += 1.0;
        if (ratio < 1.5625) r.delta2 += 1.0;
        if (ratio < 1.953125) r.delta3 += 1.0;
    }
    if (r.pixel_count == 0) throw DataError("evaluate_depth: no valid ground-truth pixels within the cap");
    const double n = static_cast<double>(r.pixel_count);
    r.mae /= n;
    r.rmse = std::sqrt(se / n);
    r.absrel /= n;
    r.log10 /= n;
    r.rmselog = std::sqrt(selog / n);
    r.delta1 /= n;
    r.delta2 /= n;
    r.delta3 /= n;
    return r;
}

inline std::string metric_csv_header() {
    return "mae,rmse,absrel,log10,rmselog,delta1,delta2,delta3,eval_cap,pixel_count";
}

}  // namespace rcdepth
