#pragma once

#include "uslam/core/errors.hpp"

namespace uslam {

/// Weights shared by the uncertainty loss, the DBA objective, and the render
/// loss. All exposed in the pipeline config.
struct LossWeights {
    double lambda1 = 0.5;    // depth term inside the uncertainty loss
    double lambda2 = 0.1;    // uncertainty variance regularizer
    double lambda3 = 0.5;    // log-beta regularizer
    double lambda4 = 0.05;   // disparity regularization in the DBA objective
    double lambda5 = 0.9;    // color term of the render loss
    double lambda6 = 0.1;    // depth term of the render loss
    double lambda7 = 10.0;   // isotropy regularizer
    double lambda_ssim = 0.2;

    void validate() const {
        auto ok = [](double v) { return std::isfinite(v) && v >= 0; };
        if (!(ok(lambda1) && ok(lambda2) && ok(lambda3) && ok(lambda4) && ok(lambda5) &&
              ok(lambda6) && ok(lambda7) && lambda_ssim >= 0 && lambda_ssim <= 1))
            throw InvalidConfig("loss weights must be finite and non-negative");
    }
};

}  // namespace uslam
