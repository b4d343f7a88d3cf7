#pragma once

// Central finite-difference gradient checking used by the unit tests and the
// acceptance suite. The evaluator rebuilds its graph from the current tensor
// contents on every call, so perturbations flow through naturally.

#include <functional>
#include <vector>

#include "tricoat/tape.hpp"

namespace tricoat::testutil {

using Mat = Eigen::MatrixXd;

struct GradCheckResult {
    double max_rel_err = 0.0;
    long entries = 0;
};

// Guarded relative error. The denominator floor sits well above the central
// difference noise floor (~1e-9 absolute for O(1) losses at step 1e-5) so
// near-zero gradients compare in absolute terms.
inline double rel_err(double a, double b) {
    return std::abs(a - b) / std::max(1e-3, std::abs(a) + std::abs(b));
}

// tensors: matrices the scalar depends on; analytic: matching gradients.
// eval(): recomputes the scalar from the tensors' current contents.
inline GradCheckResult finite_difference_check(const std::vector<Mat*>& tensors,
                                               const std::vector<Mat>& analytic,
                                               const std::function<double()>& eval,
                                               double step = 1e-5) {
    GradCheckResult res;
    for (size_t t = 0; t < tensors.size(); ++t) {
        Mat& m = *tensors[t];
        for (long i = 0; i < m.rows(); ++i) {
            for (long j = 0; j < m.cols(); ++j) {
                double saved = m(i, j);
                m(i, j) = saved + step;
                double up = eval();
                m(i, j) = saved - step;
                double down = eval();
                m(i, j) = saved;
                double fd = (up - down) / (2.0 * step);
                res.max_rel_err = std::max(res.max_rel_err, rel_err(analytic[t](i, j), fd));
                ++res.entries;
            }
        }
    }
    return res;
}

}  // namespace tricoat::testutil
