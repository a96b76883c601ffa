#pragma once

#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "seqtrans/tensor.hpp"

// Central-difference gradient oracle, independent of the tape's backward pass.
// `loss` must rebuild the forward from the current contents of `params`.
namespace testsupport {

inline double rel_err(double a, double b) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1.0});
}

inline double fd_max_rel_err(std::span<seqtrans::nn::Array* const> params,
                             const std::function<double()>& loss,
                             const std::vector<std::vector<double>>& analytic,
                             double step = 1e-3) {
    double worst = 0.0;
    for (std::size_t k = 0; k < params.size(); ++k) {
        seqtrans::nn::Array& arr = *params[k];
        for (std::size_t i = 0; i < arr.data.size(); ++i) {
            const double saved = arr.data[i];
            arr.data[i] = saved + step;
            const double f_plus = loss();
            arr.data[i] = saved - step;
            const double f_minus = loss();
            arr.data[i] = saved;
            const double fd = (f_plus - f_minus) / (2.0 * step);
            worst = std::max(worst, rel_err(analytic[k][i], fd));
        }
    }
    return worst;
}

}  // namespace testsupport
