#pragma once

#include <stdexcept>

#include "noisypg/reward_channel.hpp"

namespace noisypg {

// De-noised reward surrogate. Deliberately NOT clamped to [0, 1]: the two
// attainable values (-rho0/(1-rho0-rho1) and (1-rho0)/(1-rho0-rho1)) sit
// outside the unit interval by construction, and that spread is what makes
// the estimator unbiased.
struct CorrectedReward {
    double value;
};

// Per-sample weight for the reweighting estimator. Negative for observed
// zeros, positive for observed ones.
struct ForwardWeight {
    double value;
};

// Unbiased surrogate for the clean reward given the assumed rates:
//   (observed - rho0_hat) / (1 - rho0_hat - rho1_hat).
// Averaging this surrogate over the channel recovers the clean reward
// exactly when the assumed rates match the true ones.
inline CorrectedReward backward_reward(BinaryReward observed, const NoiseRates& rates_hat) {
    return {(static_cast<double>(observed.value()) - rates_hat.rho0()) / rates_hat.retention()};
}

// Weight attached to a sample with the given observed reward:
//   observed = 0  ->  rho1_hat - 1
//   observed = 1  ->  rho1_hat
// Only the false negative rate enters; the false positive rate is never
// consulted. Rejects rho1_hat outside [0, 0.5) just like NoiseRates does.
inline ForwardWeight forward_weight(BinaryReward observed, double rho1_hat) {
    if (!(rho1_hat >= 0.0 && rho1_hat < 0.5))
        throw std::invalid_argument("forward_weight: rho1_hat must be in [0, 0.5)");
    return {observed.positive() ? rho1_hat : rho1_hat - 1.0};
}

// E[forward_weight(observed) | clean] under the channel, with the weight's
// rho1_hat matching the channel's rho1. Closed form:
//   clean = 1  ->  0
//   clean = 0  ->  -(1 - rho0 - rho1)
// The zero for clean positives is what removes the unknowable false negative
// term from the expected update.
inline double expected_forward_weight(BinaryReward clean, const NoiseRates& rates) {
    return clean.positive() ? 0.0 : -rates.retention();
}

}  // namespace noisypg
