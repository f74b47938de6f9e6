#pragma once

#include <array>
#include <stdexcept>

#include "noisypg/rng.hpp"

namespace noisypg {

// A verifier observation: exactly 0 or 1. Clean and observed rewards share
// this type; which role a value plays is determined by position in an
// operation's signature.
class BinaryReward {
  public:
    constexpr explicit BinaryReward(int value) : value_(value) {
        if (value != 0 && value != 1)
            throw std::invalid_argument("BinaryReward: value must be 0 or 1");
    }

    constexpr int value() const noexcept { return value_; }
    constexpr bool positive() const noexcept { return value_ == 1; }

    friend constexpr bool operator==(BinaryReward, BinaryReward) = default;

  private:
    int value_;
};

inline constexpr BinaryReward kRewardZero{0};
inline constexpr BinaryReward kRewardOne{1};

// Asymmetric binary noise channel.
//   rho0 = P(observe 1 | clean 0)   false positive rate
//   rho1 = P(observe 0 | clean 1)   false negative rate
// Both rates must lie in [0, 0.5): at 0.5 the observation carries no signal
// about the clean reward and every correction denominator vanishes.
// Construction fails hard on out-of-range rates; nothing is clamped.
class NoiseRates {
  public:
    NoiseRates(double rho0, double rho1) : rho0_(rho0), rho1_(rho1) {
        if (!(rho0 >= 0.0 && rho0 < 0.5))
            throw std::invalid_argument("NoiseRates: rho0 must be in [0, 0.5)");
        if (!(rho1 >= 0.0 && rho1 < 0.5))
            throw std::invalid_argument("NoiseRates: rho1 must be in [0, 0.5)");
        if (!(retention() > 0.0))
            throw std::invalid_argument("NoiseRates: 1 - rho0 - rho1 must be positive");
    }

    double rho0() const noexcept { return rho0_; }
    double rho1() const noexcept { return rho1_; }

    // Signal retained by the channel: 1 - rho0 - rho1. Strictly positive.
    double retention() const noexcept { return 1.0 - rho0_ - rho1_; }

    bool noiseless() const noexcept { return rho0_ == 0.0 && rho1_ == 0.0; }

  private:
    double rho0_;
    double rho1_;
};

// Passes a clean reward through the channel. Consumes exactly one draw from
// the stream regardless of outcome, so matched streams stay aligned across
// configurations that differ only in rates.
inline BinaryReward corrupt(BinaryReward clean, const NoiseRates& rates, RandomStream& rng) {
    const double flip_p = clean.positive() ? rates.rho1() : rates.rho0();
    const bool flip = bernoulli(rng, flip_p);
    return flip ? BinaryReward(1 - clean.value()) : clean;
}

// E[observed | clean]. Closed form of the channel's conditional expectation;
// equals (1 - rho0 - rho1) * clean + rho0.
inline double expected_observed(BinaryReward clean, const NoiseRates& rates) {
    return clean.positive() ? 1.0 - rates.rho1() : rates.rho0();
}

// Row-stochastic transition matrix indexed [clean][observed].
inline std::array<std::array<double, 2>, 2> channel_matrix(const NoiseRates& rates) {
    return {{{1.0 - rates.rho0(), rates.rho0()},
             {rates.rho1(), 1.0 - rates.rho1()}}};
}

}  // namespace noisypg
