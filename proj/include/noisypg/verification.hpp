#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "noisypg/grpo.hpp"
#include "noisypg/policy_env.hpp"
#include "noisypg/stats.hpp"

namespace noisypg {

// Self-check battery behind the CLI `verify` subcommand: every identity the
// estimators are built on, evaluated with exact enumeration on desk-scale
// environments and compared at fixed tolerances. Each check reports its
// worst-case residual so regressions show up as magnitudes, not just flags.

struct CheckResult {
    std::string name;
    double residual = 0.0;
    double tolerance = 0.0;
    bool passed = false;
};

inline bool all_passed(const std::vector<CheckResult>& checks) {
    for (const CheckResult& c : checks)
        if (!c.passed) return false;
    return true;
}

namespace detail {

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
    return worst;
}

inline double linf(const std::vector<double>& a) {
    double worst = 0.0;
    for (double v : a) worst = std::max(worst, std::abs(v));
    return worst;
}

}  // namespace detail

inline std::vector<CheckResult> run_verification() {
    std::vector<CheckResult> checks;
    auto record = [&checks](std::string name, double residual, double tolerance) {
        checks.push_back({std::move(name), residual, tolerance, residual <= tolerance});
    };

    const std::vector<double> rate_grid = {0.0, 0.1, 0.2, 0.3, 0.4};

    // Channel-level identities, swept over the rate grid.
    {
        double affine = 0.0, unbiased = 0.0, cancel = 0.0, variance = 0.0;
        for (double r0 : rate_grid)
            for (double r1 : rate_grid) {
                const NoiseRates rates(r0, r1);
                const double d = rates.retention();
                const auto m = channel_matrix(rates);
                for (int clean = 0; clean <= 1; ++clean) {
                    const double p1 = m[clean][1];

                    // E[observed | clean] is affine: d * clean + rho0.
                    affine = std::max(affine, std::abs(p1 - (d * clean + r0)));

                    // De-noised reward recovers the clean value in expectation,
                    // and its conditional variance is the observed-reward
                    // variance divided by the squared retention.
                    const double denoised_mean = m[clean][0] * backward_reward(kRewardZero, rates).value +
                                                 m[clean][1] * backward_reward(kRewardOne, rates).value;
                    unbiased = std::max(unbiased, std::abs(denoised_mean - clean));
                    const double observed_var = p1 * (1.0 - p1);
                    const double v0 = backward_reward(kRewardZero, rates).value - denoised_mean;
                    const double v1 = backward_reward(kRewardOne, rates).value - denoised_mean;
                    const double denoised_var = m[clean][0] * v0 * v0 + m[clean][1] * v1 * v1;
                    variance = std::max(variance,
                                        std::abs(denoised_var - observed_var / (d * d)));

                    // Forward weights: zero mean on correct answers, -retention
                    // on incorrect ones.
                    const double w_mean = m[clean][0] * forward_weight(kRewardZero, r1).value +
                                          m[clean][1] * forward_weight(kRewardOne, r1).value;
                    cancel = std::max(cancel, std::abs(w_mean - (clean == 1 ? 0.0 : -d)));
                }
            }
        record("observed reward expectation is affine in the clean reward", affine, 1e-12);
        record("de-noised reward is conditionally unbiased", unbiased, 1e-12);
        record("de-noised reward variance scales by the squared retention", variance, 1e-12);
        record("reweighting weights cancel on correct and subtract retention on incorrect",
               cancel, 1e-12);
    }

    // Enumerable environments for the gradient-level identities.
    const SoftmaxBandit two_arm({0.3, -0.2}, {1, 0});
    const SoftmaxBandit four_arm({0.4, -0.1, 0.2, -0.6}, {1, 0, 0, 0});
    const TokenChainEnv chain(2, 3, {0.1, -0.3, 0.2, 0.0, -0.2, 0.4}, {1, 6});
    const MultiPromptBandit mixture({SoftmaxBandit({0.2, -0.2}, {1, 0}),
                                     SoftmaxBandit({-0.4, 0.1, 0.3}, {0, 1, 0})});

    auto for_each_env = [&](auto&& fn) {
        fn(two_arm);
        fn(four_arm);
        fn(chain);
        fn(mixture);
    };

    {
        double score_mean = 0.0, mirror = 0.0, fd = 0.0;
        for_each_env([&](const auto& env) {
            score_mean = std::max(score_mean, detail::linf(score_expectation(env)));

            // E[1{incorrect} * score] must mirror grad J, because the full
            // score expectation vanishes.
            const std::vector<double> grad = exact_clean_gradient(env);
            std::vector<double> incorrect(env.param_dim(), 0.0);
            for (std::size_t k = 0; k < env.num_trajectories(); ++k)
                if (!env.correct(k)) env.accumulate_score(k, env.probability(k), incorrect);
            for (std::size_t c = 0; c < grad.size(); ++c)
                mirror = std::max(mirror, std::abs(incorrect[c] + grad[c]));

            // Central finite differences of J, relative to the gradient norm.
            auto scratch = env;
            const std::vector<double> theta = env.params();
            const double h = 1e-5;
            const double scale = std::max(l2_norm(grad), 1.0);
            for (std::size_t c = 0; c < theta.size(); ++c) {
                std::vector<double> bumped = theta;
                bumped[c] = theta[c] + h;
                scratch.set_params(bumped);
                const double hi = expected_true_reward(scratch);
                bumped[c] = theta[c] - h;
                scratch.set_params(bumped);
                const double lo = expected_true_reward(scratch);
                fd = std::max(fd, std::abs((hi - lo) / (2.0 * h) - grad[c]) / scale);
            }
        });
        record("score function has zero expectation", score_mean, 1e-10);
        record("incorrect-answer score mass mirrors the objective gradient", mirror, 1e-12);
        record("enumerated gradient matches central finite differences", fd, 1e-6);
    }

    {
        double direction = 0.0, scaling = 0.0, absorbed = 0.0, denoised = 0.0;
        const double eta = 0.37;
        for_each_env([&](const auto& env) {
            const std::vector<double> grad = exact_clean_gradient(env);
            const double grad_norm = l2_norm(grad);
            for (double r0 : rate_grid)
                for (double r1 : rate_grid) {
                    const NoiseRates rates(r0, r1);
                    const double d = rates.retention();

                    // Reweighted update: same direction as grad J, length
                    // scaled by the retention, so a step with rate eta equals
                    // a clean step with rate eta * retention.
                    const std::vector<double> fwd =
                        exact_expected_update(env, rates, ForwardUpdate{r1});
                    direction = std::max(direction, 1.0 - cosine(fwd, grad));
                    scaling = std::max(scaling, std::abs(l2_norm(fwd) / grad_norm - d));
                    for (std::size_t c = 0; c < grad.size(); ++c)
                        absorbed = std::max(absorbed,
                                            std::abs(eta * fwd[c] - eta * d * grad[c]));

                    // De-noised update at the true rates is the clean gradient.
                    const std::vector<double> bwd =
                        exact_expected_update(env, rates, BackwardUpdate{rates});
                    denoised = std::max(denoised, detail::max_abs_diff(bwd, grad));
                }
        });
        record("reweighted update points along the clean gradient", direction, 1e-9);
        record("reweighted update length recovers the retention factor", scaling, 1e-9);
        record("a reweighted step equals a clean step at a scaled learning rate", absorbed,
               1e-12);
        record("de-noised update at true rates equals the clean gradient", denoised, 1e-12);
    }

    // Group-advantage identities.
    {
        double affine_inv = 0.0;
        RandomStream rng = make_stream(99, 7);
        for (int trial = 0; trial < 32; ++trial) {
            std::vector<BinaryReward> rewards;
            int ones = 0;
            for (int i = 0; i < 8; ++i) {
                const bool one = bernoulli(rng, 0.5);
                ones += one ? 1 : 0;
                rewards.push_back(one ? kRewardOne : kRewardZero);
            }
            if (ones == 0 || ones == 8) continue;  // degenerate groups normalize to zero
            const RewardGroup group("g", rewards);
            const NoiseRates rates_hat(0.1, 0.2);
            const AdvantageAssignment plain = outcome_advantages(group, 0.0);
            const AdvantageAssignment denoised =
                backward_outcome_advantages(group, rates_hat, 0.0);
            for (std::size_t i = 0; i < group.size(); ++i)
                affine_inv = std::max(affine_inv,
                                      std::abs(plain.values[i][0] - denoised.values[i][0]));
        }
        record("group normalization absorbs the de-noising affine map", affine_inv, 1e-12);

        // Step-level credit on single-final-step trajectories reduces to the
        // outcome computation.
        std::vector<BinaryReward> rewards = {kRewardOne, kRewardZero, kRewardOne, kRewardZero};
        std::vector<TrajectorySteps> steps;
        for (BinaryReward r : rewards) steps.push_back({{0}, {r}});
        const RewardGroup stepped("g", rewards, std::vector<std::size_t>(4, 1), steps);
        const RewardGroup flat("g", rewards);
        const AdvantageAssignment by_steps = process_advantages(stepped, 0.0, Uncorrected{});
        const AdvantageAssignment by_outcome = outcome_advantages(flat, 0.0);
        double degeneration = 0.0;
        for (std::size_t i = 0; i < rewards.size(); ++i)
            degeneration = std::max(degeneration, std::abs(by_steps.values[i][0] -
                                                           by_outcome.values[i][0]));
        record("step-level credit degenerates to outcome credit on one-step trajectories",
               degeneration, 1e-12);
    }

    return checks;
}

}  // namespace noisypg
