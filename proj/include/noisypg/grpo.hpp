#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "noisypg/corrections.hpp"
#include "noisypg/reward_channel.hpp"

namespace noisypg {

// Step-level supervision attached to one trajectory: token positions
// (0-based, strictly increasing, each < trajectory length) and the binary
// reward observed at each position.
struct TrajectorySteps {
    std::vector<std::size_t> indices;
    std::vector<BinaryReward> rewards;
};

// One prompt's group of K sampled trajectories. Group statistics are
// undefined below K = 2, so construction rejects smaller groups. Token
// lengths default to 1 per trajectory (pure outcome supervision); step
// structure is optional and, when present, must cover every trajectory.
class RewardGroup {
  public:
    RewardGroup(std::string prompt_id, std::vector<BinaryReward> rewards,
                std::vector<std::size_t> lengths = {},
                std::vector<TrajectorySteps> steps = {})
        : prompt_id_(std::move(prompt_id)),
          rewards_(std::move(rewards)),
          lengths_(std::move(lengths)),
          steps_(std::move(steps)) {
        if (rewards_.size() < 2)
            throw std::invalid_argument("RewardGroup: need at least 2 trajectories");
        if (lengths_.empty()) lengths_.assign(rewards_.size(), 1);
        if (lengths_.size() != rewards_.size())
            throw std::invalid_argument("RewardGroup: lengths/rewards size mismatch");
        for (std::size_t len : lengths_)
            if (len == 0) throw std::invalid_argument("RewardGroup: zero-length trajectory");
        if (!steps_.empty()) {
            if (steps_.size() != rewards_.size())
                throw std::invalid_argument("RewardGroup: steps must cover every trajectory");
            for (std::size_t i = 0; i < steps_.size(); ++i) validate_steps(i);
        }
    }

    const std::string& prompt_id() const noexcept { return prompt_id_; }
    const std::vector<BinaryReward>& rewards() const noexcept { return rewards_; }
    const std::vector<std::size_t>& lengths() const noexcept { return lengths_; }
    const std::vector<TrajectorySteps>& steps() const noexcept { return steps_; }
    std::size_t size() const noexcept { return rewards_.size(); }
    bool has_steps() const noexcept { return !steps_.empty(); }

  private:
    void validate_steps(std::size_t i) const {
        const auto& s = steps_[i];
        if (s.indices.size() != s.rewards.size())
            throw std::invalid_argument("RewardGroup: step indices/rewards size mismatch");
        for (std::size_t j = 0; j < s.indices.size(); ++j) {
            if (s.indices[j] >= lengths_[i])
                throw std::invalid_argument("RewardGroup: step index past trajectory end");
            if (j > 0 && s.indices[j] <= s.indices[j - 1])
                throw std::invalid_argument("RewardGroup: step indices must be strictly increasing");
        }
    }

    std::string prompt_id_;
    std::vector<BinaryReward> rewards_;
    std::vector<std::size_t> lengths_;
    std::vector<TrajectorySteps> steps_;
};

// Per-trajectory, per-token advantage values A[i][t], t < length(i).
struct AdvantageAssignment {
    std::vector<std::vector<double>> values;

    std::size_t num_trajectories() const noexcept { return values.size(); }
    std::span<const double> tokens(std::size_t i) const { return values.at(i); }
};

struct Uncorrected {};
struct BackwardCorrection {
    NoiseRates rates;
};
struct ForwardCorrection {
    double rho1_hat;
};
using CorrectionMode = std::variant<Uncorrected, BackwardCorrection, ForwardCorrection>;

namespace detail {

// Population statistics: std divides by N, not N - 1.
inline std::pair<double, double> mean_and_population_std(std::span<const double> xs) {
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= static_cast<double>(xs.size());
    double var = 0.0;
    for (double x : xs) var += (x - mean) * (x - mean);
    var /= static_cast<double>(xs.size());
    return {mean, std::sqrt(var)};
}

// (x - mean) / (std + epsilon) applied in place. A degenerate group (all
// values equal) normalizes to all zeros: that is the limiting value, not an
// error, so training loops stay total. Equality is checked on the raw values
// rather than on the computed std, whose rounding residue would otherwise
// turn an exactly-degenerate group into +-1 advantages at epsilon = 0.
inline void normalize_in_place(std::vector<double>& xs, double epsilon) {
    const bool degenerate = std::all_of(xs.begin(), xs.end(),
                                        [&](double x) { return x == xs.front(); });
    if (degenerate) {
        std::fill(xs.begin(), xs.end(), 0.0);
        return;
    }
    auto [mean, stddev] = mean_and_population_std(xs);
    const double denom = stddev + epsilon;
    for (double& x : xs) x = (x - mean) / denom;
}

inline void require_epsilon(double epsilon) {
    if (epsilon < 0.0)
        throw std::invalid_argument("advantages: epsilon must be non-negative");
}

}  // namespace detail

// Group-normalized outcome advantages: a_i = (r_i - mean) / (std + epsilon),
// broadcast to every token of trajectory i. epsilon = 0 is permitted (the
// exact-normalization path used by the invariance checks); negative epsilon
// is rejected.
inline AdvantageAssignment outcome_advantages(const RewardGroup& group, double epsilon) {
    detail::require_epsilon(epsilon);
    std::vector<double> values(group.size());
    for (std::size_t i = 0; i < group.size(); ++i)
        values[i] = static_cast<double>(group.rewards()[i].value());
    detail::normalize_in_place(values, epsilon);

    AdvantageAssignment out;
    out.values.resize(group.size());
    for (std::size_t i = 0; i < group.size(); ++i)
        out.values[i].assign(group.lengths()[i], values[i]);
    return out;
}

// Outcome advantages over de-noised rewards: each observed reward is mapped
// through backward_reward before the group statistics are taken. Since the
// map is positive affine, normalization cancels it; with epsilon > 0 the
// results differ from the uncorrected ones only through the epsilon term.
inline AdvantageAssignment backward_outcome_advantages(const RewardGroup& group,
                                                       const NoiseRates& rates_hat,
                                                       double epsilon) {
    detail::require_epsilon(epsilon);
    std::vector<double> values(group.size());
    for (std::size_t i = 0; i < group.size(); ++i)
        values[i] = backward_reward(group.rewards()[i], rates_hat).value;
    detail::normalize_in_place(values, epsilon);

    AdvantageAssignment out;
    out.values.resize(group.size());
    for (std::size_t i = 0; i < group.size(); ++i)
        out.values[i].assign(group.lengths()[i], values[i]);
    return out;
}

// Reweighted outcome advantages: normalize the observed rewards as-is, then
// scale trajectory i's advantage by forward_weight(r_i). Weighting happens
// after normalization, so the weight also flips the sign of observed-zero
// advantages.
inline AdvantageAssignment forward_outcome_advantages(const RewardGroup& group, double rho1_hat,
                                                      double epsilon) {
    AdvantageAssignment out = outcome_advantages(group, epsilon);
    for (std::size_t i = 0; i < group.size(); ++i) {
        const double w = forward_weight(group.rewards()[i], rho1_hat).value;
        for (double& a : out.values[i]) a *= w;
    }
    return out;
}

// Step-level advantages. All step rewards in the group are pooled, optionally
// de-noised (backward mode), normalized with the pooled mean and population
// std, and accumulated as suffix sums: token t collects every step at
// position >= t of its own trajectory. Forward mode scales each normalized
// step term by the weight of that step's raw observed reward before the
// suffix accumulation.
inline AdvantageAssignment process_advantages(const RewardGroup& group, double epsilon,
                                              const CorrectionMode& mode) {
    detail::require_epsilon(epsilon);
    if (!group.has_steps())
        throw std::invalid_argument("process_advantages: group lacks step structure");

    std::size_t total_steps = 0;
    for (const auto& s : group.steps()) {
        if (s.indices.empty())
            throw std::invalid_argument("process_advantages: trajectory with no steps");
        total_steps += s.indices.size();
    }
    if (total_steps < 2)
        throw std::invalid_argument("process_advantages: need at least 2 steps in the group");

    const bool backward = std::holds_alternative<BackwardCorrection>(mode);
    const bool forward = std::holds_alternative<ForwardCorrection>(mode);

    std::vector<double> pooled;
    pooled.reserve(total_steps);
    for (const auto& s : group.steps())
        for (BinaryReward r : s.rewards)
            pooled.push_back(backward
                                 ? backward_reward(r, std::get<BackwardCorrection>(mode).rates).value
                                 : static_cast<double>(r.value()));
    detail::normalize_in_place(pooled, epsilon);

    AdvantageAssignment out;
    out.values.resize(group.size());
    std::size_t cursor = 0;
    for (std::size_t i = 0; i < group.size(); ++i) {
        const auto& s = group.steps()[i];
        std::vector<double> terms(s.indices.size());
        for (std::size_t j = 0; j < s.indices.size(); ++j) {
            double term = pooled[cursor + j];
            if (forward)
                term *= forward_weight(s.rewards[j], std::get<ForwardCorrection>(mode).rho1_hat).value;
            terms[j] = term;
        }
        cursor += s.indices.size();

        // Suffix sums walked from the trajectory tail: A[t] picks up each
        // step whose position is >= t.
        auto& tokens = out.values[i];
        tokens.assign(group.lengths()[i], 0.0);
        double running = 0.0;
        std::size_t next_step = s.indices.size();
        for (std::size_t t = group.lengths()[i]; t-- > 0;) {
            while (next_step > 0 && s.indices[next_step - 1] >= t) {
                --next_step;
                running += terms[next_step];
            }
            tokens[t] = running;
        }
    }
    return out;
}

// Clipped importance-weighted objective:
//   (1/K) sum_i (1/|y_i|) sum_t min(r * A, clamp(r, 1 - eps, 1 + eps) * A).
// Token means keep long trajectories from dominating the group average.
inline double clipped_surrogate(const std::vector<std::vector<double>>& ratios,
                                const AdvantageAssignment& advantages, double clip_eps) {
    if (clip_eps <= 0.0)
        throw std::invalid_argument("clipped_surrogate: clip_eps must be positive");
    if (ratios.size() != advantages.values.size())
        throw std::invalid_argument("clipped_surrogate: ratio/advantage shape mismatch");
    if (ratios.empty()) throw std::invalid_argument("clipped_surrogate: empty batch");

    double total = 0.0;
    for (std::size_t i = 0; i < ratios.size(); ++i) {
        const auto& r = ratios[i];
        const auto& a = advantages.values[i];
        if (r.size() != a.size())
            throw std::invalid_argument("clipped_surrogate: ratio/advantage shape mismatch");
        if (r.empty()) throw std::invalid_argument("clipped_surrogate: empty trajectory");
        double traj = 0.0;
        for (std::size_t t = 0; t < r.size(); ++t) {
            if (!(r[t] > 0.0))
                throw std::invalid_argument("clipped_surrogate: ratios must be positive");
            const double clipped = std::clamp(r[t], 1.0 - clip_eps, 1.0 + clip_eps);
            traj += std::min(r[t] * a[t], clipped * a[t]);
        }
        total += traj / static_cast<double>(r.size());
    }
    return total / static_cast<double>(ratios.size());
}

// KL(policy || reference) over a shared finite support. Terms with
// policy[k] = 0 contribute nothing; policy mass on a reference zero is a
// support violation and throws. Tiny negative rounding residue is floored
// at zero so the penalty never reports a negative divergence.
inline double kl_penalty(std::span<const double> policy, std::span<const double> reference) {
    if (policy.size() != reference.size() || policy.empty())
        throw std::invalid_argument("kl_penalty: supports must match and be non-empty");
    double policy_sum = 0.0, reference_sum = 0.0;
    for (std::size_t k = 0; k < policy.size(); ++k) {
        if (policy[k] < 0.0 || reference[k] < 0.0)
            throw std::invalid_argument("kl_penalty: negative probability");
        policy_sum += policy[k];
        reference_sum += reference[k];
    }
    if (std::abs(policy_sum - 1.0) > 1e-9 || std::abs(reference_sum - 1.0) > 1e-9)
        throw std::invalid_argument("kl_penalty: inputs must sum to 1");

    double kl = 0.0;
    for (std::size_t k = 0; k < policy.size(); ++k) {
        if (policy[k] == 0.0) continue;
        if (reference[k] == 0.0)
            throw std::invalid_argument("kl_penalty: policy mass outside reference support");
        kl += policy[k] * std::log(policy[k] / reference[k]);
    }
    return kl < 0.0 ? 0.0 : kl;
}

}  // namespace noisypg
