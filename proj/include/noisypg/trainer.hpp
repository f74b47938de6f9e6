#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <optional>
#include <string>
#include <vector>

#include "noisypg/corrections.hpp"
#include "noisypg/grpo.hpp"
#include "noisypg/noise_estimator.hpp"
#include "noisypg/policy_env.hpp"
#include "noisypg/reward_channel.hpp"
#include "noisypg/rng.hpp"
#include "noisypg/stats.hpp"

namespace noisypg {

// Gradient-ascent training loop over an enumerable environment, with the
// reward signal passed through the noise channel and corrected per method:
//   oracle - trains on the clean reward, never touches the channel
//   naive  - trains on the observed reward as-is
//   pgbc   - de-noises the observed reward (backward correction)
//   pgfc   - reweights by the miss-rate-derived forward weight
enum class TrainMethod { oracle, naive, pgbc, pgfc };

inline const char* method_name(TrainMethod m) {
    switch (m) {
        case TrainMethod::oracle: return "oracle";
        case TrainMethod::naive: return "naive";
        case TrainMethod::pgbc: return "pgbc";
        case TrainMethod::pgfc: return "pgfc";
    }
    throw std::invalid_argument("method_name: unknown method");
}

inline TrainMethod parse_method(const std::string& name) {
    if (name == "oracle") return TrainMethod::oracle;
    if (name == "naive") return TrainMethod::naive;
    if (name == "pgbc") return TrainMethod::pgbc;
    if (name == "pgfc") return TrainMethod::pgfc;
    throw std::invalid_argument("parse_method: unknown method '" + name + "'");
}

struct AppealSettings {
    double fraction = 0.25;            // share of rule-negatives audited per step
    double decay = 0.1;                // EMA decay for the online estimate
    double oracle_false_accept = 0.0;  // adjudicator error on true negatives
    double oracle_false_reject = 0.0;  // adjudicator error on true positives
};

struct TrainConfig {
    TrainMethod method = TrainMethod::oracle;
    double rho0 = 0.0;  // true channel rates
    double rho1 = 0.0;
    std::optional<double> rho0_hat;  // method beliefs; default to the truth
    std::optional<double> rho1_hat;
    bool estimate_online = false;  // pgfc only: learn rho1_hat from appeals
    double learning_rate = 0.5;
    std::size_t batch_size = 256;
    std::size_t group_size = 0;  // 0 = per-sample REINFORCE; >= 2 = grouped advantages
    std::size_t steps = 200;
    std::uint64_t seed = 0;
    double kl_beta = 0.0;  // weight of the KL pull toward the initial policy
    double clip_eps = 0.2;
    double advantage_eps = 1e-6;
    bool use_adam = false;  // grouped runs only; plain ascent keeps the raw
                            // update visible for the scaling-factor checks
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    AppealSettings appeals;

    double rho0_hat_effective() const { return rho0_hat.value_or(rho0); }
    double rho1_hat_effective() const { return rho1_hat.value_or(rho1); }

    void validate() const {
        NoiseRates true_rates(rho0, rho1);  // throws when out of range
        (void)true_rates;
        if (method == TrainMethod::pgbc)
            (void)NoiseRates(rho0_hat_effective(), rho1_hat_effective());
        if (method == TrainMethod::pgfc && !estimate_online) {
            const double r1 = rho1_hat_effective();
            if (!(r1 >= 0.0) || r1 >= 0.5)
                throw std::invalid_argument("TrainConfig: rho1_hat must lie in [0, 0.5)");
        }
        if (estimate_online && method != TrainMethod::pgfc)
            throw std::invalid_argument("TrainConfig: online estimation applies to pgfc only");
        if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
            throw std::invalid_argument("TrainConfig: learning rate must be positive and finite");
        if (batch_size == 0) throw std::invalid_argument("TrainConfig: batch size must be positive");
        if (steps == 0) throw std::invalid_argument("TrainConfig: need at least one step");
        if (group_size == 1)
            throw std::invalid_argument("TrainConfig: group size must be 0 or at least 2");
        if (group_size > 0 && batch_size % group_size != 0)
            throw std::invalid_argument("TrainConfig: group size must divide batch size");
        if (kl_beta < 0.0) throw std::invalid_argument("TrainConfig: kl beta must be non-negative");
        if (use_adam && group_size == 0)
            throw std::invalid_argument("TrainConfig: the adaptive optimizer is for grouped runs");
        if (use_adam && (!(adam_beta1 >= 0.0) || adam_beta1 >= 1.0 || !(adam_beta2 >= 0.0) ||
                         adam_beta2 >= 1.0 || !(adam_eps > 0.0)))
            throw std::invalid_argument("TrainConfig: adaptive-optimizer constants out of range");
        if (!(clip_eps > 0.0)) throw std::invalid_argument("TrainConfig: clip eps must be positive");
        if (advantage_eps < 0.0)
            throw std::invalid_argument("TrainConfig: advantage eps must be non-negative");
        if (estimate_online) {
            if (!(appeals.fraction > 0.0) || appeals.fraction > 1.0)
                throw std::invalid_argument("TrainConfig: appeal fraction must lie in (0, 1]");
            if (!(appeals.decay > 0.0) || appeals.decay > 1.0)
                throw std::invalid_argument("TrainConfig: appeal decay must lie in (0, 1]");
            (void)NoiseRates(appeals.oracle_false_accept, appeals.oracle_false_reject);
        }
    }
};

// One row per optimizer step; step 0 records the initial policy. Batch and
// appeal fields are zero where a step has no such activity (step 0, methods
// without audits).
struct TraceRow {
    std::size_t step = 0;
    std::string theta_digest;          // FNV-1a 64 over the raw parameter bytes
    double expected_true_reward = 0.0; // exact J after this step's update
    double observed_reward_mean = 0.0;
    double rho1_used = 0.0;
    double gradient_norm = 0.0;
    double cosine_to_clean = 0.0;  // applied direction vs exact clean gradient
    std::size_t appeal_round = 0;
    std::size_t appeal_rule_positive = 0;
    std::size_t appeal_rule_negative = 0;
    std::size_t appeal_appealed = 0;
    std::size_t appeal_flipped = 0;
    double appeal_rho1_point = 0.0;
    double appeal_rho1_ema = 0.0;
};

struct TrainingTrace {
    std::vector<TraceRow> rows;
    bool diverged = false;
    std::vector<double> final_params;
};

namespace detail {

inline std::string hex_digest(const std::vector<double>& params) {
    std::uint64_t h = 14695981039346656037ull;
    for (double v : params) {
        unsigned char bytes[sizeof(double)];
        std::memcpy(bytes, &v, sizeof(double));
        for (unsigned char b : bytes) {
            h ^= b;
            h *= 1099511628211ull;
        }
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

// Keeps the online estimate usable by forward_weight, which requires
// rho1_hat < 1/2 for an invertible channel.
inline double clamp_rho1(double estimate) {
    return std::clamp(estimate, 0.0, 0.5 - 1e-9);
}

inline bool all_finite(const std::vector<double>& xs) {
    for (double x : xs)
        if (!std::isfinite(x)) return false;
    return true;
}

}  // namespace detail

template <PolicyEnvironment E>
TrainingTrace train(E env, const TrainConfig& config) {
    config.validate();
    const NoiseRates rates(config.rho0, config.rho1);
    const bool grouped = config.group_size > 0;
    const std::size_t batch = config.batch_size;

    RandomStream policy_rng = make_stream(config.seed, 1);
    RandomStream channel_rng = make_stream(config.seed, 2);

    std::optional<AppealLedger> ledger;
    std::optional<AppealOracle> auditor;
    if (config.estimate_online) {
        AppealLedgerOptions options;
        options.decay = config.appeals.decay;
        ledger.emplace(options);
        auditor.emplace(config.appeals.oracle_false_accept, config.appeals.oracle_false_reject,
                        make_stream(config.seed, 3));
    }

    // Forward belief, refreshed per step when estimating online.
    double rho1_belief = config.method == TrainMethod::pgfc
                             ? (config.estimate_online ? detail::clamp_rho1(ledger->rho1())
                                                       : config.rho1_hat_effective())
                             : 0.0;
    const NoiseRates rates_hat(config.method == TrainMethod::pgbc ? config.rho0_hat_effective()
                                                                  : 0.0,
                               config.method == TrainMethod::pgbc ? config.rho1_hat_effective()
                                                                  : 0.0);

    const E reference = env;  // KL anchor: the policy at initialization

    TrainingTrace trace;
    trace.rows.reserve(config.steps + 1);
    {
        TraceRow row;
        row.step = 0;
        row.theta_digest = detail::hex_digest(env.params());
        row.expected_true_reward = expected_true_reward(env);
        trace.rows.push_back(std::move(row));
    }

    std::vector<std::size_t> trajectories(batch);
    std::vector<std::string> group_prompts;
    std::vector<BinaryReward> clean, observed;
    std::vector<double> adam_m, adam_v;
    if (config.use_adam) {
        adam_m.assign(env.param_dim(), 0.0);
        adam_v.assign(env.param_dim(), 0.0);
    }

    for (std::size_t step = 1; step <= config.steps; ++step) {
        // Roll out the batch. Grouped runs share one prompt per group.
        group_prompts.clear();
        if (!grouped) {
            for (std::size_t i = 0; i < batch; ++i) trajectories[i] = env.sample(policy_rng);
        } else {
            const std::size_t k = config.group_size;
            for (std::size_t g = 0; g < batch / k; ++g) {
                const std::size_t prompt = env.sample_prompt(policy_rng);
                group_prompts.push_back("prompt_" + std::to_string(prompt));
                for (std::size_t j = 0; j < k; ++j)
                    trajectories[g * k + j] = env.sample_trajectory(prompt, policy_rng);
            }
        }

        clean.clear();
        observed.clear();
        double observed_sum = 0.0;
        for (std::size_t i = 0; i < batch; ++i) {
            const BinaryReward truth = env.correct(trajectories[i]) ? kRewardOne : kRewardZero;
            clean.push_back(truth);
            if (config.method == TrainMethod::oracle) {
                observed.push_back(truth);
            } else {
                observed.push_back(corrupt(truth, rates, channel_rng));
            }
            observed_sum += observed.back().value();
        }

        // Audit a slice of this batch before computing the update, so the
        // step trains with the refreshed estimate.
        AppealRoundRecord audit;
        bool audited = false;
        if (ledger) {
            audit = simulate_appeal_round(clean, observed, config.appeals.fraction, *auditor,
                                          *ledger);
            audited = true;
            rho1_belief = detail::clamp_rho1(ledger->rho1());
        }
        const double rho1_used = config.method == TrainMethod::pgfc ? rho1_belief
                                 : config.method == TrainMethod::pgbc ? rates_hat.rho1()
                                                                      : 0.0;

        // Gradient estimate.
        std::vector<double> ghat(env.param_dim(), 0.0);
        if (!grouped) {
            for (std::size_t i = 0; i < batch; ++i) {
                double coef = 0.0;
                switch (config.method) {
                    case TrainMethod::oracle: coef = clean[i].value(); break;
                    case TrainMethod::naive: coef = observed[i].value(); break;
                    case TrainMethod::pgbc: coef = backward_reward(observed[i], rates_hat).value; break;
                    case TrainMethod::pgfc: coef = forward_weight(observed[i], rho1_used).value; break;
                }
                if (coef != 0.0)
                    env.accumulate_score(trajectories[i], coef / static_cast<double>(batch), ghat);
            }
        } else {
            const std::size_t k = config.group_size;
            const std::size_t num_groups = batch / k;
            for (std::size_t g = 0; g < num_groups; ++g) {
                std::vector<BinaryReward> rewards;
                std::vector<std::size_t> lengths;
                rewards.reserve(k);
                lengths.reserve(k);
                for (std::size_t j = 0; j < k; ++j) {
                    const std::size_t idx = g * k + j;
                    rewards.push_back(config.method == TrainMethod::oracle ? clean[idx]
                                                                           : observed[idx]);
                    lengths.push_back(env.trajectory_length(trajectories[idx]));
                }
                const RewardGroup group(group_prompts[g], std::move(rewards), lengths);
                AdvantageAssignment adv;
                switch (config.method) {
                    case TrainMethod::oracle:
                    case TrainMethod::naive:
                        adv = outcome_advantages(group, config.advantage_eps);
                        break;
                    case TrainMethod::pgbc:
                        adv = backward_outcome_advantages(group, rates_hat, config.advantage_eps);
                        break;
                    case TrainMethod::pgfc:
                        adv = forward_outcome_advantages(group, rho1_used, config.advantage_eps);
                        break;
                }
                // At the sampling policy the ratios are all one; the
                // surrogate is still evaluated so its clip path stays live.
                std::vector<std::vector<double>> ratios(adv.values.size());
                for (std::size_t j = 0; j < ratios.size(); ++j)
                    ratios[j].assign(adv.values[j].size(), 1.0);
                const double surrogate = clipped_surrogate(ratios, adv, config.clip_eps);
                if (!std::isfinite(surrogate)) {
                    trace.diverged = true;
                    break;
                }
                // d/dtheta of the ratio-one surrogate: token-mean advantage
                // times the trajectory score, averaged over the group.
                for (std::size_t j = 0; j < k; ++j) {
                    const double a = adv.values[j].front();
                    if (a != 0.0)
                        env.accumulate_score(trajectories[g * k + j],
                                             a / (static_cast<double>(lengths[j]) *
                                                  static_cast<double>(k) *
                                                  static_cast<double>(num_groups)),
                                             ghat);
                }
            }
            if (trace.diverged) break;
        }

        if (config.kl_beta > 0.0) {
            const std::vector<double> pull = policy_kl_gradient(env, reference);
            for (std::size_t c = 0; c < ghat.size(); ++c) ghat[c] -= config.kl_beta * pull[c];
        }

        if (!detail::all_finite(ghat)) {
            trace.diverged = true;
            break;
        }

        const std::vector<double> clean_grad = exact_clean_gradient(env);
        const double grad_norm = l2_norm(ghat);
        const double direction_cosine = cosine(ghat, clean_grad);

        const std::vector<double> before = env.params();
        std::vector<double> after = before;
        if (!config.use_adam) {
            for (std::size_t c = 0; c < after.size(); ++c)
                after[c] += config.learning_rate * ghat[c];
        } else {
            const double correct1 = 1.0 - std::pow(config.adam_beta1, static_cast<double>(step));
            const double correct2 = 1.0 - std::pow(config.adam_beta2, static_cast<double>(step));
            for (std::size_t c = 0; c < after.size(); ++c) {
                adam_m[c] = config.adam_beta1 * adam_m[c] + (1.0 - config.adam_beta1) * ghat[c];
                adam_v[c] =
                    config.adam_beta2 * adam_v[c] + (1.0 - config.adam_beta2) * ghat[c] * ghat[c];
                const double m_hat = adam_m[c] / correct1;
                const double v_hat = adam_v[c] / correct2;
                after[c] += config.learning_rate * m_hat / (std::sqrt(v_hat) + config.adam_eps);
            }
        }
        env.set_params(std::move(after));

        const double j_now = expected_true_reward(env);
        if (!std::isfinite(j_now)) {
            env.set_params(before);  // keep the last healthy policy
            trace.diverged = true;
            break;
        }

        TraceRow row;
        row.step = step;
        row.theta_digest = detail::hex_digest(env.params());
        row.expected_true_reward = j_now;
        row.observed_reward_mean = observed_sum / static_cast<double>(batch);
        row.rho1_used = rho1_used;
        row.gradient_norm = grad_norm;
        row.cosine_to_clean = direction_cosine;
        if (audited) {
            row.appeal_round = audit.round;
            row.appeal_rule_positive = audit.rule_positive;
            row.appeal_rule_negative = audit.rule_negative;
            row.appeal_appealed = audit.appealed;
            row.appeal_flipped = audit.flipped;
            row.appeal_rho1_point = audit.rho1_point;
            row.appeal_rho1_ema = audit.rho1_ema;
        }
        trace.rows.push_back(std::move(row));
    }

    trace.final_params = env.params();
    return trace;
}

// Method-checked entry points.
template <PolicyEnvironment E>
TrainingTrace run_baseline(E env, const TrainConfig& config) {
    if (config.method != TrainMethod::oracle && config.method != TrainMethod::naive)
        throw std::invalid_argument("run_baseline: method must be oracle or naive");
    return train(std::move(env), config);
}

template <PolicyEnvironment E>
TrainingTrace run_pgbc(E env, const TrainConfig& config) {
    if (config.method != TrainMethod::pgbc)
        throw std::invalid_argument("run_pgbc: method must be pgbc");
    return train(std::move(env), config);
}

template <PolicyEnvironment E>
TrainingTrace run_pgfc(E env, const TrainConfig& config) {
    if (config.method != TrainMethod::pgfc)
        throw std::invalid_argument("run_pgfc: method must be pgfc");
    return train(std::move(env), config);
}

}  // namespace noisypg
