#pragma once

#include <cmath>
#include <concepts>
#include <cstddef>
#include <numeric>
#include <span>
#include <stdexcept>
#include <variant>
#include <vector>

#include "noisypg/corrections.hpp"
#include "noisypg/reward_channel.hpp"
#include "noisypg/rng.hpp"

namespace noisypg {

// Every environment below enumerates its full trajectory space, so expected
// values and gradients are computed exactly rather than estimated. The cap
// keeps enumeration loops at desk scale.
inline constexpr std::size_t kEnumerationBound = 4096;

// An exactly enumerable softmax policy environment. Trajectories are indexed
// 0..num_trajectories()-1; probability() and correct() describe the current
// policy and the static correctness labels; accumulate_score() adds
// coeff * (d/dtheta) log pi(trajectory) into a parameter-space accumulator.
template <typename E>
concept PolicyEnvironment =
    requires(const E& ce, E& e, std::size_t k, double c, std::span<double> acc,
             RandomStream& rng, std::vector<double> params) {
        { ce.param_dim() } -> std::convertible_to<std::size_t>;
        { ce.num_trajectories() } -> std::convertible_to<std::size_t>;
        { ce.num_prompts() } -> std::convertible_to<std::size_t>;
        { ce.probability(k) } -> std::convertible_to<double>;
        { ce.correct(k) } -> std::convertible_to<bool>;
        { ce.trajectory_length(k) } -> std::convertible_to<std::size_t>;
        ce.accumulate_score(k, c, acc);
        { ce.sample(rng) } -> std::convertible_to<std::size_t>;
        { ce.sample_prompt(rng) } -> std::convertible_to<std::size_t>;
        { ce.sample_trajectory(k, rng) } -> std::convertible_to<std::size_t>;
        { ce.params() } -> std::convertible_to<const std::vector<double>&>;
        e.set_params(params);
    };

namespace detail {

inline std::vector<double> softmax(std::span<const double> logits) {
    double max = logits[0];
    for (double l : logits) max = std::max(max, l);
    std::vector<double> probs(logits.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        probs[i] = std::exp(logits[i] - max);
        sum += probs[i];
    }
    for (double& p : probs) p /= sum;
    return probs;
}

// Inverse-CDF draw over cached probabilities; the final index absorbs any
// rounding shortfall in the cumulative sum.
inline std::size_t sample_index(std::span<const double> probs, RandomStream& rng) {
    const double u = uniform01(rng);
    double cum = 0.0;
    for (std::size_t i = 0; i + 1 < probs.size(); ++i) {
        cum += probs[i];
        if (u < cum) return i;
    }
    return probs.size() - 1;
}

}  // namespace detail

// One-step softmax policy over A actions with fixed binary correctness
// labels. Parameters are the action logits. Mixed labels are required: with
// uniform labels the objective is constant and every gradient identity
// degenerates.
class SoftmaxBandit {
  public:
    SoftmaxBandit(std::vector<double> logits, std::vector<int> correctness)
        : logits_(std::move(logits)), correct_(std::move(correctness)) {
        if (logits_.size() < 2)
            throw std::invalid_argument("SoftmaxBandit: need at least 2 actions");
        if (logits_.size() > kEnumerationBound)
            throw std::invalid_argument("SoftmaxBandit: action count exceeds enumeration bound");
        if (correct_.size() != logits_.size())
            throw std::invalid_argument("SoftmaxBandit: logits/correctness size mismatch");
        bool any_correct = false, any_incorrect = false;
        for (int c : correct_) {
            if (c != 0 && c != 1)
                throw std::invalid_argument("SoftmaxBandit: correctness flags must be 0 or 1");
            (c ? any_correct : any_incorrect) = true;
        }
        if (!any_correct || !any_incorrect)
            throw std::invalid_argument("SoftmaxBandit: need a correct and an incorrect action");
        probs_ = detail::softmax(logits_);
    }

    std::size_t param_dim() const noexcept { return logits_.size(); }
    std::size_t num_trajectories() const noexcept { return logits_.size(); }
    std::size_t num_prompts() const noexcept { return 1; }
    std::size_t trajectory_length(std::size_t) const noexcept { return 1; }

    double probability(std::size_t action) const { return probs_.at(action); }
    bool correct(std::size_t action) const { return correct_.at(action) != 0; }

    void accumulate_score(std::size_t action, double coeff, std::span<double> acc) const {
        if (action >= probs_.size())
            throw std::invalid_argument("SoftmaxBandit: action out of range");
        for (std::size_t a = 0; a < probs_.size(); ++a)
            acc[a] += coeff * ((a == action ? 1.0 : 0.0) - probs_[a]);
    }

    std::size_t sample(RandomStream& rng) const { return detail::sample_index(probs_, rng); }
    std::size_t sample_prompt(RandomStream&) const { return 0; }
    std::size_t sample_trajectory(std::size_t, RandomStream& rng) const { return sample(rng); }

    const std::vector<double>& params() const noexcept { return logits_; }
    void set_params(std::vector<double> logits) {
        if (logits.size() != logits_.size())
            throw std::invalid_argument("SoftmaxBandit: parameter dimension is fixed");
        logits_ = std::move(logits);
        probs_ = detail::softmax(logits_);
    }

  private:
    std::vector<double> logits_;
    std::vector<int> correct_;
    std::vector<double> probs_;
};

// Fixed-horizon token sequence policy: independent softmax distributions per
// position, correctness given by an accepting set of whole sequences.
// Sequences are encoded big-endian: code = y_0 * V^(T-1) + ... + y_{T-1}.
// The full space V^T is enumerable and must stay within the bound.
class TokenChainEnv {
  public:
    TokenChainEnv(std::size_t vocab, std::size_t horizon, std::vector<double> logits,
                  const std::vector<std::size_t>& accepting_codes)
        : vocab_(vocab), horizon_(horizon), logits_(std::move(logits)) {
        if (vocab_ < 2) throw std::invalid_argument("TokenChainEnv: vocab must be at least 2");
        if (horizon_ < 1) throw std::invalid_argument("TokenChainEnv: horizon must be at least 1");
        std::size_t space = 1;
        for (std::size_t t = 0; t < horizon_; ++t) {
            space *= vocab_;
            if (space > kEnumerationBound)
                throw std::invalid_argument("TokenChainEnv: V^T exceeds enumeration bound");
        }
        space_ = space;
        if (logits_.size() != vocab_ * horizon_)
            throw std::invalid_argument("TokenChainEnv: logits must have vocab * horizon entries");
        accepting_.assign(space_, 0);
        std::size_t distinct = 0;
        for (std::size_t code : accepting_codes) {
            if (code >= space_)
                throw std::invalid_argument("TokenChainEnv: accepting code out of range");
            if (!accepting_[code]) {
                accepting_[code] = 1;
                ++distinct;
            }
        }
        if (distinct == 0 || distinct == space_)
            throw std::invalid_argument("TokenChainEnv: accepting set must be a proper non-empty subset");
        recompute();
    }

    std::size_t vocab() const noexcept { return vocab_; }
    std::size_t horizon() const noexcept { return horizon_; }
    std::size_t param_dim() const noexcept { return logits_.size(); }
    std::size_t num_trajectories() const noexcept { return space_; }
    std::size_t num_prompts() const noexcept { return 1; }
    std::size_t trajectory_length(std::size_t) const noexcept { return horizon_; }

    std::size_t encode(std::span<const std::size_t> tokens) const {
        if (tokens.size() != horizon_)
            throw std::invalid_argument("TokenChainEnv: token count must equal horizon");
        std::size_t code = 0;
        for (std::size_t v : tokens) {
            if (v >= vocab_) throw std::invalid_argument("TokenChainEnv: token out of range");
            code = code * vocab_ + v;
        }
        return code;
    }

    std::size_t token_at(std::size_t code, std::size_t position) const {
        std::size_t shift = horizon_ - 1 - position;
        for (std::size_t i = 0; i < shift; ++i) code /= vocab_;
        return code % vocab_;
    }

    double probability(std::size_t code) const {
        check(code);
        double p = 1.0;
        for (std::size_t t = 0; t < horizon_; ++t) p *= probs_[t * vocab_ + token_at(code, t)];
        return p;
    }

    bool correct(std::size_t code) const {
        check(code);
        return accepting_[code] != 0;
    }

    void accumulate_score(std::size_t code, double coeff, std::span<double> acc) const {
        check(code);
        for (std::size_t t = 0; t < horizon_; ++t) {
            const std::size_t chosen = token_at(code, t);
            for (std::size_t v = 0; v < vocab_; ++v)
                acc[t * vocab_ + v] +=
                    coeff * ((v == chosen ? 1.0 : 0.0) - probs_[t * vocab_ + v]);
        }
    }

    std::size_t sample(RandomStream& rng) const {
        std::size_t code = 0;
        for (std::size_t t = 0; t < horizon_; ++t) {
            std::span<const double> row(probs_.data() + t * vocab_, vocab_);
            code = code * vocab_ + detail::sample_index(row, rng);
        }
        return code;
    }
    std::size_t sample_prompt(RandomStream&) const { return 0; }
    std::size_t sample_trajectory(std::size_t, RandomStream& rng) const { return sample(rng); }

    const std::vector<double>& params() const noexcept { return logits_; }
    void set_params(std::vector<double> logits) {
        if (logits.size() != logits_.size())
            throw std::invalid_argument("TokenChainEnv: parameter dimension is fixed");
        logits_ = std::move(logits);
        recompute();
    }

  private:
    void check(std::size_t code) const {
        if (code >= space_) throw std::invalid_argument("TokenChainEnv: sequence code out of range");
    }

    void recompute() {
        probs_.resize(logits_.size());
        for (std::size_t t = 0; t < horizon_; ++t) {
            auto row = detail::softmax(std::span(logits_).subspan(t * vocab_, vocab_));
            std::copy(row.begin(), row.end(), probs_.begin() + t * vocab_);
        }
    }

    std::size_t vocab_;
    std::size_t horizon_;
    std::size_t space_ = 0;
    std::vector<double> logits_;
    std::vector<char> accepting_;
    std::vector<double> probs_;
};

// Uniform mixture over per-prompt bandits. Each prompt owns a parameter
// block (its bandit's logits), so the policy conditions on the prompt and
// the mixture objective is the mean of the per-prompt objectives.
class MultiPromptBandit {
  public:
    explicit MultiPromptBandit(std::vector<SoftmaxBandit> prompts) : prompts_(std::move(prompts)) {
        if (prompts_.empty())
            throw std::invalid_argument("MultiPromptBandit: need at least one prompt");
        std::size_t outcomes = 0, dim = 0;
        for (const auto& b : prompts_) {
            outcome_offset_.push_back(outcomes);
            param_offset_.push_back(dim);
            outcomes += b.num_trajectories();
            dim += b.param_dim();
        }
        if (outcomes > kEnumerationBound)
            throw std::invalid_argument("MultiPromptBandit: outcome space exceeds enumeration bound");
        outcomes_ = outcomes;
        rebuild_params();
    }

    std::size_t param_dim() const noexcept { return params_.size(); }
    std::size_t num_trajectories() const noexcept { return outcomes_; }
    std::size_t num_prompts() const noexcept { return prompts_.size(); }
    std::size_t trajectory_length(std::size_t) const noexcept { return 1; }

    double probability(std::size_t flat) const {
        const auto [p, a] = split(flat);
        return prompts_[p].probability(a) / static_cast<double>(prompts_.size());
    }
    bool correct(std::size_t flat) const {
        const auto [p, a] = split(flat);
        return prompts_[p].correct(a);
    }
    void accumulate_score(std::size_t flat, double coeff, std::span<double> acc) const {
        const auto [p, a] = split(flat);
        prompts_[p].accumulate_score(a, coeff, acc.subspan(param_offset_[p], prompts_[p].param_dim()));
    }

    std::size_t sample(RandomStream& rng) const { return sample_trajectory(sample_prompt(rng), rng); }
    std::size_t sample_prompt(RandomStream& rng) const {
        auto p = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(prompts_.size()));
        return p < prompts_.size() ? p : prompts_.size() - 1;
    }
    std::size_t sample_trajectory(std::size_t prompt, RandomStream& rng) const {
        return outcome_offset_.at(prompt) + prompts_[prompt].sample(rng);
    }

    const std::vector<double>& params() const noexcept { return params_; }
    void set_params(std::vector<double> params) {
        if (params.size() != params_.size())
            throw std::invalid_argument("MultiPromptBandit: parameter dimension is fixed");
        for (std::size_t p = 0; p < prompts_.size(); ++p) {
            std::vector<double> block(params.begin() + static_cast<std::ptrdiff_t>(param_offset_[p]),
                                      params.begin() + static_cast<std::ptrdiff_t>(
                                                           param_offset_[p] + prompts_[p].param_dim()));
            prompts_[p].set_params(std::move(block));
        }
        params_ = std::move(params);
    }

    const SoftmaxBandit& prompt(std::size_t p) const { return prompts_.at(p); }

  private:
    std::pair<std::size_t, std::size_t> split(std::size_t flat) const {
        if (flat >= outcomes_)
            throw std::invalid_argument("MultiPromptBandit: trajectory out of range");
        std::size_t p = prompts_.size() - 1;
        while (outcome_offset_[p] > flat) --p;
        return {p, flat - outcome_offset_[p]};
    }

    void rebuild_params() {
        params_.clear();
        for (const auto& b : prompts_)
            params_.insert(params_.end(), b.params().begin(), b.params().end());
    }

    std::vector<SoftmaxBandit> prompts_;
    std::vector<std::size_t> outcome_offset_;
    std::vector<std::size_t> param_offset_;
    std::size_t outcomes_ = 0;
    std::vector<double> params_;
};

// Per-sample update coefficient selection. The oracle trains on the clean
// reward and never touches the channel; the other three act on the observed
// reward: naive uses it as-is, backward de-noises it, forward reweights it.
struct OracleUpdate {};
struct NaiveUpdate {};
struct BackwardUpdate {
    NoiseRates rates_hat;
};
struct ForwardUpdate {
    double rho1_hat;
};
using UpdateMethod = std::variant<OracleUpdate, NaiveUpdate, BackwardUpdate, ForwardUpdate>;

struct GradientEstimate {
    std::vector<double> vector;
    std::size_t sample_count = 0;
};

// d/dtheta log pi for one trajectory.
template <PolicyEnvironment E>
std::vector<double> score_function(const E& env, std::size_t trajectory) {
    if (trajectory >= env.num_trajectories())
        throw std::invalid_argument("score_function: trajectory out of range");
    std::vector<double> score(env.param_dim(), 0.0);
    env.accumulate_score(trajectory, 1.0, score);
    return score;
}

// J(theta) = E[clean reward], by full enumeration.
template <PolicyEnvironment E>
double expected_true_reward(const E& env) {
    double j = 0.0;
    for (std::size_t k = 0; k < env.num_trajectories(); ++k)
        if (env.correct(k)) j += env.probability(k);
    return j;
}

// grad J(theta) = E[clean reward * score], by full enumeration.
template <PolicyEnvironment E>
std::vector<double> exact_clean_gradient(const E& env) {
    std::vector<double> grad(env.param_dim(), 0.0);
    for (std::size_t k = 0; k < env.num_trajectories(); ++k)
        if (env.correct(k)) env.accumulate_score(k, env.probability(k), grad);
    return grad;
}

// E[score]. Identically zero in exact arithmetic; exposed so tests and the
// self-check battery can measure the numerical residue.
template <PolicyEnvironment E>
std::vector<double> score_expectation(const E& env) {
    std::vector<double> mean(env.param_dim(), 0.0);
    for (std::size_t k = 0; k < env.num_trajectories(); ++k)
        env.accumulate_score(k, env.probability(k), mean);
    return mean;
}

namespace detail {

// E[coefficient | clean reward] for one update method under the true channel.
inline std::pair<double, double> expected_coefficients(const NoiseRates& rates,
                                                       const UpdateMethod& method) {
    const auto m = channel_matrix(rates);
    auto mean_of = [&](auto f) {
        return std::pair<double, double>{m[0][0] * f(kRewardZero) + m[0][1] * f(kRewardOne),
                                         m[1][0] * f(kRewardZero) + m[1][1] * f(kRewardOne)};
    };
    if (std::holds_alternative<OracleUpdate>(method)) return {0.0, 1.0};
    if (std::holds_alternative<NaiveUpdate>(method))
        return mean_of([](BinaryReward r) { return static_cast<double>(r.value()); });
    if (std::holds_alternative<BackwardUpdate>(method)) {
        const auto& rates_hat = std::get<BackwardUpdate>(method).rates_hat;
        return mean_of([&](BinaryReward r) { return backward_reward(r, rates_hat).value; });
    }
    const double rho1_hat = std::get<ForwardUpdate>(method).rho1_hat;
    return mean_of([&](BinaryReward r) { return forward_weight(r, rho1_hat).value; });
}

inline double sample_coefficient(bool clean_correct, const NoiseRates& rates,
                                 const UpdateMethod& method, RandomStream& rng) {
    if (std::holds_alternative<OracleUpdate>(method)) return clean_correct ? 1.0 : 0.0;
    const BinaryReward observed = corrupt(clean_correct ? kRewardOne : kRewardZero, rates, rng);
    if (std::holds_alternative<NaiveUpdate>(method)) return observed.value();
    if (std::holds_alternative<BackwardUpdate>(method))
        return backward_reward(observed, std::get<BackwardUpdate>(method).rates_hat).value;
    return forward_weight(observed, std::get<ForwardUpdate>(method).rho1_hat).value;
}

}  // namespace detail

// Exact expectation of the method's per-sample update term, enumerating both
// the trajectory space and the two channel outcomes.
template <PolicyEnvironment E>
std::vector<double> exact_expected_update(const E& env, const NoiseRates& rates,
                                          const UpdateMethod& method) {
    const auto [coef0, coef1] = detail::expected_coefficients(rates, method);
    std::vector<double> update(env.param_dim(), 0.0);
    for (std::size_t k = 0; k < env.num_trajectories(); ++k) {
        const double coef = env.correct(k) ? coef1 : coef0;
        if (coef != 0.0) env.accumulate_score(k, env.probability(k) * coef, update);
    }
    return update;
}

// Monte Carlo counterpart of exact_expected_update: M trajectories drawn from
// the policy, observed rewards drawn from the channel, per-sample terms
// averaged. One stream drives both the policy and the channel.
template <PolicyEnvironment E>
GradientEstimate monte_carlo_update(const E& env, const NoiseRates& rates,
                                    const UpdateMethod& method, std::size_t batch,
                                    RandomStream& rng) {
    if (batch == 0) throw std::invalid_argument("monte_carlo_update: batch must be positive");
    std::vector<double> acc(env.param_dim(), 0.0);
    for (std::size_t i = 0; i < batch; ++i) {
        const std::size_t k = env.sample(rng);
        const double coef = detail::sample_coefficient(env.correct(k), rates, method, rng);
        if (coef != 0.0) env.accumulate_score(k, coef, acc);
    }
    for (double& v : acc) {
        v /= static_cast<double>(batch);
        if (!std::isfinite(v)) throw std::runtime_error("monte_carlo_update: non-finite estimate");
    }
    return {std::move(acc), batch};
}

// KL(pi_env || pi_ref) over the shared trajectory space, by enumeration.
template <PolicyEnvironment E>
double policy_kl(const E& env, const E& ref) {
    if (ref.num_trajectories() != env.num_trajectories() || ref.param_dim() != env.param_dim())
        throw std::invalid_argument("policy_kl: reference has a different trajectory space");
    double kl = 0.0;
    for (std::size_t k = 0; k < env.num_trajectories(); ++k) {
        const double p = env.probability(k);
        if (p == 0.0) continue;
        const double q = ref.probability(k);
        if (q == 0.0) throw std::invalid_argument("policy_kl: policy mass outside reference support");
        kl += p * std::log(p / q);
    }
    return kl < 0.0 ? 0.0 : kl;
}

// grad KL = E[log(pi/pi_ref) * score]; the +1 term of the quotient rule
// vanishes against the zero score mean.
template <PolicyEnvironment E>
std::vector<double> policy_kl_gradient(const E& env, const E& ref) {
    if (ref.num_trajectories() != env.num_trajectories() || ref.param_dim() != env.param_dim())
        throw std::invalid_argument("policy_kl_gradient: reference has a different trajectory space");
    std::vector<double> grad(env.param_dim(), 0.0);
    for (std::size_t k = 0; k < env.num_trajectories(); ++k) {
        const double p = env.probability(k);
        if (p == 0.0) continue;
        const double q = ref.probability(k);
        if (q == 0.0)
            throw std::invalid_argument("policy_kl_gradient: policy mass outside reference support");
        env.accumulate_score(k, p * std::log(p / q), grad);
    }
    return grad;
}

// J(theta) - beta * KL(pi || pi_ref), with its exact gradient.
template <PolicyEnvironment E>
double kl_regularized_objective(const E& env, const E& ref, double beta) {
    return expected_true_reward(env) - beta * policy_kl(env, ref);
}

template <PolicyEnvironment E>
std::vector<double> kl_regularized_gradient(const E& env, const E& ref, double beta) {
    std::vector<double> grad = exact_clean_gradient(env);
    if (beta != 0.0) {
        const std::vector<double> kl_grad = policy_kl_gradient(env, ref);
        for (std::size_t i = 0; i < grad.size(); ++i) grad[i] -= beta * kl_grad[i];
    }
    return grad;
}

}  // namespace noisypg
