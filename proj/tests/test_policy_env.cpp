#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "noisypg/policy_env.hpp"

using namespace noisypg;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

double l2(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

// Central-difference gradient of an arbitrary scalar objective; the
// independent oracle for every analytic gradient in the module.
template <typename E, typename F>
std::vector<double> fd_gradient(E env, double h, F objective) {
    const std::vector<double> base = env.params();
    std::vector<double> grad(base.size(), 0.0);
    for (std::size_t i = 0; i < base.size(); ++i) {
        std::vector<double> up = base, dn = base;
        up[i] += h;
        dn[i] -= h;
        env.set_params(up);
        const double fu = objective(env);
        env.set_params(dn);
        const double fd = objective(env);
        grad[i] = (fu - fd) / (2.0 * h);
    }
    return grad;
}

void require_close(const std::vector<double>& got, const std::vector<double>& want, double tol) {
    REQUIRE(got.size() == want.size());
    std::vector<double> diff(got.size());
    for (std::size_t i = 0; i < got.size(); ++i) diff[i] = got[i] - want[i];
    REQUIRE(l2(diff) <= tol * std::max(1.0, l2(want)));
}

double method_coefficient(const UpdateMethod& method, bool clean, BinaryReward observed) {
    if (std::holds_alternative<OracleUpdate>(method)) return clean ? 1.0 : 0.0;
    if (std::holds_alternative<NaiveUpdate>(method)) return observed.value();
    if (std::holds_alternative<BackwardUpdate>(method))
        return backward_reward(observed, std::get<BackwardUpdate>(method).rates_hat).value;
    return forward_weight(observed, std::get<ForwardUpdate>(method).rho1_hat).value;
}

// Coordinatewise mean and variance of the per-sample update term, by
// enumerating trajectories and channel outcomes. Oracle coefficients do not
// depend on the observed value, so the channel marginalizes out for free.
template <PolicyEnvironment E>
std::pair<std::vector<double>, std::vector<double>> per_sample_moments(const E& env,
                                                                       const NoiseRates& rates,
                                                                       const UpdateMethod& method) {
    const auto m = channel_matrix(rates);
    std::vector<double> mean(env.param_dim(), 0.0), second(env.param_dim(), 0.0);
    for (std::size_t k = 0; k < env.num_trajectories(); ++k) {
        const double pk = env.probability(k);
        const std::vector<double> score = score_function(env, k);
        const int clean = env.correct(k) ? 1 : 0;
        for (int obs = 0; obs <= 1; ++obs) {
            const double p = pk * m[clean][obs];
            const double coef = method_coefficient(method, clean == 1, BinaryReward(obs));
            for (std::size_t c = 0; c < score.size(); ++c) {
                const double term = coef * score[c];
                mean[c] += p * term;
                second[c] += p * term * term;
            }
        }
    }
    std::vector<double> var(mean.size());
    for (std::size_t c = 0; c < mean.size(); ++c) var[c] = second[c] - mean[c] * mean[c];
    return {mean, var};
}

SoftmaxBandit random_bandit(std::mt19937_64& gen, std::size_t actions) {
    std::uniform_real_distribution<double> logit(-1.5, 1.5);
    std::vector<double> logits(actions);
    for (double& l : logits) l = logit(gen);
    std::vector<int> flags(actions, 0);
    for (int& f : flags) f = static_cast<int>(gen() & 1u);
    flags[0] = 1;
    flags[1] = 0;
    return {logits, flags};
}

TokenChainEnv random_chain(std::mt19937_64& gen, std::size_t vocab, std::size_t horizon) {
    std::uniform_real_distribution<double> logit(-1.0, 1.0);
    std::vector<double> logits(vocab * horizon);
    for (double& l : logits) l = logit(gen);
    std::size_t space = 1;
    for (std::size_t t = 0; t < horizon; ++t) space *= vocab;
    std::vector<std::size_t> accepting;
    for (std::size_t code = 1; code + 1 < space; ++code)
        if ((gen() & 3u) == 0) accepting.push_back(code);
    accepting.push_back(0);  // guarantees non-empty; code space-1 stays out
    return {vocab, horizon, logits, accepting};
}

}  // namespace

TEST_CASE("uniform two-action bandit has the textbook gradient") {
    const SoftmaxBandit env({0.0, 0.0}, {1, 0});
    REQUIRE(env.param_dim() == 2);
    REQUIRE(env.num_trajectories() == 2);
    REQUIRE(env.trajectory_length(0) == 1);
    REQUIRE_THAT(env.probability(0), WithinAbs(0.5, 1e-15));
    REQUIRE(env.correct(0));
    REQUIRE_FALSE(env.correct(1));
    REQUIRE_THAT(expected_true_reward(env), WithinAbs(0.5, 1e-15));

    const auto grad = exact_clean_gradient(env);
    REQUIRE_THAT(grad[0], WithinAbs(0.25, 1e-15));
    REQUIRE_THAT(grad[1], WithinAbs(-0.25, 1e-15));

    const auto score = score_function(env, 0);
    REQUIRE_THAT(score[0], WithinAbs(0.5, 1e-15));
    REQUIRE_THAT(score[1], WithinAbs(-0.5, 1e-15));
    REQUIRE_THROWS_AS(score_function(env, 2), std::invalid_argument);
}

TEST_CASE("environment constructors reject degenerate setups") {
    REQUIRE_THROWS_AS(SoftmaxBandit({0.0}, {1}), std::invalid_argument);
    REQUIRE_THROWS_AS(SoftmaxBandit({0.0, 0.0}, {1}), std::invalid_argument);
    REQUIRE_THROWS_AS(SoftmaxBandit({0.0, 0.0}, {1, 1}), std::invalid_argument);
    REQUIRE_THROWS_AS(SoftmaxBandit({0.0, 0.0}, {0, 0}), std::invalid_argument);
    REQUIRE_THROWS_AS(SoftmaxBandit({0.0, 0.0}, {1, 2}), std::invalid_argument);
    REQUIRE_THROWS_AS(SoftmaxBandit(std::vector<double>(4097, 0.0), std::vector<int>(4097, 0)),
                      std::invalid_argument);

    const std::vector<double> logits4(4, 0.0);
    REQUIRE_THROWS_AS(TokenChainEnv(1, 2, {0.0, 0.0}, {0}), std::invalid_argument);
    REQUIRE_THROWS_AS(TokenChainEnv(2, 0, {}, {}), std::invalid_argument);
    REQUIRE_THROWS_AS(TokenChainEnv(2, 2, logits4, {}), std::invalid_argument);
    REQUIRE_THROWS_AS(TokenChainEnv(2, 2, logits4, {0, 1, 2, 3}), std::invalid_argument);
    REQUIRE_THROWS_AS(TokenChainEnv(2, 2, logits4, {4}), std::invalid_argument);
    REQUIRE_THROWS_AS(TokenChainEnv(2, 2, {0.0, 0.0}, {0}), std::invalid_argument);
    REQUIRE_THROWS_AS(TokenChainEnv(2, 13, std::vector<double>(26, 0.0), {0}),
                      std::invalid_argument);

    REQUIRE_THROWS_AS(MultiPromptBandit({}), std::invalid_argument);
}

TEST_CASE("token chain encoding is big-endian and scores factor per position") {
    const TokenChainEnv env(2, 2, {0.0, 0.0, 0.0, 0.0}, {1});
    REQUIRE(env.num_trajectories() == 4);
    REQUIRE(env.trajectory_length(0) == 2);

    const std::vector<std::size_t> seq{0, 1};
    REQUIRE(env.encode(seq) == 1);
    REQUIRE(env.token_at(1, 0) == 0);
    REQUIRE(env.token_at(1, 1) == 1);
    REQUIRE(env.token_at(2, 0) == 1);
    REQUIRE(env.token_at(2, 1) == 0);

    const auto score = score_function(env, 1);
    const std::vector<double> want{0.5, -0.5, -0.5, 0.5};
    for (std::size_t i = 0; i < 4; ++i) REQUIRE_THAT(score[i], WithinAbs(want[i], 1e-15));

    REQUIRE_THAT(env.probability(1), WithinAbs(0.25, 1e-15));
    REQUIRE(env.correct(1));
    REQUIRE_FALSE(env.correct(0));
    REQUIRE_THAT(expected_true_reward(env), WithinAbs(0.25, 1e-15));

    REQUIRE_THROWS_AS(env.encode(std::vector<std::size_t>{0}), std::invalid_argument);
    REQUIRE_THROWS_AS(env.encode(std::vector<std::size_t>{0, 2}), std::invalid_argument);
    REQUIRE_THROWS_AS(env.probability(4), std::invalid_argument);
}

TEST_CASE("probabilities sum to one across environments") {
    std::mt19937_64 gen(41);
    auto check_total = [](const auto& env) {
        double total = 0.0;
        for (std::size_t k = 0; k < env.num_trajectories(); ++k) total += env.probability(k);
        REQUIRE_THAT(total, WithinAbs(1.0, 1e-12));
    };
    check_total(random_bandit(gen, 7));
    check_total(random_chain(gen, 3, 4));
    check_total(MultiPromptBandit({random_bandit(gen, 3), random_bandit(gen, 5)}));
}

TEST_CASE("analytic gradients match central finite differences") {
    std::mt19937_64 gen(1234);
    const double h = 1e-5, tol = 1e-6;

    auto objective = [](const auto& e) { return expected_true_reward(e); };

    for (int rep = 0; rep < 3; ++rep) {
        const SoftmaxBandit bandit = random_bandit(gen, 2 + rep * 3);
        require_close(exact_clean_gradient(bandit), fd_gradient(bandit, h, objective), tol);
    }
    const TokenChainEnv chain = random_chain(gen, 3, 3);
    require_close(exact_clean_gradient(chain), fd_gradient(chain, h, objective), tol);

    const MultiPromptBandit multi({random_bandit(gen, 3), random_bandit(gen, 4), random_bandit(gen, 2)});
    require_close(exact_clean_gradient(multi), fd_gradient(multi, h, objective), tol);
}

TEST_CASE("score expectation vanishes") {
    std::mt19937_64 gen(77);
    auto residue = [](const auto& env) {
        double worst = 0.0;
        for (double v : score_expectation(env)) worst = std::max(worst, std::abs(v));
        return worst;
    };
    REQUIRE(residue(random_bandit(gen, 9)) <= 1e-10);
    REQUIRE(residue(random_chain(gen, 2, 6)) <= 1e-10);
    REQUIRE(residue(MultiPromptBandit({random_bandit(gen, 4), random_bandit(gen, 4)})) <= 1e-10);
}

TEST_CASE("incorrect-set score expectation is the negated gradient") {
    std::mt19937_64 gen(78);
    auto check = [](const auto& env) {
        std::vector<double> neg(env.param_dim(), 0.0);
        for (std::size_t k = 0; k < env.num_trajectories(); ++k)
            if (!env.correct(k)) env.accumulate_score(k, env.probability(k), neg);
        const auto grad = exact_clean_gradient(env);
        for (std::size_t c = 0; c < neg.size(); ++c)
            REQUIRE_THAT(neg[c], WithinAbs(-grad[c], 1e-12));
    };
    check(random_bandit(gen, 5));
    check(random_chain(gen, 2, 5));
}

TEST_CASE("naive expected update is the retention-scaled gradient") {
    const SoftmaxBandit env({0.0, 0.0}, {1, 0});
    const NoiseRates rates(0.1, 0.2);
    const auto update = exact_expected_update(env, rates, NaiveUpdate{});
    REQUIRE_THAT(update[0], WithinAbs(0.175, 1e-15));
    REQUIRE_THAT(update[1], WithinAbs(-0.175, 1e-15));
}

TEST_CASE("expected updates of every method stay parallel to the clean gradient") {
    std::mt19937_64 gen(91);
    const std::vector<double> rate_grid{0.0, 0.05, 0.15, 0.3, 0.45};

    auto check_env = [&](const auto& env) {
        const auto grad = exact_clean_gradient(env);
        const double gnorm = l2(grad);
        REQUIRE(gnorm > 1e-6);

        auto check = [&](const NoiseRates& rates, const UpdateMethod& method, double want_scale) {
            const auto update = exact_expected_update(env, rates, method);
            const double unorm = l2(update);
            REQUIRE_THAT(dot(update, grad), WithinAbs(unorm * gnorm, 1e-9 * gnorm));
            REQUIRE_THAT(unorm, WithinAbs(want_scale * gnorm, 1e-9));
        };

        for (double r0 : rate_grid)
            for (double r1 : rate_grid) {
                const NoiseRates rates(r0, r1);
                check(rates, OracleUpdate{}, 1.0);
                check(rates, NaiveUpdate{}, rates.retention());
                check(rates, BackwardUpdate{rates}, 1.0);
                for (double r1_hat : {0.0, 0.2, 0.45})
                    check(rates, ForwardUpdate{r1_hat}, rates.retention());
                const NoiseRates wrong(std::min(0.45, r0 + 0.05), std::max(0.0, r1 - 0.05));
                check(rates, BackwardUpdate{wrong}, rates.retention() / wrong.retention());
            }
    };

    check_env(random_bandit(gen, 6));
    check_env(random_chain(gen, 2, 4));
}

TEST_CASE("backward correction at the true rates recovers the clean gradient exactly") {
    std::mt19937_64 gen(92);
    const SoftmaxBandit env = random_bandit(gen, 8);
    const auto grad = exact_clean_gradient(env);
    for (double r0 : {0.0, 0.1, 0.3})
        for (double r1 : {0.0, 0.2, 0.45}) {
            const NoiseRates rates(r0, r1);
            const auto update = exact_expected_update(env, rates, BackwardUpdate{rates});
            for (std::size_t c = 0; c < grad.size(); ++c)
                REQUIRE_THAT(update[c], WithinAbs(grad[c], 1e-12));
        }
}

TEST_CASE("single-sample noiseless estimate reproduces reward-weighted score") {
    std::mt19937_64 gen(93);
    const SoftmaxBandit env = random_bandit(gen, 5);
    const NoiseRates quiet(0.0, 0.0);
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        RandomStream replay = make_stream(seed, 9);
        const std::size_t k = env.sample(replay);
        const double reward = env.correct(k) ? 1.0 : 0.0;

        RandomStream rng = make_stream(seed, 9);
        const GradientEstimate est = monte_carlo_update(env, quiet, NaiveUpdate{}, 1, rng);
        REQUIRE(est.sample_count == 1);
        const auto score = score_function(env, k);
        for (std::size_t c = 0; c < score.size(); ++c) REQUIRE(est.vector[c] == reward * score[c]);
    }
    RandomStream rng = make_stream(1, 1);
    REQUIRE_THROWS_AS(monte_carlo_update(env, quiet, NaiveUpdate{}, 0, rng), std::invalid_argument);
}

TEST_CASE("Monte Carlo estimates agree with exact expectations", "[slow]") {
    std::mt19937_64 gen(94);
    const SoftmaxBandit env = random_bandit(gen, 6);
    const NoiseRates rates(0.1, 0.2);
    const std::size_t batch = 20000;

    const std::vector<UpdateMethod> methods{OracleUpdate{}, NaiveUpdate{}, BackwardUpdate{rates},
                                            ForwardUpdate{0.2}};
    std::uint64_t stream_id = 100;
    for (const auto& method : methods) {
        const auto [mean, var] = per_sample_moments(env, rates, method);
        RandomStream rng = make_stream(7, stream_id++);
        const GradientEstimate est = monte_carlo_update(env, rates, method, batch, rng);
        for (std::size_t c = 0; c < mean.size(); ++c) {
            const double se = std::sqrt(var[c] / static_cast<double>(batch));
            REQUIRE_THAT(est.vector[c], WithinAbs(mean[c], 4.0 * se + 1e-12));
        }
        const auto exact = exact_expected_update(env, rates, method);
        for (std::size_t c = 0; c < mean.size(); ++c)
            REQUIRE_THAT(exact[c], WithinAbs(mean[c], 1e-12));
    }
}

TEST_CASE("backward correction inflates per-sample variance beyond forward weighting") {
    const SoftmaxBandit env({0.0, 0.0, 0.0, 0.0}, {1, 1, 0, 0});
    const NoiseRates rates(0.1, 0.2);
    const auto var_b = per_sample_moments(env, rates, BackwardUpdate{rates}).second;
    const auto var_f = per_sample_moments(env, rates, ForwardUpdate{0.2}).second;
    double trace_b = 0.0, trace_f = 0.0;
    for (double v : var_b) trace_b += v;
    for (double v : var_f) trace_f += v;
    REQUIRE(trace_b > trace_f);
}

TEST_CASE("near-singular assumed rates inflate variance by the analytic factor", "[slow]") {
    const SoftmaxBandit env({0.0, 0.0, 0.0, 0.0}, {1, 0, 0, 0});
    const NoiseRates true_rates(0.1, 0.2);
    const NoiseRates well_specified(0.1, 0.2);
    const NoiseRates near_singular(0.45, 0.45);
    const std::size_t batch = 100000;

    // Empirical per-sample variance of the backward update term, coordinatewise.
    auto measure = [&](const NoiseRates& rates_hat, std::uint64_t stream_id) {
        RandomStream rng = make_stream(42, stream_id);
        std::vector<double> m1(env.param_dim(), 0.0), m2(env.param_dim(), 0.0);
        std::vector<double> score(env.param_dim());
        for (std::size_t i = 0; i < batch; ++i) {
            const std::size_t k = env.sample(rng);
            const BinaryReward observed =
                corrupt(env.correct(k) ? kRewardOne : kRewardZero, true_rates, rng);
            const double coef = backward_reward(observed, rates_hat).value;
            std::fill(score.begin(), score.end(), 0.0);
            env.accumulate_score(k, coef, score);
            for (std::size_t c = 0; c < score.size(); ++c) {
                m1[c] += score[c];
                m2[c] += score[c] * score[c];
            }
        }
        std::vector<double> var(env.param_dim());
        for (std::size_t c = 0; c < var.size(); ++c) {
            const double mean = m1[c] / static_cast<double>(batch);
            var[c] = m2[c] / static_cast<double>(batch) - mean * mean;
        }
        return var;
    };

    const auto var_true = measure(well_specified, 200);
    const auto var_mis = measure(near_singular, 201);
    const auto analytic_true =
        per_sample_moments(env, true_rates, BackwardUpdate{well_specified}).second;
    const auto analytic_mis =
        per_sample_moments(env, true_rates, BackwardUpdate{near_singular}).second;

    for (std::size_t c = 0; c < var_true.size(); ++c) {
        const double measured_ratio = var_mis[c] / var_true[c];
        const double analytic_ratio = analytic_mis[c] / analytic_true[c];
        REQUIRE(measured_ratio >= 0.8 * analytic_ratio);
        REQUIRE(measured_ratio <= 1.2 * analytic_ratio);
        REQUIRE(analytic_ratio > 4.0);  // the blow-up is material, not rounding
    }
}

TEST_CASE("sampling matches enumerated probabilities", "[slow]") {
    std::mt19937_64 gen(95);
    auto check = [](const auto& env, std::uint64_t seed) {
        const std::size_t n = 100000;
        RandomStream rng = make_stream(seed, 4);
        std::vector<std::size_t> counts(env.num_trajectories(), 0);
        for (std::size_t i = 0; i < n; ++i) ++counts[env.sample(rng)];
        for (std::size_t k = 0; k < counts.size(); ++k) {
            const double p = env.probability(k);
            const double se = std::sqrt(p * (1.0 - p) / static_cast<double>(n));
            REQUIRE_THAT(static_cast<double>(counts[k]) / static_cast<double>(n),
                         WithinAbs(p, 5.0 * se + 1e-4));
        }
    };
    check(random_bandit(gen, 5), 11);
    check(random_chain(gen, 2, 3), 12);
    check(MultiPromptBandit({random_bandit(gen, 3), random_bandit(gen, 3)}), 13);
}

TEST_CASE("sampling is reproducible across identical streams") {
    std::mt19937_64 gen(96);
    const TokenChainEnv env = random_chain(gen, 3, 3);
    RandomStream a = make_stream(5, 2), b = make_stream(5, 2);
    for (int i = 0; i < 64; ++i) REQUIRE(env.sample(a) == env.sample(b));
}

TEST_CASE("multi-prompt mixture splits outcomes and parameters per prompt") {
    const SoftmaxBandit p0({0.0, 0.0}, {1, 0});
    const SoftmaxBandit p1({0.0, 0.0, 0.0}, {0, 0, 1});
    const MultiPromptBandit multi({p0, p1});

    REQUIRE(multi.num_prompts() == 2);
    REQUIRE(multi.num_trajectories() == 5);
    REQUIRE(multi.param_dim() == 5);

    REQUIRE_THAT(multi.probability(0), WithinAbs(0.25, 1e-15));
    REQUIRE_THAT(multi.probability(2), WithinAbs(1.0 / 6.0, 1e-15));
    REQUIRE(multi.correct(0));
    REQUIRE_FALSE(multi.correct(1));
    REQUIRE_FALSE(multi.correct(2));
    REQUIRE(multi.correct(4));
    REQUIRE_THROWS_AS(multi.probability(5), std::invalid_argument);

    // J = (1/2)(1/2) + (1/2)(1/3); each prompt contributes its own block.
    REQUIRE_THAT(expected_true_reward(multi), WithinAbs(0.25 + 1.0 / 6.0, 1e-15));

    const auto score = score_function(multi, 3);  // prompt 1, action 1
    REQUIRE(score[0] == 0.0);
    REQUIRE(score[1] == 0.0);
    REQUIRE_THAT(score[2], WithinAbs(-1.0 / 3.0, 1e-15));
    REQUIRE_THAT(score[3], WithinAbs(2.0 / 3.0, 1e-15));
    REQUIRE_THAT(score[4], WithinAbs(-1.0 / 3.0, 1e-15));

    RandomStream rng = make_stream(3, 6);
    for (int i = 0; i < 32; ++i) {
        const std::size_t prompt = multi.sample_prompt(rng);
        REQUIRE(prompt < 2);
        const std::size_t flat = multi.sample_trajectory(prompt, rng);
        REQUIRE(flat < 5);
        REQUIRE((prompt == 0 ? flat < 2 : flat >= 2));
    }

    std::vector<double> shifted = multi.params();
    shifted[2] += 1.0;
    MultiPromptBandit moved = multi;
    moved.set_params(shifted);
    REQUIRE(moved.params()[2] == 1.0);
    REQUIRE_THAT(moved.prompt(1).probability(0), WithinRel(std::exp(1.0) / (std::exp(1.0) + 2.0), 1e-12));
    REQUIRE_THROWS_AS(moved.set_params(std::vector<double>(4, 0.0)), std::invalid_argument);
}

TEST_CASE("KL divergence against a reference policy") {
    const SoftmaxBandit uniform({0.0, 0.0}, {1, 0});
    const SoftmaxBandit skewed({std::log(2.0), 0.0}, {1, 0});

    REQUIRE(policy_kl(uniform, uniform) == 0.0);
    // KL([1/2,1/2] || [2/3,1/3]) = log(9/8)/2.
    REQUIRE_THAT(policy_kl(uniform, skewed), WithinRel(std::log(9.0 / 8.0) / 2.0, 1e-12));
    REQUIRE(policy_kl(skewed, uniform) > 0.0);

    std::mt19937_64 gen(97);
    for (int rep = 0; rep < 5; ++rep) {
        const SoftmaxBandit a = random_bandit(gen, 4), b = random_bandit(gen, 4);
        REQUIRE(policy_kl(a, b) >= 0.0);
    }
    const SoftmaxBandit three({0.0, 0.0, 0.0}, {1, 0, 0});
    REQUIRE_THROWS_AS(policy_kl(uniform, three), std::invalid_argument);
}

TEST_CASE("KL gradient matches central finite differences") {
    std::mt19937_64 gen(98);
    const double h = 1e-5, tol = 1e-6;
    const SoftmaxBandit ref = random_bandit(gen, 5);
    const SoftmaxBandit env = random_bandit(gen, 5);

    require_close(policy_kl_gradient(env, ref),
                  fd_gradient(env, h, [&](const auto& e) { return policy_kl(e, ref); }), tol);

    const TokenChainEnv chain_ref = random_chain(gen, 2, 4);
    TokenChainEnv chain = chain_ref;
    std::vector<double> params = chain.params();
    for (double& p : params) p += 0.3;
    params[0] -= 1.0;
    chain.set_params(params);
    require_close(policy_kl_gradient(chain, chain_ref),
                  fd_gradient(chain, h, [&](const auto& e) { return policy_kl(e, chain_ref); }), tol);
}

TEST_CASE("KL-regularized objective and gradient compose the parts") {
    std::mt19937_64 gen(99);
    const SoftmaxBandit ref = random_bandit(gen, 4);
    const SoftmaxBandit env = random_bandit(gen, 4);
    const double beta = 0.37;

    REQUIRE_THAT(kl_regularized_objective(env, ref, beta),
                 WithinAbs(expected_true_reward(env) - beta * policy_kl(env, ref), 1e-15));
    REQUIRE(kl_regularized_objective(env, ref, 0.0) == expected_true_reward(env));

    const auto grad = kl_regularized_gradient(env, ref, beta);
    const auto plain = exact_clean_gradient(env);
    const auto klg = policy_kl_gradient(env, ref);
    for (std::size_t c = 0; c < grad.size(); ++c)
        REQUIRE_THAT(grad[c], WithinAbs(plain[c] - beta * klg[c], 1e-15));

    require_close(kl_regularized_gradient(env, ref, beta),
                  fd_gradient(env, 1e-5,
                              [&](const auto& e) { return kl_regularized_objective(e, ref, beta); }),
                  1e-6);
}
