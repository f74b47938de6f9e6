#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <deque>
#include <optional>
#include <stdexcept>
#include <vector>

#include "noisypg/reward_channel.hpp"
#include "noisypg/rng.hpp"

namespace noisypg {

// One audited batch of rule verdicts: a random share q of the rule-negatives
// is appealed to a trusted oracle, each overturned verdict is evidence of a
// false negative, and the ratio feeds an EMA estimate of the miss rate rho1.

struct AppealRoundRecord {
    std::size_t round = 0;
    std::size_t rule_positive = 0;
    std::size_t rule_negative = 0;
    double appeal_fraction = 0.0;
    std::size_t appealed = 0;
    std::size_t flipped = 0;
    double rho1_point = 0.0;  // this round's smoothed-count estimate
    double rho1_ema = 0.0;    // running estimate after folding the point in
};

struct AppealLedgerOptions {
    double decay = 0.1;         // EMA weight on the newest point
    std::size_t window = 64;    // diagnostic history length
    double prior_alpha = 1e-5;  // pseudo-counts keeping the point estimate
    double prior_beta = 1e-5;   // defined when a round carries no evidence
};

class AppealLedger {
  public:
    AppealLedger() = default;
    explicit AppealLedger(AppealLedgerOptions options) : options_(options) {
        if (!(options_.decay > 0.0) || options_.decay > 1.0)
            throw std::invalid_argument("AppealLedger: decay must lie in (0, 1]");
        if (options_.window == 0)
            throw std::invalid_argument("AppealLedger: window must be positive");
        if (options_.prior_alpha <= 0.0 || options_.prior_beta <= 0.0)
            throw std::invalid_argument("AppealLedger: priors must be positive");
    }

    const AppealLedgerOptions& options() const noexcept { return options_; }
    std::size_t rounds() const noexcept { return rounds_; }
    bool has_evidence() const noexcept { return ema_.has_value(); }

    // Current estimate; before any evidence arrives this is the prior point.
    double rho1() const noexcept {
        if (ema_) return *ema_;
        return options_.prior_alpha / (options_.prior_alpha + options_.prior_beta);
    }

    const std::deque<AppealRoundRecord>& recent() const noexcept { return recent_; }
    std::optional<AppealRoundRecord> last() const {
        if (recent_.empty()) return std::nullopt;
        return recent_.back();
    }

    // Folds one measured point into the EMA; the first point initializes it.
    double absorb_point(double point) {
        ema_ = ema_ ? (1.0 - options_.decay) * *ema_ + options_.decay * point : point;
        return *ema_;
    }

    void push_record(AppealRoundRecord record) {
        ++rounds_;
        recent_.push_back(record);
        while (recent_.size() > options_.window) recent_.pop_front();
    }

  private:
    AppealLedgerOptions options_;
    std::size_t rounds_ = 0;
    std::optional<double> ema_;
    std::deque<AppealRoundRecord> recent_;
};

// Trusted-but-imperfect adjudicator. Error rates use the same convention as
// the reward channel: false_accept flips a true 0 to a 1, false_reject flips
// a true 1 to a 0. The oracle owns its stream so audit randomness stays
// separate from policy and channel randomness.
class AppealOracle {
  public:
    AppealOracle(double false_accept_rate, double false_reject_rate, RandomStream stream)
        : rates_(false_accept_rate, false_reject_rate), stream_(std::move(stream)) {}

    BinaryReward judge(BinaryReward true_label) { return corrupt(true_label, rates_, stream_); }
    RandomStream& stream() noexcept { return stream_; }
    const NoiseRates& error_rates() const noexcept { return rates_; }

  private:
    NoiseRates rates_;
    RandomStream stream_;
};

// Uniform without-replacement draw of round(q * n) candidates.
inline std::vector<std::size_t> select_appeals(const std::vector<std::size_t>& candidates,
                                               double appeal_fraction, RandomStream& rng) {
    if (!(appeal_fraction > 0.0) || appeal_fraction > 1.0)
        throw std::invalid_argument("select_appeals: appeal fraction must lie in (0, 1]");
    const auto want = static_cast<std::size_t>(
        std::llround(appeal_fraction * static_cast<double>(candidates.size())));
    const std::size_t count = std::min(want, candidates.size());
    std::vector<std::size_t> chosen;
    chosen.reserve(count);
    std::sample(candidates.begin(), candidates.end(), std::back_inserter(chosen), count, rng);
    return chosen;
}

// Horvitz-Thompson estimate of the false-negative count from the audited
// subsample: each flipped verdict represents 1/q rule-negatives.
inline double ht_false_negative_estimate(std::size_t flipped, double appeal_fraction) {
    if (!(appeal_fraction > 0.0) || appeal_fraction > 1.0)
        throw std::invalid_argument("ht_false_negative_estimate: appeal fraction must lie in (0, 1]");
    return static_cast<double>(flipped) / appeal_fraction;
}

// Point estimate of rho1 for one round. Rule-positives stand in for the true
// positives, so rho1 ~ FN / (FN + TP); the pseudo-counts keep the ratio
// defined, and pull toward 1/2, when a round carries almost no evidence.
inline double rho1_point_estimate(double fn_estimate, std::size_t rule_positive,
                                  const AppealLedgerOptions& options) {
    return (fn_estimate + options.prior_alpha) /
           (fn_estimate + static_cast<double>(rule_positive) + options.prior_alpha +
            options.prior_beta);
}

// Runs one appeal round over a batch: picks the audit subsample among the
// rule-negatives, has the oracle re-judge each against its true label, and
// folds the resulting point estimate into the ledger. Rounds with no
// rule-negatives, or whose subsample rounds to empty, are recorded but leave
// the estimate untouched. Selection and judging both consume the oracle's
// stream, in that order.
inline AppealRoundRecord simulate_appeal_round(const std::vector<BinaryReward>& true_labels,
                                               const std::vector<BinaryReward>& rule_verdicts,
                                               double appeal_fraction, AppealOracle& oracle,
                                               AppealLedger& ledger) {
    if (true_labels.size() != rule_verdicts.size())
        throw std::invalid_argument("simulate_appeal_round: label/verdict size mismatch");
    if (true_labels.empty())
        throw std::invalid_argument("simulate_appeal_round: empty batch");
    if (!(appeal_fraction > 0.0) || appeal_fraction > 1.0)
        throw std::invalid_argument("simulate_appeal_round: appeal fraction must lie in (0, 1]");

    AppealRoundRecord record;
    record.round = ledger.rounds();
    record.appeal_fraction = appeal_fraction;

    std::vector<std::size_t> negatives;
    for (std::size_t i = 0; i < rule_verdicts.size(); ++i) {
        if (rule_verdicts[i].positive())
            ++record.rule_positive;
        else
            negatives.push_back(i);
    }
    record.rule_negative = negatives.size();

    if (!negatives.empty()) {
        const std::vector<std::size_t> chosen =
            select_appeals(negatives, appeal_fraction, oracle.stream());
        record.appealed = chosen.size();
        for (std::size_t i : chosen)
            if (oracle.judge(true_labels[i]).positive()) ++record.flipped;
    }

    if (record.appealed == 0) {
        // No evidence this round: carry the running estimate forward.
        record.rho1_point = ledger.rho1();
        record.rho1_ema = ledger.rho1();
    } else {
        const double fn = ht_false_negative_estimate(record.flipped, appeal_fraction);
        record.rho1_point = rho1_point_estimate(fn, record.rule_positive, ledger.options());
        record.rho1_ema = ledger.absorb_point(record.rho1_point);
    }
    ledger.push_record(record);
    return record;
}

}  // namespace noisypg
