#pragma once

#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "noisypg/config_file.hpp"
#include "noisypg/stats.hpp"
#include "noisypg/table.hpp"
#include "noisypg/trainer.hpp"

namespace noisypg {

// Configured experiment matrices over the training loop: the four-method
// comparison, the two rate-mis-specification sweeps, the appeals pipeline,
// and a fixed-policy variance study. Each experiment persists plot-ready
// CSV tables plus a JSON manifest; re-runs reproduce the CSV bytes exactly.

enum class ExperimentKind {
    method_comparison,
    misspec_sweep_backward,
    misspec_sweep_forward,
    appeals_pipeline,
    variance_study,
};

inline const char* experiment_kind_name(ExperimentKind kind) {
    switch (kind) {
        case ExperimentKind::method_comparison: return "method_comparison";
        case ExperimentKind::misspec_sweep_backward: return "misspec_sweep_backward";
        case ExperimentKind::misspec_sweep_forward: return "misspec_sweep_forward";
        case ExperimentKind::appeals_pipeline: return "appeals_pipeline";
        case ExperimentKind::variance_study: return "variance_study";
    }
    throw std::invalid_argument("experiment_kind_name: unknown kind");
}

inline ExperimentKind parse_experiment_kind(const std::string& name) {
    if (name == "method_comparison") return ExperimentKind::method_comparison;
    if (name == "misspec_sweep_backward") return ExperimentKind::misspec_sweep_backward;
    if (name == "misspec_sweep_forward") return ExperimentKind::misspec_sweep_forward;
    if (name == "appeals_pipeline") return ExperimentKind::appeals_pipeline;
    if (name == "variance_study") return ExperimentKind::variance_study;
    throw std::invalid_argument(
        "unknown experiment kind '" + name +
        "' (expected method_comparison, misspec_sweep_backward, "
        "misspec_sweep_forward, appeals_pipeline, or variance_study)");
}

// Declarative environment description, buildable from a config file.
struct EnvironmentSpec {
    std::string kind = "bandit";  // bandit | chain | multi_bandit
    std::size_t actions = 4;
    std::vector<std::size_t> correct = {0};
    std::size_t vocab = 2;
    std::size_t horizon = 2;
    std::vector<std::size_t> accepting = {};
    std::size_t prompts = 2;  // multi_bandit: one correct arm per prompt, rotating
};

using AnyEnvironment = std::variant<SoftmaxBandit, TokenChainEnv, MultiPromptBandit>;

inline AnyEnvironment build_environment(const EnvironmentSpec& spec) {
    if (spec.kind == "bandit") {
        std::vector<int> flags(spec.actions, 0);
        for (std::size_t idx : spec.correct) {
            if (idx >= spec.actions)
                throw std::invalid_argument("environment: correct index out of range");
            flags[idx] = 1;
        }
        return SoftmaxBandit(std::vector<double>(spec.actions, 0.0), std::move(flags));
    }
    if (spec.kind == "chain")
        return TokenChainEnv(spec.vocab, spec.horizon,
                             std::vector<double>(spec.vocab * spec.horizon, 0.0), spec.accepting);
    if (spec.kind == "multi_bandit") {
        if (spec.prompts == 0)
            throw std::invalid_argument("environment: need at least one prompt");
        std::vector<SoftmaxBandit> prompts;
        for (std::size_t p = 0; p < spec.prompts; ++p) {
            std::vector<int> flags(spec.actions, 0);
            flags[p % spec.actions] = 1;
            prompts.emplace_back(std::vector<double>(spec.actions, 0.0), std::move(flags));
        }
        return MultiPromptBandit(std::move(prompts));
    }
    throw std::invalid_argument("environment: unknown kind '" + spec.kind + "'");
}

struct ExperimentSpec {
    ExperimentKind kind = ExperimentKind::method_comparison;
    std::string name = "experiment";
    std::filesystem::path output_root = "results";
    EnvironmentSpec env;
    std::vector<double> rho0_grid;
    std::vector<double> rho1_grid;
    std::vector<std::uint64_t> seeds = {0};
    TrainConfig train;  // template: method, beliefs, and seed are set per cell
    double tail_fraction = 0.1;
    std::size_t variance_batch = 100000;
    std::size_t variance_repetitions = 20;

    void validate() const {
        if (name.empty()) throw std::invalid_argument("experiment: name must be non-empty");
        for (char c : name)
            if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_' && c != '-')
                throw std::invalid_argument("experiment: name must be filesystem-plain");
        if (seeds.empty()) throw std::invalid_argument("experiment: seeds must be non-empty");
        if (!(tail_fraction > 0.0) || tail_fraction > 1.0)
            throw std::invalid_argument("experiment: tail fraction must lie in (0, 1]");
        auto check_grid = [](const std::vector<double>& grid, const char* which) {
            if (grid.empty())
                throw std::invalid_argument(std::string("experiment: ") + which +
                                            " grid must be non-empty");
            for (double r : grid)
                if (!(r >= 0.0) || r >= 0.5)
                    throw std::invalid_argument(std::string("experiment: ") + which +
                                                " grid rate out of [0, 0.5)");
        };
        if (kind == ExperimentKind::misspec_sweep_backward) {
            check_grid(rho0_grid, "rho0");
            check_grid(rho1_grid, "rho1");
        }
        if (kind == ExperimentKind::misspec_sweep_forward) check_grid(rho1_grid, "rho1");
        if (kind == ExperimentKind::variance_study) {
            if (variance_batch == 0 || variance_repetitions < 2)
                throw std::invalid_argument(
                    "experiment: variance study needs a batch and at least 2 repetitions");
        }
    }
};

struct TraceSummary {
    double final_j = 0.0;  // mean exact J over the trailing fraction of rows
    double rho1_last = 0.0;
    double max_gradient_norm = 0.0;
    bool diverged = false;
};

inline TraceSummary summarize(const TrainingTrace& trace, double tail_fraction) {
    if (!(tail_fraction > 0.0) || tail_fraction > 1.0)
        throw std::invalid_argument("summarize: tail fraction must lie in (0, 1]");
    if (trace.rows.empty()) throw std::invalid_argument("summarize: empty trace");
    const std::size_t n = trace.rows.size();
    std::size_t tail = static_cast<std::size_t>(
        std::llround(tail_fraction * static_cast<double>(n)));
    tail = std::min(std::max<std::size_t>(tail, 1), n);

    TraceSummary summary;
    summary.diverged = trace.diverged;
    double sum = 0.0;
    for (std::size_t i = n - tail; i < n; ++i) sum += trace.rows[i].expected_true_reward;
    summary.final_j = sum / static_cast<double>(tail);
    summary.rho1_last = trace.rows.back().rho1_used;
    for (const TraceRow& row : trace.rows)
        summary.max_gradient_norm = std::max(summary.max_gradient_norm, row.gradient_norm);
    return summary;
}

inline ReportTable trace_table(const TrainingTrace& trace) {
    ReportTable table({{"step", ColumnType::integer},
                       {"theta_digest", ColumnType::string},
                       {"expected_true_reward", ColumnType::real},
                       {"observed_reward_mean", ColumnType::real},
                       {"rho1_used", ColumnType::real},
                       {"gradient_norm", ColumnType::real},
                       {"cosine_to_clean", ColumnType::real},
                       {"appeal_round", ColumnType::integer},
                       {"appeal_rule_positive", ColumnType::integer},
                       {"appeal_rule_negative", ColumnType::integer},
                       {"appeal_appealed", ColumnType::integer},
                       {"appeal_flipped", ColumnType::integer},
                       {"appeal_rho1_point", ColumnType::real},
                       {"appeal_rho1_ema", ColumnType::real}});
    for (const TraceRow& row : trace.rows)
        table.append_row({static_cast<std::int64_t>(row.step), row.theta_digest,
                          row.expected_true_reward, row.observed_reward_mean, row.rho1_used,
                          row.gradient_norm, row.cosine_to_clean,
                          static_cast<std::int64_t>(row.appeal_round),
                          static_cast<std::int64_t>(row.appeal_rule_positive),
                          static_cast<std::int64_t>(row.appeal_rule_negative),
                          static_cast<std::int64_t>(row.appeal_appealed),
                          static_cast<std::int64_t>(row.appeal_flipped), row.appeal_rho1_point,
                          row.appeal_rho1_ema});
    return table;
}

struct ComparisonResult {
    std::string condition_a;
    std::string condition_b;
    std::size_t pairs = 0;
    double mean_difference = 0.0;  // mean of (a - b) over paired seeds
    std::size_t wins = 0;          // seeds where a strictly beats b
    double p_value = 1.0;          // one-sided sign test for a > b, ties dropped
};

// Paired-by-seed comparison of final J between two conditions of a
// method-comparison or appeals table.
inline ComparisonResult compare_conditions(const ReportTable& runs, const std::string& a,
                                           const std::string& b) {
    std::map<std::int64_t, double> by_seed_a, by_seed_b;
    for (std::size_t r = 0; r < runs.num_rows(); ++r) {
        if (runs.text_at(r, "row_kind") != "run") continue;
        const std::string condition = runs.text_at(r, "condition");
        if (condition != a && condition != b) continue;
        const std::int64_t seed = runs.integer_at(r, "seed");
        const double j = runs.real_at(r, "final_J");
        auto insert = [&](std::map<std::int64_t, double>& into) {
            if (!into.emplace(seed, j).second)
                throw std::invalid_argument("compare_conditions: duplicate seed " +
                                            std::to_string(seed) + " for condition");
        };
        if (condition == a) insert(by_seed_a);
        if (condition == b) insert(by_seed_b);
    }
    if (by_seed_a.empty() || by_seed_b.empty())
        throw std::invalid_argument("compare_conditions: condition missing from table");
    if (by_seed_a.size() != by_seed_b.size())
        throw std::invalid_argument("compare_conditions: seed sets differ");

    ComparisonResult result;
    result.condition_a = a;
    result.condition_b = b;
    std::size_t informative = 0;
    for (const auto& [seed, ja] : by_seed_a) {
        const auto it = by_seed_b.find(seed);
        if (it == by_seed_b.end())
            throw std::invalid_argument("compare_conditions: seed sets differ");
        const double diff = ja - it->second;
        result.mean_difference += diff;
        ++result.pairs;
        if (diff > 0.0) {
            ++result.wins;
            ++informative;
        } else if (diff < 0.0) {
            ++informative;
        }
    }
    result.mean_difference /= static_cast<double>(result.pairs);
    result.p_value = sign_test_p(result.wins, informative);
    return result;
}

namespace detail {

inline std::string format_rate(double rate) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%.2f", rate);
    return buf;
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
    if (!out) throw std::runtime_error("write failed for " + path.string());
}

inline std::string utc_timestamp() {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

// Canonical flat rendering of everything that changes results; its digest
// identifies the configuration in the manifest.
inline std::string spec_fingerprint(const ExperimentSpec& spec) {
    std::string s = std::string(experiment_kind_name(spec.kind)) + "|" + spec.name + "|" +
                    spec.env.kind + "|";
    auto add = [&s](double v) {
        s += format_real(v);
        s += ',';
    };
    s += std::to_string(spec.env.actions) + "/" + std::to_string(spec.env.vocab) + "/" +
         std::to_string(spec.env.horizon) + "/" + std::to_string(spec.env.prompts) + "|";
    for (std::size_t v : spec.env.correct) s += std::to_string(v) + ",";
    s += "|";
    for (std::size_t v : spec.env.accepting) s += std::to_string(v) + ",";
    s += "|";
    for (double v : spec.rho0_grid) add(v);
    s += "|";
    for (double v : spec.rho1_grid) add(v);
    s += "|";
    for (std::uint64_t v : spec.seeds) s += std::to_string(v) + ",";
    s += "|";
    const TrainConfig& t = spec.train;
    add(t.rho0);
    add(t.rho1);
    add(t.rho0_hat.value_or(-1.0));
    add(t.rho1_hat.value_or(-1.0));
    add(t.learning_rate);
    add(t.kl_beta);
    add(t.clip_eps);
    add(t.advantage_eps);
    add(t.appeals.fraction);
    add(t.appeals.decay);
    add(t.appeals.oracle_false_accept);
    add(t.appeals.oracle_false_reject);
    s += std::to_string(t.batch_size) + "/" + std::to_string(t.group_size) + "/" +
         std::to_string(t.steps) + "/" + (t.use_adam ? "adam" : "sgd") + "|";
    add(spec.tail_fraction);
    s += std::to_string(spec.variance_batch) + "/" + std::to_string(spec.variance_repetitions);
    return s;
}

inline std::string fingerprint_digest(const std::string& fingerprint) {
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char c : fingerprint) {
        h ^= c;
        h *= 1099511628211ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

// Per-coordinate mean and variance of the batch-mean gradient estimate.
// The variance comes from within-batch per-sample second moments (divided
// by the batch size), averaged over repetitions; with batch x repetitions
// samples it is far tighter than the across-repetition spread would be.
template <PolicyEnvironment E>
std::pair<std::vector<double>, std::vector<double>> estimator_statistics(
    const E& env, const NoiseRates& rates, const UpdateMethod& method, std::size_t batch,
    std::size_t repetitions, std::uint64_t seed, std::uint64_t stream_base) {
    const std::size_t dim = env.param_dim();
    std::vector<double> mean_acc(dim, 0.0), var_acc(dim, 0.0);
    std::vector<double> m1(dim), m2(dim), term(dim);
    for (std::size_t rep = 0; rep < repetitions; ++rep) {
        RandomStream rng = make_stream(seed, stream_base + rep);
        std::fill(m1.begin(), m1.end(), 0.0);
        std::fill(m2.begin(), m2.end(), 0.0);
        for (std::size_t i = 0; i < batch; ++i) {
            const std::size_t k = env.sample(rng);
            const double coef = sample_coefficient(env.correct(k), rates, method, rng);
            std::fill(term.begin(), term.end(), 0.0);
            if (coef != 0.0) env.accumulate_score(k, coef, term);
            for (std::size_t c = 0; c < dim; ++c) {
                m1[c] += term[c];
                m2[c] += term[c] * term[c];
            }
        }
        for (std::size_t c = 0; c < dim; ++c) {
            const double avg = m1[c] / static_cast<double>(batch);
            mean_acc[c] += avg;
            var_acc[c] += (m2[c] / static_cast<double>(batch) - avg * avg) /
                          static_cast<double>(batch);
        }
    }
    for (std::size_t c = 0; c < dim; ++c) {
        mean_acc[c] /= static_cast<double>(repetitions);
        var_acc[c] /= static_cast<double>(repetitions);
    }
    return {std::move(mean_acc), std::move(var_acc)};
}

struct PlannedRun {
    std::string cell;       // output directory name under the experiment
    std::string condition;  // table label (method or pipeline condition)
    std::uint64_t seed = 0;
    double rho0_hat = -1.0;  // sweep coordinates; -1 marks "not applicable"
    double rho1_hat = -1.0;
    TrainConfig config;
};

inline std::vector<PlannedRun> plan_runs(const ExperimentSpec& spec) {
    std::vector<PlannedRun> runs;
    auto push = [&](std::string cell, std::string condition, std::uint64_t seed,
                    TrainConfig config, double r0h = -1.0, double r1h = -1.0) {
        config.seed = seed;
        config.validate();
        runs.push_back({std::move(cell), std::move(condition), seed, r0h, r1h, std::move(config)});
    };

    switch (spec.kind) {
        case ExperimentKind::method_comparison: {
            const TrainMethod methods[] = {TrainMethod::oracle, TrainMethod::naive,
                                           TrainMethod::pgbc, TrainMethod::pgfc};
            for (TrainMethod method : methods)
                for (std::uint64_t seed : spec.seeds) {
                    TrainConfig config = spec.train;
                    config.method = method;
                    config.estimate_online = false;
                    push(std::string(method_name(method)) + "_s" + std::to_string(seed),
                         method_name(method), seed, std::move(config));
                }
            break;
        }
        case ExperimentKind::misspec_sweep_backward: {
            for (double r0h : spec.rho0_grid)
                for (double r1h : spec.rho1_grid)
                    for (std::uint64_t seed : spec.seeds) {
                        TrainConfig config = spec.train;
                        config.method = TrainMethod::pgbc;
                        config.estimate_online = false;
                        config.rho0_hat = r0h;
                        config.rho1_hat = r1h;
                        push("bc_r0h" + format_rate(r0h) + "_r1h" + format_rate(r1h) + "_s" +
                                 std::to_string(seed),
                             "pgbc", seed, std::move(config), r0h, r1h);
                    }
            break;
        }
        case ExperimentKind::misspec_sweep_forward: {
            for (double r1h : spec.rho1_grid)
                for (std::uint64_t seed : spec.seeds) {
                    TrainConfig config = spec.train;
                    config.method = TrainMethod::pgfc;
                    config.estimate_online = false;
                    config.rho1_hat = r1h;
                    push("fc_r1h" + format_rate(r1h) + "_s" + std::to_string(seed), "pgfc", seed,
                         std::move(config), -1.0, r1h);
                }
            break;
        }
        case ExperimentKind::appeals_pipeline: {
            for (std::uint64_t seed : spec.seeds) {
                TrainConfig online = spec.train;
                online.method = TrainMethod::pgfc;
                online.estimate_online = true;
                push("online_s" + std::to_string(seed), "pgfc_online", seed, std::move(online));
            }
            for (std::uint64_t seed : spec.seeds) {
                TrainConfig known = spec.train;
                known.method = TrainMethod::pgfc;
                known.estimate_online = false;
                push("known_s" + std::to_string(seed), "pgfc_known", seed, std::move(known));
            }
            break;
        }
        case ExperimentKind::variance_study:
            break;  // no training runs; handled directly
    }
    return runs;
}

}  // namespace detail

struct ExperimentResult {
    ReportTable table;  // the experiment's summary table (schema depends on kind)
    std::filesystem::path output_dir;
    std::vector<std::string> failures;  // one message per failed cell
    int exit_code = 0;                  // 0 ok; 2 when any cell failed
};

// Plans the full matrix, executes it cell by cell (failures recorded, not
// fatal), writes per-cell traces plus the experiment-level tables and
// manifest, and returns the summary table.
inline ExperimentResult run_experiment(const ExperimentSpec& spec) {
    spec.validate();
    const std::vector<detail::PlannedRun> runs = detail::plan_runs(spec);
    const AnyEnvironment prototype = build_environment(spec.env);

    const std::filesystem::path out_dir = spec.output_root / spec.name;
    std::filesystem::create_directories(out_dir);

    const bool sweep = spec.kind == ExperimentKind::misspec_sweep_backward ||
                       spec.kind == ExperimentKind::misspec_sweep_forward;
    const bool appeals = spec.kind == ExperimentKind::appeals_pipeline;

    std::vector<ColumnSpec> schema;
    if (sweep) {
        schema = {{"rho0_hat", ColumnType::real},
                  {"rho1_hat", ColumnType::real},
                  {"seed", ColumnType::integer},
                  {"final_J", ColumnType::real},
                  {"status", ColumnType::string}};
    } else if (spec.kind == ExperimentKind::variance_study) {
        schema = {{"method", ColumnType::string},
                  {"coordinate", ColumnType::integer},
                  {"mean_estimate", ColumnType::real},
                  {"variance", ColumnType::real},
                  {"repetitions", ColumnType::integer},
                  {"batch", ColumnType::integer}};
    } else {
        schema = {{"row_kind", ColumnType::string},  {"condition", ColumnType::string},
                  {"seed", ColumnType::integer},     {"final_J", ColumnType::real},
                  {"final_J_std", ColumnType::real}, {"status", ColumnType::string}};
        if (appeals) schema.insert(schema.begin() + 5, {"rho1_last", ColumnType::real});
    }
    ReportTable table(schema);
    ExperimentResult result{std::move(table), out_dir, {}, 0};
    nlohmann::ordered_json cells = nlohmann::ordered_json::array();

    if (spec.kind == ExperimentKind::variance_study) {
        // Fixed-policy estimator study: repeated batch gradients per method,
        // reporting per-coordinate mean and across-repetition variance.
        const NoiseRates rates(spec.train.rho0, spec.train.rho1);
        const NoiseRates belief(spec.train.rho0_hat.value_or(spec.train.rho0),
                                spec.train.rho1_hat.value_or(spec.train.rho1));
        const std::pair<std::string, UpdateMethod> methods[] = {
            {"oracle", OracleUpdate{}},
            {"naive", NaiveUpdate{}},
            {"pgbc", BackwardUpdate{belief}},
            {"pgfc", ForwardUpdate{belief.rho1()}},
        };
        std::uint64_t stream_base = 10;
        for (const auto& [label, update] : methods) {
            const auto [means, variances] = std::visit(
                [&](const auto& e) {
                    return detail::estimator_statistics(e, rates, update, spec.variance_batch,
                                                        spec.variance_repetitions,
                                                        spec.seeds.front(), stream_base);
                },
                prototype);
            stream_base += spec.variance_repetitions;
            for (std::size_t c = 0; c < means.size(); ++c)
                result.table.append_row({std::string(label), static_cast<std::int64_t>(c),
                                         means[c], variances[c],
                                         static_cast<std::int64_t>(spec.variance_repetitions),
                                         static_cast<std::int64_t>(spec.variance_batch)});
            cells.push_back({{"name", label}, {"status", "ok"}});
        }
    } else {
        struct RunOutcome {
            const detail::PlannedRun* run;
            TraceSummary summary;
            std::string status;
        };
        std::vector<RunOutcome> outcomes;
        for (const detail::PlannedRun& run : runs) {
            RunOutcome outcome{&run, {}, "ok"};
            try {
                const TrainingTrace trace = std::visit(
                    [&](const auto& e) { return train(e, run.config); }, prototype);
                outcome.summary = summarize(trace, spec.tail_fraction);
                if (outcome.summary.diverged) outcome.status = "diverged";
                const std::filesystem::path cell_dir = out_dir / run.cell;
                std::filesystem::create_directories(cell_dir);
                detail::write_text_file(cell_dir / "trace.csv", trace_table(trace).to_csv());
            } catch (const std::exception& e) {
                outcome.status = "failed";
                result.failures.push_back(run.cell + ": " + e.what());
            }
            cells.push_back({{"name", run.cell}, {"status", outcome.status}});
            outcomes.push_back(std::move(outcome));
        }

        if (sweep) {
            for (const RunOutcome& o : outcomes)
                result.table.append_row({o.run->rho0_hat, o.run->rho1_hat,
                                         static_cast<std::int64_t>(o.run->seed),
                                         o.summary.final_j, o.status});
            // One aggregate row per grid cell, flagged by seed = -1.
            std::vector<std::pair<double, double>> grid;
            for (const detail::PlannedRun& run : runs) {
                const std::pair<double, double> cell{run.rho0_hat, run.rho1_hat};
                if (grid.empty() || grid.back() != cell) grid.push_back(cell);
            }
            for (const auto& [r0h, r1h] : grid) {
                std::vector<double> js;
                for (const RunOutcome& o : outcomes)
                    if (o.status == "ok" && o.run->rho0_hat == r0h && o.run->rho1_hat == r1h)
                        js.push_back(o.summary.final_j);
                result.table.append_row({r0h, r1h, std::int64_t{-1},
                                         js.empty() ? 0.0 : mean(js), std::string("aggregate")});
            }
        } else {
            for (const RunOutcome& o : outcomes) {
                std::vector<Cell> row{std::string("run"), o.run->condition,
                                      static_cast<std::int64_t>(o.run->seed), o.summary.final_j,
                                      0.0};
                if (appeals) row.push_back(o.summary.rho1_last);
                row.push_back(o.status);
                result.table.append_row(std::move(row));
            }
            std::vector<std::string> conditions;
            for (const detail::PlannedRun& run : runs)
                if (conditions.empty() || conditions.back() != run.condition)
                    conditions.push_back(run.condition);
            for (const std::string& condition : conditions) {
                std::vector<double> js, rho1s;
                for (const RunOutcome& o : outcomes)
                    if (o.status == "ok" && o.run->condition == condition) {
                        js.push_back(o.summary.final_j);
                        rho1s.push_back(o.summary.rho1_last);
                    }
                const double avg = js.empty() ? 0.0 : mean(js);
                const double spread = js.size() >= 2 ? sample_std(js) : 0.0;
                std::vector<Cell> row{std::string("aggregate"), condition, std::int64_t{-1}, avg,
                                      spread};
                if (appeals) row.push_back(rho1s.empty() ? 0.0 : mean(rho1s));
                row.push_back(std::string("aggregate"));
                result.table.append_row(std::move(row));
            }
        }
    }

    const std::string summary_csv = result.table.to_csv();
    detail::write_text_file(out_dir / "summary.csv", summary_csv);
    if (sweep) detail::write_text_file(out_dir / "heatmap.csv", summary_csv);

    nlohmann::ordered_json manifest;
    manifest["name"] = spec.name;
    manifest["kind"] = experiment_kind_name(spec.kind);
    manifest["tool"] = "noisypg";
    manifest["version"] = "0.1.0";
    manifest["created"] = detail::utc_timestamp();  // the only re-run-varying field
    manifest["config_digest"] = detail::fingerprint_digest(detail::spec_fingerprint(spec));
    manifest["seeds"] = spec.seeds;
    manifest["rho0_grid"] = spec.rho0_grid;
    manifest["rho1_grid"] = spec.rho1_grid;
    manifest["tail_fraction"] = spec.tail_fraction;
    manifest["environment"] = {{"kind", spec.env.kind},     {"actions", spec.env.actions},
                               {"correct", spec.env.correct}, {"vocab", spec.env.vocab},
                               {"horizon", spec.env.horizon}, {"accepting", spec.env.accepting},
                               {"prompts", spec.env.prompts}};
    manifest["train"] = {{"rho0", spec.train.rho0},
                         {"rho1", spec.train.rho1},
                         {"learning_rate", spec.train.learning_rate},
                         {"batch_size", spec.train.batch_size},
                         {"group_size", spec.train.group_size},
                         {"steps", spec.train.steps},
                         {"kl_beta", spec.train.kl_beta},
                         {"clip_eps", spec.train.clip_eps},
                         {"advantage_eps", spec.train.advantage_eps},
                         {"optimizer", spec.train.use_adam ? "adam" : "sgd"},
                         {"appeal_fraction", spec.train.appeals.fraction},
                         {"appeal_decay", spec.train.appeals.decay}};
    manifest["cells"] = cells;
    detail::write_text_file(out_dir / "manifest.json", manifest.dump(2) + "\n");

    if (!result.failures.empty()) result.exit_code = 2;
    return result;
}

// Builds an ExperimentSpec from a parsed config file; rejects unknown keys.
inline ExperimentSpec parse_experiment_spec(ConfigFile& config) {
    ExperimentSpec spec;
    spec.kind = parse_experiment_kind(config.get_string("experiment"));
    spec.name = config.get_string("name");
    spec.output_root = config.get_string_or("output_root", "results");
    spec.tail_fraction = config.get_real_or("tail_fraction", 0.1);

    auto as_sizes = [](const std::vector<std::int64_t>& xs, const char* what) {
        std::vector<std::size_t> out;
        for (std::int64_t v : xs) {
            if (v < 0) throw std::invalid_argument(std::string(what) + " must be non-negative");
            out.push_back(static_cast<std::size_t>(v));
        }
        return out;
    };

    spec.env.kind = config.get_string_or("environment.kind", "bandit");
    if (config.has("environment.actions"))
        spec.env.actions = static_cast<std::size_t>(config.get_integer("environment.actions"));
    if (config.has("environment.correct"))
        spec.env.correct = as_sizes(config.get_integer_list("environment.correct"),
                                    "environment.correct");
    if (config.has("environment.vocab"))
        spec.env.vocab = static_cast<std::size_t>(config.get_integer("environment.vocab"));
    if (config.has("environment.horizon"))
        spec.env.horizon = static_cast<std::size_t>(config.get_integer("environment.horizon"));
    if (config.has("environment.accepting"))
        spec.env.accepting = as_sizes(config.get_integer_list("environment.accepting"),
                                      "environment.accepting");
    if (config.has("environment.prompts"))
        spec.env.prompts = static_cast<std::size_t>(config.get_integer("environment.prompts"));

    spec.train.rho0 = config.get_real_or("channel.rho0", 0.1);
    spec.train.rho1 = config.get_real_or("channel.rho1", 0.2);

    if (config.has("train.rho0_hat")) spec.train.rho0_hat = config.get_real("train.rho0_hat");
    if (config.has("train.rho1_hat")) spec.train.rho1_hat = config.get_real("train.rho1_hat");
    spec.train.learning_rate = config.get_real_or("train.learning_rate", 0.5);
    spec.train.batch_size =
        static_cast<std::size_t>(config.get_integer_or("train.batch_size", 256));
    spec.train.group_size = static_cast<std::size_t>(config.get_integer_or("train.group_size", 0));
    spec.train.steps = static_cast<std::size_t>(config.get_integer_or("train.steps", 200));
    spec.train.kl_beta = config.get_real_or("train.kl_beta", 0.0);
    spec.train.clip_eps = config.get_real_or("train.clip_eps", 0.2);
    spec.train.advantage_eps = config.get_real_or("train.advantage_eps", 1e-6);
    spec.train.use_adam = config.get_bool_or("train.use_adam", false);

    spec.train.appeals.fraction = config.get_real_or("appeals.fraction", 0.25);
    spec.train.appeals.decay = config.get_real_or("appeals.decay", 0.1);
    spec.train.appeals.oracle_false_accept =
        config.get_real_or("appeals.oracle_false_accept", 0.0);
    spec.train.appeals.oracle_false_reject =
        config.get_real_or("appeals.oracle_false_reject", 0.0);

    if (config.has("sweep.rho0_grid")) spec.rho0_grid = config.get_real_list("sweep.rho0_grid");
    if (config.has("sweep.rho1_grid")) spec.rho1_grid = config.get_real_list("sweep.rho1_grid");

    if (config.has("seeds")) {
        spec.seeds.clear();
        for (std::int64_t s : config.get_integer_list("seeds")) {
            if (s < 0) throw std::invalid_argument("seeds must be non-negative");
            spec.seeds.push_back(static_cast<std::uint64_t>(s));
        }
    }

    if (config.has("variance.batch"))
        spec.variance_batch = static_cast<std::size_t>(config.get_integer("variance.batch"));
    if (config.has("variance.repetitions"))
        spec.variance_repetitions =
            static_cast<std::size_t>(config.get_integer("variance.repetitions"));

    config.require_all_consumed();
    spec.validate();
    return spec;
}

}  // namespace noisypg
