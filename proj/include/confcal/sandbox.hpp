#pragma once

// Toy single-decision softmax policy trained three ways: cross-entropy on
// samples from a data distribution, clipped group-relative advantage updates,
// and a pairwise preference loss against a frozen reference. Cross-entropy
// recovers the data distribution; the other two concentrate mass on the
// rewarded/preferred option.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <fmt/format.h>

#include "confcal/completion.hpp"
#include "confcal/error.hpp"

namespace confcal::sandbox {

inline constexpr double kLogitClamp = 50.0;

using Rng = std::mt19937_64;

inline std::vector<double> softmax(std::span<const double> logits) {
    const double hi = *std::max_element(logits.begin(), logits.end());
    std::vector<double> p(logits.size());
    double total = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) total += (p[i] = std::exp(logits[i] - hi));
    for (auto& x : p) x /= total;
    return p;
}

inline std::size_t argmax(std::span<const double> xs) {
    return static_cast<std::size_t>(std::max_element(xs.begin(), xs.end()) - xs.begin());
}

/// KL(p || q); terms with p_i = 0 contribute nothing.
inline double kl_divergence(std::span<const double> p, std::span<const double> q) {
    double kl = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p[i] > 0.0) kl += p[i] * (std::log(p[i]) - std::log(q[i]));
    }
    return kl;
}

class ToyTask {
public:
    explicit ToyTask(std::vector<double> data_distribution) : probs_(std::move(data_distribution)) {
        if (probs_.size() < 2) throw Error(ErrorCode::config_invalid, "toy task needs at least 2 options");
        double total = 0.0;
        for (double p : probs_) {
            if (!(p >= 0.0)) throw Error(ErrorCode::config_invalid, "data distribution entries must be >= 0");
            total += p;
        }
        if (std::abs(total - 1.0) > 1e-12) {
            throw Error(ErrorCode::config_invalid, fmt::format("data distribution sums to {}, not 1", total));
        }
    }

    std::size_t num_options() const noexcept { return probs_.size(); }
    std::span<const double> data_distribution() const noexcept { return probs_; }

private:
    std::vector<double> probs_;
};

/// Softmax policy with a frozen copy of its initial logits as the reference.
class ToyPolicy {
public:
    explicit ToyPolicy(std::vector<double> logits) : logits_(std::move(logits)), reference_(logits_) {}

    static ToyPolicy uniform(std::size_t k) { return ToyPolicy(std::vector<double>(k, 0.0)); }

    std::span<const double> logits() const noexcept { return logits_; }
    std::span<const double> reference_logits() const noexcept { return reference_; }
    std::size_t size() const noexcept { return logits_.size(); }

    std::vector<double> probabilities() const { return softmax(logits_); }
    std::vector<double> reference_probabilities() const { return softmax(reference_); }

    /// Gradient-descent step on the logits, clamped to +/-kLogitClamp.
    void descend(std::span<const double> gradient, double lr) {
        for (std::size_t i = 0; i < logits_.size(); ++i) {
            logits_[i] = std::clamp(logits_[i] - lr * gradient[i], -kLogitClamp, kLogitClamp);
        }
    }

private:
    std::vector<double> logits_;
    std::vector<double> reference_;
};

inline std::size_t sample_index(std::span<const double> probs, Rng& rng) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const double u = unit(rng);
    double cum = 0.0;
    for (std::size_t i = 0; i + 1 < probs.size(); ++i) {
        cum += probs[i];
        if (u < cum) return i;
    }
    return probs.size() - 1;
}

namespace detail {

inline void check_sizes(const ToyPolicy& policy, const ToyTask& task) {
    if (policy.size() != task.num_options()) {
        throw Error(ErrorCode::invalid_argument, "policy and task disagree on the number of options");
    }
}

} // namespace detail

/// Gradient of the mean negative log-likelihood of `batch_size` options drawn from the data distribution.
inline std::vector<double> ce_sampled_gradient(const ToyPolicy& policy, const ToyTask& task, std::size_t batch_size,
                                               Rng& rng) {
    detail::check_sizes(policy, task);
    if (batch_size == 0) throw Error(ErrorCode::invalid_argument, "batch size must be >= 1");
    std::vector<double> freq(task.num_options(), 0.0);
    for (std::size_t b = 0; b < batch_size; ++b) freq[sample_index(task.data_distribution(), rng)] += 1.0;
    auto grad = policy.probabilities();
    for (std::size_t i = 0; i < grad.size(); ++i) grad[i] -= freq[i] / static_cast<double>(batch_size);
    return grad;
}

inline void ce_step(ToyPolicy& policy, const ToyTask& task, std::size_t batch_size, double lr, Rng& rng) {
    if (lr < 0.0) throw Error(ErrorCode::invalid_argument, "learning rate must be >= 0");
    const auto grad = ce_sampled_gradient(policy, task, batch_size, rng);
    policy.descend(grad, lr);
}

enum class Baseline { group_mean, fixed };

struct AdvantageOptions {
    std::size_t batch_size = 64;
    double clip_eps = 0.2;
    double kl_coef = 0.001;
    std::size_t epochs = 4;  // optimization passes per old-policy snapshot
    Baseline baseline = Baseline::group_mean;
    double fixed_baseline = 0.0;
};

/// One clipped-ratio advantage update. Options are sampled from a snapshot of
/// the current policy; each sample's advantage is its reward minus the
/// baseline. Samples whose ratio has left [1-eps, 1+eps] in the direction of
/// their advantage stop contributing. A KL(pi || reference) penalty is added.
inline void advantage_step(ToyPolicy& policy, const ToyTask& task, std::span<const double> option_rewards,
                           const AdvantageOptions& opts, double lr, Rng& rng) {
    detail::check_sizes(policy, task);
    if (option_rewards.size() != task.num_options()) {
        throw Error(ErrorCode::invalid_argument, "one reward per option is required");
    }
    if (!(opts.clip_eps > 0.0 && opts.clip_eps < 1.0)) throw Error(ErrorCode::invalid_argument, "clip_eps must lie in (0,1)");
    if (opts.batch_size == 0) throw Error(ErrorCode::invalid_argument, "batch size must be >= 1");

    const auto old = policy.probabilities();
    std::vector<std::size_t> actions(opts.batch_size);
    for (auto& a : actions) a = sample_index(old, rng);

    double baseline = opts.fixed_baseline;
    if (opts.baseline == Baseline::group_mean) {
        baseline = 0.0;
        for (auto a : actions) baseline += option_rewards[a];
        baseline /= static_cast<double>(actions.size());
    }
    const auto ref = policy.reference_probabilities();
    const double inv_b = 1.0 / static_cast<double>(actions.size());

    for (std::size_t epoch = 0; epoch < opts.epochs; ++epoch) {
        const auto pi = policy.probabilities();
        std::vector<double> grad(pi.size(), 0.0);
        for (auto a : actions) {
            const double adv = option_rewards[a] - baseline;
            if (adv == 0.0) continue;
            const double ratio = pi[a] / old[a];
            if ((adv > 0.0 && ratio > 1.0 + opts.clip_eps) || (adv < 0.0 && ratio < 1.0 - opts.clip_eps)) continue;
            // d(ratio * adv)/dz = adv * ratio * (e_a - pi); we descend on the negated surrogate.
            for (std::size_t j = 0; j < pi.size(); ++j) {
                grad[j] -= inv_b * adv * ratio * ((j == a ? 1.0 : 0.0) - pi[j]);
            }
        }
        if (opts.kl_coef != 0.0) {
            const double kl = kl_divergence(pi, ref);
            for (std::size_t j = 0; j < pi.size(); ++j) {
                if (pi[j] > 0.0) grad[j] += opts.kl_coef * pi[j] * (std::log(pi[j]) - std::log(ref[j]) - kl);
            }
        }
        policy.descend(grad, lr);
    }
}

inline void advantage_step(ToyPolicy& policy, const ToyTask& task, std::size_t reward_option,
                           const AdvantageOptions& opts, double lr, Rng& rng) {
    if (reward_option >= task.num_options()) throw Error(ErrorCode::invalid_argument, "reward option out of range");
    std::vector<double> rewards(task.num_options(), 0.0);
    rewards[reward_option] = 1.0;
    advantage_step(policy, task, rewards, opts, lr, rng);
}

struct PreferencePair {
    std::size_t preferred = 0;
    std::size_t rejected = 1;
};

namespace detail {

inline double preference_margin(const ToyPolicy& policy, const PreferencePair& pair, double beta) {
    // log r(w) - log r(l); softmax normalizers cancel
    const auto z = policy.logits();
    const auto zr = policy.reference_logits();
    return beta * ((z[pair.preferred] - zr[pair.preferred]) - (z[pair.rejected] - zr[pair.rejected]));
}

inline void check_pair(const ToyPolicy& policy, const PreferencePair& pair, double beta) {
    if (pair.preferred == pair.rejected) throw Error(ErrorCode::invalid_argument, "preferred and rejected must differ");
    if (pair.preferred >= policy.size() || pair.rejected >= policy.size()) {
        throw Error(ErrorCode::invalid_argument, "preference index out of range");
    }
    if (!(beta > 0.0)) throw Error(ErrorCode::invalid_argument, "beta must be > 0");
}

} // namespace detail

/// -log sigmoid(beta * (log r(w) - log r(l))), r = pi / pi_ref.
inline double dpo_loss(const ToyPolicy& policy, const PreferencePair& pair, double beta) {
    detail::check_pair(policy, pair, beta);
    const double u = detail::preference_margin(policy, pair, beta);
    return u > 0 ? std::log1p(std::exp(-u)) : -u + std::log1p(std::exp(u));
}

/// Mean logit gradient of the preference loss over `pairs`.
inline std::vector<double> dpo_gradient(const ToyPolicy& policy, std::span<const PreferencePair> pairs, double beta) {
    std::vector<double> grad(policy.size(), 0.0);
    if (pairs.empty()) return grad;
    for (const auto& pair : pairs) {
        detail::check_pair(policy, pair, beta);
        const double u = detail::preference_margin(policy, pair, beta);
        const double weight = beta / (1.0 + std::exp(u));  // beta * (1 - sigmoid(u))
        grad[pair.preferred] -= weight;
        grad[pair.rejected] += weight;
    }
    for (auto& g : grad) g /= static_cast<double>(pairs.size());
    return grad;
}

inline void dpo_step(ToyPolicy& policy, const ToyTask& task, std::size_t preferred, std::size_t rejected, double beta,
                     double lr) {
    detail::check_sizes(policy, task);
    const PreferencePair pair{preferred, rejected};
    policy.descend(dpo_gradient(policy, std::span(&pair, 1), beta), lr);
}

struct TraceRow {
    std::size_t step = 0;
    double kl = 0.0;        // KL(P_data || pi)
    double max_prob = 0.0;  // max_y pi(y)
    double ece_proxy = 0.0; // |pi(y*) - P_data(y*)|, y* = policy argmax
};

struct TrainTrace {
    std::string method;
    std::vector<TraceRow> rows;
};

inline TraceRow measure(const ToyPolicy& policy, const ToyTask& task, std::size_t step) {
    const auto pi = policy.probabilities();
    const auto top = argmax(pi);
    return {step, kl_divergence(task.data_distribution(), pi), pi[top], std::abs(pi[top] - task.data_distribution()[top])};
}

/// Sandbox hyperparameters. These are toy choices, not taken from any model-scale run.
struct SandboxConfig {
    std::vector<double> data_distribution{0.7, 0.3};
    std::size_t steps = 5000;
    double lr = 0.1;
    std::size_t batch_size = 64;
    std::uint64_t seed = 20240917;
    double clip_eps = 0.2;
    double kl_coef = 0.001;
    std::size_t ppo_epochs = 4;
    Baseline baseline = Baseline::group_mean;
    double dpo_beta = 0.05;
    std::optional<std::vector<double>> rewards;  // default: 1 for the most likely data option, else 0
    bool preference_signal = true;               // most likely data option preferred over each other option
    std::size_t trace_every = 50;
};

struct ComparisonResult {
    TrainTrace ce;
    TrainTrace advantage;
    TrainTrace dpo;
    bool ce_kl_below_advantage = false;
    bool ce_kl_below_dpo = false;
};

inline ComparisonResult run_paradigm_comparison(const SandboxConfig& cfg) {
    const ToyTask task(cfg.data_distribution);
    const std::size_t k = task.num_options();
    const std::size_t best = argmax(task.data_distribution());

    std::vector<double> rewards(k, 0.0);
    if (cfg.rewards) {
        if (cfg.rewards->size() != k) throw Error(ErrorCode::config_invalid, "rewards: one value per option is required");
        rewards = *cfg.rewards;
    } else {
        rewards[best] = 1.0;
    }
    std::vector<PreferencePair> pairs;
    if (cfg.preference_signal) {
        for (std::size_t j = 0; j < k; ++j) {
            if (j != best) pairs.push_back({best, j});
        }
    }
    const AdvantageOptions adv_opts{cfg.batch_size, cfg.clip_eps, cfg.kl_coef, cfg.ppo_epochs, cfg.baseline, 0.0};
    if (cfg.trace_every == 0) throw Error(ErrorCode::config_invalid, "trace_every must be >= 1");

    auto train = [&](std::string method, std::uint64_t arm, auto&& step_fn) {
        std::seed_seq seq{cfg.seed, arm};
        Rng rng(seq);
        auto policy = ToyPolicy::uniform(k);
        TrainTrace trace{std::move(method), {measure(policy, task, 0)}};
        for (std::size_t s = 1; s <= cfg.steps; ++s) {
            step_fn(policy, rng);
            if (s % cfg.trace_every == 0 || s == cfg.steps) trace.rows.push_back(measure(policy, task, s));
        }
        return trace;
    };

    ComparisonResult out;
    out.ce = train("ce", 0, [&](ToyPolicy& p, Rng& rng) { ce_step(p, task, cfg.batch_size, cfg.lr, rng); });
    out.advantage = train("advantage", 1, [&](ToyPolicy& p, Rng& rng) {
        advantage_step(p, task, rewards, adv_opts, cfg.lr, rng);
    });
    out.dpo = train("dpo", 2, [&](ToyPolicy& p, Rng&) { p.descend(dpo_gradient(p, pairs, cfg.dpo_beta), cfg.lr); });
    out.ce_kl_below_advantage = out.ce.rows.back().kl < out.advantage.rows.back().kl;
    out.ce_kl_below_dpo = out.ce.rows.back().kl < out.dpo.rows.back().kl;
    return out;
}

inline std::string trace_csv(const ComparisonResult& result) {
    std::string out = "step,method,kl,max_prob,ece_proxy\n";
    for (const auto* trace : {&result.ce, &result.advantage, &result.dpo}) {
        for (const auto& r : trace->rows) {
            out += fmt::format("{},{},{:.6f},{:.6f},{:.6f}\n", r.step, trace->method, r.kl, r.max_prob, r.ece_proxy);
        }
    }
    return out;
}

inline json summary_json(const SandboxConfig& cfg, const ComparisonResult& result) {
    auto final_of = [](const TrainTrace& t) {
        const auto& r = t.rows.back();
        auto r6 = [](double x) { return std::round(x * 1e6) / 1e6; };
        return json{{"step", r.step}, {"kl", r6(r.kl)}, {"max_prob", r6(r.max_prob)}, {"ece_proxy", r6(r.ece_proxy)}};
    };
    return {{"config",
             {{"data_distribution", cfg.data_distribution},
              {"steps", cfg.steps},
              {"lr", cfg.lr},
              {"batch_size", cfg.batch_size},
              {"seed", cfg.seed},
              {"clip_eps", cfg.clip_eps},
              {"kl_coef", cfg.kl_coef},
              {"ppo_epochs", cfg.ppo_epochs},
              {"dpo_beta", cfg.dpo_beta},
              {"note", "sandbox hyperparameters chosen for the toy task"}}},
            {"final", {{"ce", final_of(result.ce)}, {"advantage", final_of(result.advantage)}, {"dpo", final_of(result.dpo)}}},
            {"ce_kl_below_advantage", result.ce_kl_below_advantage},
            {"ce_kl_below_dpo", result.ce_kl_below_dpo}};
}

} // namespace confcal::sandbox
