#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <stdexcept>
#include <vector>

#include "dgc/env.hpp"
#include "dgc/nn.hpp"
#include "dgc/random.hpp"

namespace dgc::ppo {

struct PpoConfig {
    double gamma = 0.999;
    double clip_range = 0.2;
    double learning_rate = 3e-4;
    int epochs = 10;
    int minibatch_size = 64;
    int rollout_steps = 2048;
    std::int64_t total_steps = 1'000'000;
    double gae_lambda = 0.99;
    double vf_coef = 0.5;
    double ent_coef = 0.05;
    double max_grad_norm = 0.5;
    bool normalize_advantages = true;
    /// Episodes end on a time limit only; when set, the value of the final
    /// observation is folded into the last reward instead of treating it as 0.
    bool bootstrap_truncation = true;
    std::vector<int> hidden{64, 64};
    double log_std_init = -0.69314718055994531;  // ln 0.5, Gaussian head only
    double mean_init = 0.5;                      // initial duty mean, Gaussian head only

    /// DGC: gamma 0.999, ent_coef 0.05. PWM baseline: gamma 0.99, ent_coef 0.
    static PpoConfig defaults(env::Variant variant);
    /// Throws std::invalid_argument.
    void validate() const;
};

struct RolloutBuffer {
    nn::Matrix observations;  // obs_dim x n
    nn::Vector actions;       // raw actions (index for categorical)
    nn::Vector rewards;       // as returned by the environment
    nn::Vector values;
    nn::Vector log_probs;
    std::vector<std::uint8_t> dones;
    nn::Vector terminal_values;  // V(final observation) where done, else 0
    nn::Vector advantages;
    nn::Vector returns;
    double bootstrap_value = 0.0;  // V(observation after the last transition)

    explicit RolloutBuffer(int capacity = 0, int obs_dim = static_cast<int>(env::kObsDim));
    int size() const { return static_cast<int>(rewards.size()); }
};

struct GaeResult {
    nn::Vector advantages;
    nn::Vector returns;
};

/// delta_t = r_t + gamma V_{t+1} (1 - done_t) - V_t
/// A_t     = delta_t + gamma lambda (1 - done_t) A_{t+1}
/// with V_n = bootstrap_value; returns = A + V.
GaeResult compute_gae(const nn::Vector& rewards, const nn::Vector& values, const std::vector<std::uint8_t>& dones,
                      double gamma, double lambda, double bootstrap_value);

/// Fills buffer.advantages / buffer.returns. With `bootstrap_truncation` the
/// reward at a done step is r + gamma * terminal_value.
void compute_gae(RolloutBuffer& buffer, double gamma, double lambda, bool bootstrap_truncation);

/// Runs one environment across rollouts, resetting it with a fresh derived
/// seed whenever an episode ends.
class RolloutCollector {
public:
    RolloutCollector(env::BuckEnv env, std::uint64_t seed);

    /// Exactly `n` stochastic transitions from `model`.
    RolloutBuffer collect(const nn::ActorCritic& model, int n, Rng& policy_rng);

    const env::BuckEnv& environment() const { return env_; }
    /// Undiscounted return of every finished episode, in order.
    const std::vector<double>& episode_returns() const { return episode_returns_; }

private:
    void start_episode();

    env::BuckEnv env_;
    std::uint64_t seed_;
    std::uint64_t episode_ = 0;
    env::Observation obs_{};
    double running_return_ = 0.0;
    std::vector<double> episode_returns_;
};

struct TrainRecord {
    int update = 0;
    std::int64_t steps = 0;
    double mean_episode_reward = 0.0;  // mean over the last 10 finished episodes; NaN before any
    double policy_loss = 0.0;
    double value_loss = 0.0;
    double entropy = 0.0;
    double clip_fraction = 0.0;
    double approx_kl = 0.0;
    double explained_variance = 0.0;
};

/// Thrown when a loss turns non-finite; carries the partial record.
class TrainingAborted : public std::runtime_error {
public:
    TrainingAborted(const std::string& what, TrainRecord record)
        : std::runtime_error(what), record_(record) {}
    const TrainRecord& record() const { return record_; }

private:
    TrainRecord record_;
};

/// Clipped-surrogate update: `epochs` passes of shuffled minibatches with
/// per-minibatch advantage normalization, global-norm gradient clipping and
/// Adam. Expects advantages to be computed.
TrainRecord ppo_update(nn::ActorCritic& model, nn::AdamState& adam, const RolloutBuffer& buffer,
                       const PpoConfig& cfg, Rng& shuffle_rng);

/// Clipped surrogate for one sample, min(ratio A, clip(ratio, 1-c, 1+c) A).
double clipped_surrogate(double ratio, double advantage, double clip_range);

struct TrainResult {
    nn::ActorCritic model;
    std::vector<TrainRecord> log;
};

using EnvFactory = std::function<env::BuckEnv()>;
using UpdateCallback = std::function<void(const TrainRecord&, const nn::ActorCritic&)>;

/// Alternates collect/update until cfg.total_steps transitions have been
/// collected (rounded up to whole rollouts). Deterministic in (cfg, seed).
TrainResult train(const EnvFactory& make_env, const PpoConfig& cfg, std::uint64_t seed,
                  const UpdateCallback& on_update = {});

void write_train_log_csv(std::ostream& out, const std::vector<TrainRecord>& log);

}  // namespace dgc::ppo
