#include "dgc/ppo.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>
#include <string>

namespace dgc::ppo {

PpoConfig PpoConfig::defaults(env::Variant variant) {
    PpoConfig cfg;
    if (variant == env::Variant::Pwm) {
        cfg.gamma = 0.99;
        cfg.ent_coef = 0.0;
    }
    return cfg;
}

void PpoConfig::validate() const {
    auto fail = [](const std::string& what) { throw std::invalid_argument("PpoConfig: " + what); };
    if (!(gamma > 0.0 && gamma <= 1.0)) fail("gamma must lie in (0, 1]");
    if (!(clip_range > 0.0 && clip_range < 1.0)) fail("clip_range must lie in (0, 1)");
    if (!(learning_rate >= 0.0)) fail("learning_rate must be non-negative");
    if (epochs <= 0) fail("epochs must be positive");
    if (minibatch_size <= 0 || rollout_steps <= 0) fail("minibatch_size and rollout_steps must be positive");
    if (rollout_steps % minibatch_size != 0) fail("rollout_steps must be divisible by minibatch_size");
    if (total_steps <= 0) fail("total_steps must be positive");
    if (!(gae_lambda >= 0.0 && gae_lambda <= 1.0)) fail("gae_lambda must lie in [0, 1]");
    if (!(vf_coef >= 0.0 && ent_coef >= 0.0)) fail("loss coefficients must be non-negative");
    if (!(max_grad_norm > 0.0)) fail("max_grad_norm must be positive");
    if (hidden.empty()) fail("hidden must list at least one layer");
}

RolloutBuffer::RolloutBuffer(int capacity, int obs_dim)
    : observations(obs_dim, capacity),
      actions(capacity),
      rewards(capacity),
      values(capacity),
      log_probs(capacity),
      dones(static_cast<std::size_t>(capacity), 0),
      terminal_values(nn::Vector::Zero(capacity)) {}

GaeResult compute_gae(const nn::Vector& rewards, const nn::Vector& values, const std::vector<std::uint8_t>& dones,
                      double gamma, double lambda, double bootstrap_value) {
    const Eigen::Index n = rewards.size();
    if (values.size() != n || static_cast<Eigen::Index>(dones.size()) != n)
        throw std::invalid_argument("compute_gae: length mismatch");
    GaeResult out{nn::Vector(n), nn::Vector(n)};
    double next_adv = 0.0;
    for (Eigen::Index t = n - 1; t >= 0; --t) {
        const double live = dones[t] ? 0.0 : 1.0;
        const double next_value = t + 1 < n ? values(t + 1) : bootstrap_value;
        const double delta = rewards(t) + gamma * next_value * live - values(t);
        next_adv = delta + gamma * lambda * live * next_adv;
        out.advantages(t) = next_adv;
    }
    out.returns = out.advantages + values;
    return out;
}

void compute_gae(RolloutBuffer& buffer, double gamma, double lambda, bool bootstrap_truncation) {
    nn::Vector rewards = buffer.rewards;
    if (bootstrap_truncation) rewards += gamma * buffer.terminal_values;
    auto result = compute_gae(rewards, buffer.values, buffer.dones, gamma, lambda, buffer.bootstrap_value);
    buffer.advantages = std::move(result.advantages);
    buffer.returns = std::move(result.returns);
}

RolloutCollector::RolloutCollector(env::BuckEnv env, std::uint64_t seed) : env_(std::move(env)), seed_(seed) {
    start_episode();
}

void RolloutCollector::start_episode() {
    obs_ = env_.reset(derive_seed(seed_, Stream::Episode, episode_++));
    running_return_ = 0.0;
}

RolloutBuffer RolloutCollector::collect(const nn::ActorCritic& model, int n, Rng& policy_rng) {
    RolloutBuffer buf(n, static_cast<int>(env::kObsDim));
    for (int t = 0; t < n; ++t) {
        const Eigen::Map<const nn::Vector> obs(obs_.data(), env::kObsDim);
        const auto step = model.act(obs, policy_rng, false);
        buf.observations.col(t) = obs;
        buf.actions(t) = step.raw_action;
        buf.values(t) = step.value;
        buf.log_probs(t) = step.log_prob;

        const env::Transition tr = env_.step(step.action);
        buf.rewards(t) = tr.reward;
        buf.dones[t] = tr.done ? 1 : 0;
        running_return_ += tr.reward;
        if (tr.done) {
            const Eigen::Map<const nn::Vector> last(tr.observation.data(), env::kObsDim);
            buf.terminal_values(t) = model.value(last);
            episode_returns_.push_back(running_return_);
            start_episode();
        } else {
            obs_ = tr.observation;
        }
    }
    buf.bootstrap_value = model.value(Eigen::Map<const nn::Vector>(obs_.data(), env::kObsDim));
    return buf;
}

double clipped_surrogate(double ratio, double advantage, double clip_range) {
    const double clipped = std::clamp(ratio, 1.0 - clip_range, 1.0 + clip_range);
    return std::min(ratio * advantage, clipped * advantage);
}

namespace {

double explained_variance(const nn::Vector& predicted, const nn::Vector& target) {
    const auto variance = [](const nn::Vector& x) {
        const double mean = x.mean();
        return (x.array() - mean).square().mean();
    };
    const double var_y = variance(target);
    if (var_y == 0.0) return std::numeric_limits<double>::quiet_NaN();
    return 1.0 - variance(target - predicted) / var_y;
}

}  // namespace

TrainRecord ppo_update(nn::ActorCritic& model, nn::AdamState& adam, const RolloutBuffer& buffer,
                       const PpoConfig& cfg, Rng& shuffle_rng) {
    const int n = buffer.size();
    if (buffer.advantages.size() != n || buffer.returns.size() != n)
        throw std::logic_error("ppo_update: advantages not computed");
    const int batch = std::min(cfg.minibatch_size, n);

    TrainRecord rec;
    rec.explained_variance = explained_variance(buffer.values, buffer.returns);

    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    nn::Vector params = model.flat_parameters();
    const Eigen::Index obs_dim = buffer.observations.rows();

    int minibatches = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        for (int start = 0; start + batch <= n; start += batch) {
            nn::Matrix obs(obs_dim, batch);
            nn::Vector actions(batch), old_logp(batch), adv(batch), ret(batch);
            for (int b = 0; b < batch; ++b) {
                const int idx = order[static_cast<std::size_t>(start + b)];
                obs.col(b) = buffer.observations.col(idx);
                actions(b) = buffer.actions(idx);
                old_logp(b) = buffer.log_probs(idx);
                adv(b) = buffer.advantages(idx);
                ret(b) = buffer.returns(idx);
            }
            if (cfg.normalize_advantages && batch > 1) {
                const double mean = adv.mean();
                const double var = (adv.array() - mean).square().sum() / (batch - 1);
                adv = (adv.array() - mean) / (std::sqrt(var) + 1e-8);
            }

            const auto ev = model.evaluate(obs, actions);
            nn::Vector d_logp(batch), d_ent(batch), d_val(batch);
            double policy_loss = 0.0;
            double value_loss = 0.0;
            double clipped = 0.0;
            double kl = 0.0;
            for (int b = 0; b < batch; ++b) {
                const double log_ratio = ev.log_prob(b) - old_logp(b);
                const double ratio = std::exp(log_ratio);
                const double unclipped = ratio * adv(b);
                const double surrogate = clipped_surrogate(ratio, adv(b), cfg.clip_range);
                policy_loss -= surrogate / batch;
                d_logp(b) = unclipped <= surrogate ? -adv(b) * ratio / batch : 0.0;
                if (std::abs(ratio - 1.0) > cfg.clip_range) clipped += 1.0;
                kl += (ratio - 1.0) - log_ratio;
                const double err = ev.value(b) - ret(b);
                value_loss += err * err / batch;
                d_val(b) = cfg.vf_coef * 2.0 * err / batch;
                d_ent(b) = -cfg.ent_coef / batch;
            }
            const double entropy = ev.entropy.mean();
            const double loss = policy_loss + cfg.vf_coef * value_loss - cfg.ent_coef * entropy;
            rec.policy_loss += policy_loss;
            rec.value_loss += value_loss;
            rec.entropy += entropy;
            rec.clip_fraction += clipped / batch;
            rec.approx_kl += kl / batch;
            ++minibatches;
            if (!std::isfinite(loss)) {
                rec.policy_loss = policy_loss;
                rec.value_loss = value_loss;
                rec.entropy = entropy;
                throw TrainingAborted("ppo_update: non-finite loss (policy=" + std::to_string(policy_loss) +
                                          ", value=" + std::to_string(value_loss) + ")",
                                      rec);
            }

            nn::Vector grad = model.gradient(ev, actions, d_logp, d_ent, d_val);
            const double norm = grad.norm();
            if (!std::isfinite(norm)) throw TrainingAborted("ppo_update: non-finite gradient", rec);
            const double coef = cfg.max_grad_norm / (norm + 1e-6);
            if (coef < 1.0) grad *= coef;
            adam.learning_rate = cfg.learning_rate;
            nn::adam_update(params, grad, adam);
            model.set_flat_parameters(params);
        }
    }
    if (minibatches > 0) {
        rec.policy_loss /= minibatches;
        rec.value_loss /= minibatches;
        rec.entropy /= minibatches;
        rec.clip_fraction /= minibatches;
        rec.approx_kl /= minibatches;
    }
    return rec;
}

TrainResult train(const EnvFactory& make_env, const PpoConfig& cfg, std::uint64_t seed,
                  const UpdateCallback& on_update) {
    cfg.validate();
    env::BuckEnv environment = make_env();
    const auto kind = environment.config().variant == env::Variant::Dgc ? nn::ActionKind::Categorical
                                                                        : nn::ActionKind::Gaussian;
    Rng init_rng = make_rng(seed, Stream::Init);
    Rng policy_rng = make_rng(seed, Stream::Policy);
    Rng shuffle_rng = make_rng(seed, Stream::Shuffle);

    TrainResult result;
    result.model = nn::ActorCritic::create(kind, static_cast<int>(env::kObsDim), cfg.hidden, init_rng,
                                           cfg.log_std_init, cfg.mean_init);
    nn::AdamState adam(result.model.parameter_count(), cfg.learning_rate);
    RolloutCollector collector(std::move(environment), derive_seed(seed, Stream::Environment));

    const std::int64_t updates = (cfg.total_steps + cfg.rollout_steps - 1) / cfg.rollout_steps;
    std::int64_t steps = 0;
    for (std::int64_t u = 0; u < updates; ++u) {
        RolloutBuffer buffer = collector.collect(result.model, cfg.rollout_steps, policy_rng);
        steps += cfg.rollout_steps;
        compute_gae(buffer, cfg.gamma, cfg.gae_lambda, cfg.bootstrap_truncation);
        TrainRecord rec = ppo_update(result.model, adam, buffer, cfg, shuffle_rng);
        rec.update = static_cast<int>(u + 1);
        rec.steps = steps;
        const auto& returns = collector.episode_returns();
        if (returns.empty()) {
            rec.mean_episode_reward = std::numeric_limits<double>::quiet_NaN();
        } else {
            const std::size_t k = std::min<std::size_t>(10, returns.size());
            rec.mean_episode_reward = std::accumulate(returns.end() - static_cast<std::ptrdiff_t>(k), returns.end(), 0.0) / k;
        }
        result.log.push_back(rec);
        if (on_update) on_update(rec, result.model);
    }
    return result;
}

void write_train_log_csv(std::ostream& out, const std::vector<TrainRecord>& log) {
    auto num = [](double x) {
        char buf[64];
        const auto res = std::to_chars(buf, buf + sizeof buf, x);
        return std::string(buf, res.ptr);
    };
    out << "update,steps,mean_episode_reward,policy_loss,value_loss,entropy,clip_fraction,approx_kl,"
           "explained_variance\n";
    for (const auto& r : log) {
        out << r.update << ',' << r.steps << ',' << num(r.mean_episode_reward) << ',' << num(r.policy_loss) << ','
            << num(r.value_loss) << ',' << num(r.entropy) << ',' << num(r.clip_fraction) << ','
            << num(r.approx_kl) << ',' << num(r.explained_variance) << '\n';
    }
}

}  // namespace dgc::ppo
