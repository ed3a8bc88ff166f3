#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <sstream>

#include "dgc/ppo.hpp"
#include "oracles.hpp"

using namespace dgc;
using namespace dgc::ppo;
using Catch::Approx;

namespace {

env::BuckEnv small_env(env::Variant variant) {
    env::EnvConfig cfg = env::EnvConfig::defaults(variant);
    cfg.episode_steps = 50;
    return env::BuckEnv(cfg);
}

PpoConfig small_config(env::Variant variant) {
    PpoConfig cfg = PpoConfig::defaults(variant);
    cfg.rollout_steps = 128;
    cfg.minibatch_size = 32;
    cfg.epochs = 2;
    cfg.total_steps = 256;
    cfg.hidden = {16, 16};
    return cfg;
}

}  // namespace

TEST_CASE("GAE matches the literal discounted sum", "[ppo][gae]") {
    Rng rng(77);
    std::normal_distribution<double> n(0.0, 1.0);
    std::bernoulli_distribution end(0.2);
    for (int len = 1; len <= 32; ++len) {
        for (int rep = 0; rep < 5; ++rep) {
            std::vector<double> r(len), v(len);
            std::vector<int> done(len);
            std::vector<std::uint8_t> done8(len);
            for (int t = 0; t < len; ++t) {
                r[t] = n(rng);
                v[t] = n(rng);
                done[t] = end(rng);
                done8[t] = static_cast<std::uint8_t>(done[t]);
            }
            const double boot = n(rng);
            const double gamma = 0.9 + 0.099 * (rep / 4.0);
            const double lambda = rep == 0 ? 1.0 : 0.95;
            const auto expect = oracle::gae_brute_force(r, v, done, gamma, lambda, boot);
            const auto got = compute_gae(Eigen::Map<nn::Vector>(r.data(), len), Eigen::Map<nn::Vector>(v.data(), len),
                                         done8, gamma, lambda, boot);
            for (int t = 0; t < len; ++t) {
                INFO("len " << len << " t " << t);
                REQUIRE(got.advantages(t) == Approx(expect[t]).epsilon(1e-12).margin(1e-12));
                REQUIRE(got.returns(t) == Approx(expect[t] + v[t]).epsilon(1e-12).margin(1e-12));
            }
        }
    }
}

TEST_CASE("GAE hand values", "[ppo][gae]") {
    nn::Vector r(3), v(3);
    r << 1.0, 0.0, 2.0;
    v << 0.5, 0.25, 1.0;
    const auto g = compute_gae(r, v, {0, 0, 0}, 0.5, 1.0, 4.0);
    // deltas: 1 + 0.125 - 0.5 = 0.625, 0 + 0.5 - 0.25 = 0.25, 2 + 2 - 1 = 3
    CHECK(g.advantages(2) == Approx(3.0));
    CHECK(g.advantages(1) == Approx(0.25 + 0.5 * 3.0));
    CHECK(g.advantages(0) == Approx(0.625 + 0.5 * 1.75));
    CHECK_THROWS_AS(compute_gae(r, v, {0, 0}, 0.5, 1.0, 0.0), std::invalid_argument);
}

TEST_CASE("truncation bootstrap folds the terminal value into the reward", "[ppo][gae]") {
    RolloutBuffer buf(2, 1);
    buf.rewards << 1.0, 1.0;
    buf.values << 0.0, 0.0;
    buf.dones = {1, 0};
    buf.terminal_values << 10.0, 0.0;
    buf.bootstrap_value = 0.0;
    compute_gae(buf, 0.9, 1.0, true);
    CHECK(buf.advantages(0) == Approx(1.0 + 9.0));
    compute_gae(buf, 0.9, 1.0, false);
    CHECK(buf.advantages(0) == Approx(1.0));
}

TEST_CASE("clipped surrogate arithmetic", "[ppo]") {
    CHECK(clipped_surrogate(1.5, 1.0, 0.2) == Approx(1.2));
    CHECK(clipped_surrogate(0.5, 1.0, 0.2) == Approx(0.5));
    CHECK(clipped_surrogate(0.5, -1.0, 0.2) == Approx(-0.8));
    CHECK(clipped_surrogate(1.5, -1.0, 0.2) == Approx(-1.5));
    CHECK(clipped_surrogate(1.1, 2.0, 0.2) == Approx(2.2));
}

TEST_CASE("config validation", "[ppo]") {
    CHECK_NOTHROW(PpoConfig{}.validate());
    PpoConfig c;
    c.rollout_steps = 100;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = {};
    c.gamma = 1.5;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = {};
    c.hidden.clear();
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    const PpoConfig pwm = PpoConfig::defaults(env::Variant::Pwm);
    CHECK(pwm.gamma == 0.99);
    CHECK(PpoConfig::defaults(env::Variant::Dgc).gamma == 0.999);
}

TEST_CASE("rollouts are exact length and reset on episode end", "[ppo]") {
    RolloutCollector collector(small_env(env::Variant::Dgc), 3);
    Rng init(1), policy(2);
    const auto model = nn::ActorCritic::create(nn::ActionKind::Categorical, env::kObsDim, {8}, init, 0.0);
    const RolloutBuffer buf = collector.collect(model, 120, policy);
    CHECK(buf.size() == 120);
    int dones = 0;
    for (int t = 0; t < 120; ++t) {
        dones += buf.dones[t];
        CHECK((buf.actions(t) == 0.0 || buf.actions(t) == 1.0));
        CHECK(buf.terminal_values(t) == (buf.dones[t] ? buf.terminal_values(t) : 0.0));
    }
    CHECK(dones == 2);
    CHECK(collector.episode_returns().size() == 2);
}

TEST_CASE("zero learning rate leaves the parameters untouched", "[ppo]") {
    RolloutCollector collector(small_env(env::Variant::Pwm), 3);
    Rng init(1), policy(2), shuffle(3);
    auto model = nn::ActorCritic::create(nn::ActionKind::Gaussian, env::kObsDim, {8}, init, -0.7, 0.5);
    RolloutBuffer buf = collector.collect(model, 64, policy);
    compute_gae(buf, 0.99, 0.95, true);
    PpoConfig cfg = small_config(env::Variant::Pwm);
    cfg.learning_rate = 0.0;
    nn::AdamState adam(model.parameter_count(), 0.0);
    const nn::Vector before = model.flat_parameters();
    const TrainRecord rec = ppo_update(model, adam, buf, cfg, shuffle);
    CHECK(model.flat_parameters() == before);
    // Unchanged policy: every ratio is exactly one.
    CHECK(rec.clip_fraction == 0.0);
    CHECK(rec.approx_kl == Approx(0.0).margin(1e-15));
}

TEST_CASE("an update raises the probability of advantaged actions", "[ppo]") {
    Rng init(5), shuffle(6);
    auto model = nn::ActorCritic::create(nn::ActionKind::Categorical, 2, {8}, init, 0.0);
    RolloutBuffer buf(64, 2);
    for (int t = 0; t < 64; ++t) {
        buf.observations.col(t) << 1.0, -1.0;
        buf.actions(t) = t % 2;
        buf.rewards(t) = 0.0;
        buf.values(t) = 0.0;
        buf.dones[t] = 0;
    }
    const auto ev0 = model.evaluate(buf.observations, buf.actions);
    buf.log_probs = ev0.log_prob;
    buf.advantages = nn::Vector::NullaryExpr(64, [&](Eigen::Index t) { return t % 2 ? 1.0 : -1.0; });
    buf.returns = nn::Vector::Zero(64);

    PpoConfig cfg;
    cfg.minibatch_size = 16;
    cfg.rollout_steps = 64;
    cfg.learning_rate = 1e-2;
    cfg.ent_coef = 0.0;
    nn::AdamState adam(model.parameter_count(), cfg.learning_rate);
    const TrainRecord rec = ppo_update(model, adam, buf, cfg, shuffle);
    nn::Vector one(1);
    one << 1.0;
    const auto ev1 = model.evaluate(buf.observations.leftCols(1), one);
    CHECK(std::exp(ev1.log_prob(0)) > std::exp(ev0.log_prob(1)) + 0.05);
    CHECK(rec.clip_fraction >= 0.0);
    CHECK(rec.clip_fraction <= 1.0);
    CHECK(rec.entropy >= 0.0);
    CHECK(rec.entropy <= std::log(2.0) + 1e-12);
}

TEST_CASE("training is deterministic in the seed", "[ppo]") {
    const PpoConfig cfg = small_config(env::Variant::Dgc);
    auto make = [] { return small_env(env::Variant::Dgc); };
    const TrainResult a = train(make, cfg, 42);
    const TrainResult b = train(make, cfg, 42);
    const TrainResult c = train(make, cfg, 43);
    CHECK(a.model.flat_parameters() == b.model.flat_parameters());
    CHECK(a.model.flat_parameters() != c.model.flat_parameters());
    REQUIRE(a.log.size() == 2);
    CHECK(a.log[1].steps == 256);
    for (const auto& r : a.log) {
        CHECK(r.clip_fraction >= 0.0);
        CHECK(r.clip_fraction <= 1.0);
        CHECK(r.entropy >= 0.0);
        CHECK(r.entropy <= std::log(2.0) + 1e-12);
    }
    std::ostringstream la, lb;
    write_train_log_csv(la, a.log);
    write_train_log_csv(lb, b.log);
    CHECK(la.str() == lb.str());
    CHECK(la.str().rfind("update,steps,", 0) == 0);
}

TEST_CASE("steps round up to whole rollouts and the callback sees each update", "[ppo]") {
    PpoConfig cfg = small_config(env::Variant::Pwm);
    cfg.total_steps = 129;
    int calls = 0;
    const TrainResult r = train([] { return small_env(env::Variant::Pwm); }, cfg, 1,
                                [&](const TrainRecord& rec, const nn::ActorCritic&) { CHECK(rec.update == ++calls); });
    CHECK(calls == 2);
    CHECK(r.log.back().steps == 256);
    CHECK(r.model.kind() == nn::ActionKind::Gaussian);
}
