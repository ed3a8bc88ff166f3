#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numeric>

#include "dgc/converter.hpp"
#include "dgc/env.hpp"
#include "oracles.hpp"

using namespace dgc;
using namespace dgc::env;
using Catch::Approx;

namespace {

BuckEnv nominal_env(Variant variant) {
    EnvConfig cfg = EnvConfig::defaults(variant);
    return BuckEnv(cfg);
}

}  // namespace

TEST_CASE("reward values by hand", "[env][reward]") {
    const RewardParams p;
    // alpha / eps - beta = 0.2 / 0.1 - 0.004
    CHECK(regulation_reward(0.0, p) == Approx(1.996).epsilon(1e-12));
    // 0.2 / 1.1 - 0.1 - 0.004
    CHECK(regulation_reward(1.0, p) == Approx(0.2 / 1.1 - 0.104).epsilon(1e-12));
    CHECK(regulation_reward(-1.0, p) == regulation_reward(1.0, p));
    CHECK(reward(0.0, 1.0, 0.0, p) == Approx(1.996 - 4.0).epsilon(1e-12));
    CHECK(reward(0.0, 1.0, 1.0, p) == Approx(1.996).epsilon(1e-12));
    CHECK(reward(0.0, 0.0, 0.0, p, 10.0) == Approx(19.96).epsilon(1e-12));
    CHECK(reward(0.5, 0.7, 0.5, p, 10.0) == Approx(10.0 * (0.2 / 0.6 - 0.05 - 0.004) - 10.0 * 4.0 * 0.2).epsilon(1e-12));
}

TEST_CASE("regulation reward peaks at zero error", "[env][reward][property]") {
    const RewardParams p;
    for (double e = 0.0; e < 20.0; e += 0.01)
        CHECK(regulation_reward(e + 0.01, p) < regulation_reward(e, p));
}

TEST_CASE("variant defaults", "[env]") {
    const EnvConfig dgc_cfg = EnvConfig::defaults(Variant::Dgc);
    CHECK(dgc_cfg.control_period == 1e-6);
    CHECK(dgc_cfg.episode_steps == 2000);
    CHECK(dgc_cfg.reward_scale == 1.0);
    const EnvConfig pwm = EnvConfig::defaults(Variant::Pwm);
    CHECK(pwm.control_period == 10e-6);
    CHECK(pwm.episode_steps == 200);
    CHECK(pwm.reward_scale == 10.0);
    CHECK(parse_variant("pwm") == Variant::Pwm);
    CHECK_THROWS_AS(parse_variant("pid"), std::invalid_argument);
}

TEST_CASE("invalid configurations are rejected", "[env]") {
    EnvConfig cfg;
    cfg.control_period = 1.5e-6;
    CHECK_THROWS_AS(BuckEnv(cfg), std::invalid_argument);
    cfg = EnvConfig::defaults(Variant::Pwm);
    cfg.control_period = 1e-6;
    CHECK_THROWS_AS(BuckEnv(cfg), std::invalid_argument);
    cfg = EnvConfig{};
    cfg.v_ref = 25.0;
    CHECK_THROWS_AS(BuckEnv(cfg), std::invalid_argument);
    cfg = EnvConfig{};
    cfg.reward.epsilon = 0.0;
    CHECK_THROWS_AS(BuckEnv(cfg), std::invalid_argument);
}

TEST_CASE("action takes effect one step later", "[env][delay]") {
    BuckEnv env = nominal_env(Variant::Dgc);
    env.reset_to({0.0, 0.0}, 15.0, 1);
    const Transition first = env.step(1.0);
    CHECK(first.info.applied == 0.0);
    CHECK(first.info.i_L == 0.0);
    CHECK(env.pending_action() == 1.0);
    const Transition second = env.step(0.0);
    CHECK(second.info.applied == 1.0);
    CHECK(second.info.i_L > 0.0);
    // Switching penalty follows the applied gate, not the requested one.
    CHECK(first.reward == Approx(regulation_reward(first.info.v_err, RewardParams{})).epsilon(1e-12));
    CHECK(second.reward == Approx(regulation_reward(second.info.v_err, RewardParams{}) - 4.0).epsilon(1e-12));
}

TEST_CASE("dgc step matches the simulator driven with the delayed gate", "[env][delay]") {
    BuckEnv env = nominal_env(Variant::Dgc);
    env.reset_to({2.0, 12.0}, 7.0, 3);
    sim::CircuitParams p = sim::nominal_params();
    p.R = 7.0;
    sim::CircuitState s{2.0, 12.0};
    const int actions[] = {1, 1, 0, 1, 0, 0, 1, 1, 1, 0};
    int previous = 0;
    for (int a : actions) {
        const Transition tr = env.step(a);
        s = sim::step(s, previous == 1, 1e-6, p).state;
        CHECK(env.state() == s);
        CHECK(tr.info.v_err == sim::output_voltage(s, p) - 15.0);
        previous = a;
    }
}

TEST_CASE("observation window holds ten scaled triples, oldest first", "[env][window]") {
    BuckEnv env = nominal_env(Variant::Dgc);
    const Observation start = env.reset_to({1.5, 10.0}, 15.0, 1);
    const double v_err0 = sim::output_voltage({1.5, 10.0}, env.circuit()) - 15.0;
    for (std::size_t k = 0; k < kHistory; ++k) {
        CHECK(start[3 * k] == Approx(v_err0 * env.config().obs_voltage_scale));
        CHECK(start[3 * k + 1] == Approx(1.5 * env.config().obs_current_scale));
        CHECK(start[3 * k + 2] == 0.0);
    }
    std::vector<double> gates;
    Observation obs = start;
    for (int k = 0; k < 4; ++k) {
        const int a = k % 2;
        const Transition tr = env.step(a);
        gates.push_back(a);
        obs = tr.observation;
        // Newest triple: the state at the end of this interval and the gate just committed.
        CHECK(obs[kObsDim - 3] == Approx(tr.info.v_err * env.config().obs_voltage_scale));
        CHECK(obs[kObsDim - 2] == Approx(tr.info.i_L * env.config().obs_current_scale));
        CHECK(obs[kObsDim - 1] == a);
    }
    for (int k = 0; k < 4; ++k) CHECK(obs[3 * (kHistory - 4 + k) + 2] == gates[k]);
    CHECK(obs[3 * (kHistory - 5) + 2] == 0.0);
}

TEST_CASE("ObsWindow ring order", "[env][window]") {
    ObsWindow w;
    w.fill({0.0, 0.0, 0.0});
    for (int k = 1; k <= 12; ++k) w.push({double(k), 0.0, 0.0});
    for (std::size_t i = 0; i < kHistory; ++i) CHECK(w[i].v_err == double(i + 3));
    CHECK(w.newest().v_err == 12.0);
}

TEST_CASE("episodes end after the configured number of steps", "[env]") {
    EnvConfig cfg;
    cfg.episode_steps = 5;
    BuckEnv env(cfg);
    CHECK_THROWS_AS(env.step(0.0), std::logic_error);
    env.reset(4);
    for (int k = 0; k < 4; ++k) CHECK_FALSE(env.step(0.0).done);
    CHECK(env.step(0.0).done);
    CHECK_THROWS_AS(env.step(0.0), std::logic_error);
}

TEST_CASE("reset draws from the configured distributions", "[env][statistics]") {
    EnvConfig cfg;
    BuckEnv env(cfg);
    const int n = 10000;
    std::vector<double> i0, v0, r;
    for (int k = 0; k < n; ++k) {
        env.reset(static_cast<std::uint64_t>(k));
        i0.push_back(env.state().i_L);
        v0.push_back(env.state().v_C);
        r.push_back(env.circuit().R);
    }
    // 1.63 / sqrt(n) is the 1% critical value of the one-sample KS statistic.
    const double critical = 1.63 / std::sqrt(double(n));
    CHECK(oracle::ks_statistic(i0, [](double x) { return std::clamp(x / 10.0, 0.0, 1.0); }) < critical);
    CHECK(oracle::ks_statistic(v0, [](double x) { return std::clamp(x / 20.0, 0.0, 1.0); }) < critical);
    CHECK(oracle::ks_statistic(r, [](double x) {
              return std::clamp(std::log(x / 1.0) / std::log(50.0), 0.0, 1.0);
          }) < critical);
}

TEST_CASE("reset is reproducible per seed", "[env]") {
    BuckEnv a = nominal_env(Variant::Dgc), b = nominal_env(Variant::Dgc);
    CHECK(a.reset(9) == b.reset(9));
    CHECK(a.state() == b.state());
    CHECK(a.circuit().R == b.circuit().R);
    b.reset(10);
    CHECK_FALSE(a.state() == b.state());
}

TEST_CASE("sensor noise has the configured spread and leaves the plant alone", "[env][noise]") {
    EnvConfig cfg;
    cfg.sigma_v = 0.01;
    cfg.sigma_i = 0.1;
    cfg.episode_steps = 20000;
    BuckEnv noisy(cfg);
    cfg.sigma_v = cfg.sigma_i = 0.0;
    BuckEnv clean(cfg);
    noisy.reset_to({1.0, 15.0}, 15.0, 2);
    clean.reset_to({1.0, 15.0}, 15.0, 2);
    std::vector<double> dv, di;
    for (int k = 0; k < 20000; ++k) {
        const int a = k % 4 == 0;
        const Transition n = noisy.step(a);
        const Transition c = clean.step(a);
        REQUIRE(n.info.v_out == c.info.v_out);
        dv.push_back(n.observation[kObsDim - 3] / cfg.obs_voltage_scale - c.info.v_err);
        di.push_back(n.observation[kObsDim - 2] / cfg.obs_current_scale - c.info.i_L);
    }
    auto stddev = [](const std::vector<double>& x) {
        const double m = std::accumulate(x.begin(), x.end(), 0.0) / x.size();
        double s = 0.0;
        for (double v : x) s += (v - m) * (v - m);
        return std::sqrt(s / (x.size() - 1));
    };
    CHECK(stddev(dv) == Approx(0.01).epsilon(0.03));
    CHECK(stddev(di) == Approx(0.1).epsilon(0.03));
}

TEST_CASE("zero noise draws nothing", "[env][noise]") {
    Rng a(1), b(1);
    const auto [v, i] = apply_sensor_noise(0.5, 2.0, 0.0, 0.0, a);
    CHECK(v == 0.5);
    CHECK(i == 2.0);
    CHECK(a() == b());
}

TEST_CASE("pwm with whole-slot duties equals the matching gate pattern", "[env][pwm]") {
    BuckEnv pwm = nominal_env(Variant::Pwm);
    BuckEnv dgc_env = nominal_env(Variant::Dgc);
    pwm.reset_to({1.0, 14.0}, 10.0, 1);
    dgc_env.reset_to({1.0, 14.0}, 10.0, 1);
    const double duties[] = {0.3, 1.0, 0.0, 0.7, 0.5};
    // The first PWM period runs at duty 0. DGC applies each gate one
    // microsecond late, so nine explicit zeros plus the initial one cover it.
    for (int j = 0; j < 9; ++j) dgc_env.step(0.0);
    for (double d : duties) {
        pwm.step(d);
        for (int j = 0; j < 10; ++j) dgc_env.step(j < std::lround(d * 10) ? 1.0 : 0.0);
    }
    pwm.step(0.0);
    dgc_env.step(0.0);
    CHECK(pwm.state().i_L == dgc_env.state().i_L);
    CHECK(pwm.state().v_C == dgc_env.state().v_C);
}

TEST_CASE("fractional duty splits the slot at the exact edge", "[env][pwm]") {
    BuckEnv env = nominal_env(Variant::Pwm);
    env.reset_to({1.0, 14.0}, 15.0, 1);
    env.step(0.75);
    env.step(0.0);  // applies 0.75
    sim::CircuitParams p = sim::nominal_params();
    sim::CircuitState s{1.0, 14.0};
    for (int j = 0; j < 10; ++j) s = sim::step(s, false, 1e-6, p).state;
    for (int j = 0; j < 7; ++j) s = sim::step(s, true, 1e-6, p).state;
    s = sim::step(s, true, 0.5e-6, p).state;
    s = sim::step(s, false, 0.5e-6, p).state;
    for (int j = 0; j < 2; ++j) s = sim::step(s, false, 1e-6, p).state;
    CHECK(env.state().i_L == Approx(s.i_L).epsilon(1e-12));
    CHECK(env.state().v_C == Approx(s.v_C).epsilon(1e-12));
    const auto& subs = env.substeps();
    REQUIRE(subs.size() == 10);
    CHECK(subs[7].on_time == Approx(0.5e-6).epsilon(1e-12));
    CHECK(subs[8].gate == 0.0);
}

TEST_CASE("pwm duty is clipped, NaN rejected", "[env][pwm]") {
    BuckEnv env = nominal_env(Variant::Pwm);
    env.reset_to({0.0, 0.0}, 15.0, 1);
    CHECK(env.step(1.7).action == 1.0);
    CHECK(env.step(-0.2).info.applied == 1.0);
    CHECK(env.pending_action() == 0.0);
    CHECK_THROWS_AS(env.step(std::nan("")), std::invalid_argument);
}

TEST_CASE("scheduled load step changes the load once", "[env]") {
    EnvConfig cfg;
    cfg.load_steps = true;
    cfg.episode_steps = 100;
    BuckEnv env(cfg);
    env.reset(21);
    const int at = env.load_step_index();
    REQUIRE(at >= 25);
    REQUIRE(at <= 75);
    const double before = env.circuit().R;
    for (int k = 0; k < 100; ++k) {
        const Transition tr = env.step(0.0);
        if (k < at) CHECK(tr.info.load == before);
    }
}
