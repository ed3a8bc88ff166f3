#include "dgc/env.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace dgc::env {

const char* to_string(Variant variant) { return variant == Variant::Dgc ? "dgc" : "pwm"; }

Variant parse_variant(std::string_view text) {
    if (text == "dgc") return Variant::Dgc;
    if (text == "pwm") return Variant::Pwm;
    throw std::invalid_argument("unknown variant '" + std::string(text) + "' (expected dgc or pwm)");
}

void RewardParams::validate() const {
    if (!(alpha >= 0.0 && beta >= 0.0 && zeta >= 0.0 && delta >= 0.0))
        throw std::invalid_argument("RewardParams: alpha, beta, zeta, delta must be non-negative");
    if (!(epsilon > 0.0)) throw std::invalid_argument("RewardParams: epsilon must be positive");
}

double regulation_reward(double v_err, const RewardParams& p) {
    const double e = std::abs(v_err);
    return p.alpha / (e + p.epsilon) - p.zeta * e - p.beta;
}

double reward(double v_err, double a_now, double a_prev, const RewardParams& p, double scale) {
    return scale * regulation_reward(v_err, p) - scale * p.delta * std::abs(a_now - a_prev);
}

EnvConfig EnvConfig::defaults(Variant variant) {
    EnvConfig cfg;
    cfg.variant = variant;
    if (variant == Variant::Pwm) {
        cfg.control_period = cfg.pwm_period;
        cfg.episode_steps = 200;
        cfg.reward_scale = 10.0;
    }
    return cfg;
}

void EnvConfig::validate() const {
    auto fail = [](const std::string& what) { throw std::invalid_argument("EnvConfig: " + what); };
    circuit.validate();
    reward.validate();
    if (!(control_period > 0.0)) fail("control_period must be positive");
    if (variant == Variant::Pwm && std::abs(control_period - pwm_period) > 1e-15)
        fail("PWM control_period must equal pwm_period");
    const double slots = control_period / kSimStep;
    if (std::abs(slots - std::round(slots)) > 1e-9 || std::round(slots) < 1.0)
        fail("control_period must be a whole number of 1 us simulator steps");
    if (episode_steps <= 0) fail("episode_steps must be positive");
    if (!(v_ref > 0.0 && v_ref < circuit.E)) fail("v_ref must lie in (0, E)");
    if (!(init_current.lo >= 0.0 && init_current.hi >= init_current.lo))
        fail("init_current range must be non-negative and ordered");
    if (!(init_voltage.lo >= 0.0 && init_voltage.hi >= init_voltage.lo))
        fail("init_voltage range must be non-negative and ordered");
    if (!(load.lo >= 1.0 && load.hi >= load.lo)) fail("load range must be ordered and >= 1 Ohm");
    if (!(sigma_v >= 0.0 && sigma_i >= 0.0)) fail("noise sigmas must be non-negative");
    if (!(reward_scale > 0.0)) fail("reward_scale must be positive");
    if (!(obs_voltage_scale > 0.0 && obs_current_scale > 0.0)) fail("observation scales must be positive");
}

void ObsWindow::fill(const Sample& sample) {
    samples_.fill(sample);
    head_ = 0;
}

void ObsWindow::push(const Sample& sample) {
    samples_[head_] = sample;
    head_ = (head_ + 1) % kHistory;
}

Observation ObsWindow::flatten(double voltage_scale, double current_scale) const {
    Observation obs{};
    for (std::size_t i = 0; i < kHistory; ++i) {
        const Sample& s = (*this)[i];
        obs[kFeatures * i + 0] = s.v_err * voltage_scale;
        obs[kFeatures * i + 1] = s.i_L * current_scale;
        obs[kFeatures * i + 2] = s.gate;
    }
    return obs;
}

std::pair<double, double> apply_sensor_noise(double v_err, double i_L, double sigma_v, double sigma_i,
                                             Rng& rng) {
    if (sigma_v > 0.0) v_err += std::normal_distribution<double>(0.0, sigma_v)(rng);
    if (sigma_i > 0.0) i_L += std::normal_distribution<double>(0.0, sigma_i)(rng);
    return {v_err, i_L};
}

BuckEnv::BuckEnv(EnvConfig config) : config_(std::move(config)), circuit_(config_.circuit) {
    config_.validate();
}

Observation BuckEnv::observation() const {
    return window_.flatten(config_.obs_voltage_scale, config_.obs_current_scale);
}

Observation BuckEnv::reset(std::uint64_t seed) {
    Rng rng = make_rng(seed, Stream::Environment);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    auto uniform = [&](const Range& r) { return r.lo + (r.hi - r.lo) * unit(rng); };
    auto log_uniform = [&](const Range& r) {
        return std::exp(std::log(r.lo) + (std::log(r.hi) - std::log(r.lo)) * unit(rng));
    };

    sim::CircuitState initial;
    initial.i_L = uniform(config_.init_current);
    initial.v_C = uniform(config_.init_voltage);
    const double load = log_uniform(config_.load);
    Observation obs = reset_to(initial, load, seed);

    if (config_.load_steps) {
        const int lo = config_.episode_steps / 4;
        const int hi = std::max(lo, 3 * config_.episode_steps / 4);
        load_step_index_ = std::uniform_int_distribution<int>(lo, hi)(rng);
        load_step_value_ = log_uniform(config_.load);
    }
    return obs;
}

Observation BuckEnv::reset_to(const sim::CircuitState& state, double load, std::uint64_t seed) {
    if (state.i_L < 0.0 || !std::isfinite(state.i_L) || !std::isfinite(state.v_C))
        throw std::invalid_argument("reset_to: invalid initial state");
    circuit_ = config_.circuit;
    circuit_.R = load;
    circuit_.validate();
    state_ = state;
    noise_rng_ = make_rng(seed, Stream::Noise);
    pending_ = 0.0;
    last_applied_ = 0.0;
    steps_ = 0;
    started_ = true;
    load_step_index_ = -1;
    substeps_.clear();

    // Every pre-filled slot is an independent measurement of the initial state.
    std::array<Sample, kHistory> prefill{};
    for (auto& s : prefill) s = measure(0.0);
    window_.fill(prefill[0]);
    for (std::size_t i = 1; i < kHistory; ++i) window_.push(prefill[i]);
    return observation();
}

void BuckEnv::set_load(double load) {
    circuit_.R = load;
    circuit_.validate();
}

void BuckEnv::set_circuit(const sim::CircuitParams& params) {
    params.validate();
    circuit_ = params;
}

Sample BuckEnv::measure(double gate) {
    const double v_err = sim::output_voltage(state_, circuit_) - config_.v_ref;
    const auto [v_obs, i_obs] =
        apply_sensor_noise(v_err, state_.i_L, config_.sigma_v, config_.sigma_i, noise_rng_);
    return {v_obs, i_obs, gate};
}

Transition BuckEnv::step(double action) {
    if (config_.variant == Variant::Dgc) return step_dgc(action >= 0.5 ? 1 : 0);
    return step_pwm(action);
}

Transition BuckEnv::step_dgc(int action) {
    if (config_.variant != Variant::Dgc) throw std::logic_error("step_dgc on a PWM environment");
    if (action != 0 && action != 1) throw std::invalid_argument("step_dgc: action must be 0 or 1");
    const double applied = pending_;
    pending_ = action;
    return advance(applied, action);
}

Transition BuckEnv::step_pwm(double duty) {
    if (config_.variant != Variant::Pwm) throw std::logic_error("step_pwm on a DGC environment");
    if (std::isnan(duty)) throw std::invalid_argument("step_pwm: duty is NaN");
    duty = std::clamp(duty, 0.0, 1.0);
    const double applied = pending_;
    pending_ = duty;
    return advance(applied, duty);
}

Transition BuckEnv::advance(double applied, double action) {
    if (!started_) throw std::logic_error("BuckEnv: step before reset");
    if (done()) throw std::logic_error("BuckEnv: step on a finished episode");
    if (steps_ == load_step_index_) set_load(load_step_value_);

    const int slots = static_cast<int>(std::lround(config_.control_period / kSimStep));
    const double slot_dt = config_.control_period / slots;
    // Leading-edge modulation: high for the first `applied * slots` sub-intervals.
    double on_slots = applied * slots;
    if (std::abs(on_slots - std::round(on_slots)) < 1e-9) on_slots = std::round(on_slots);

    substeps_.clear();
    for (int j = 0; j < slots; ++j) {
        const double high = std::clamp(on_slots - j, 0.0, 1.0);
        SubStep sub;
        sub.gate = high > 0.0 ? 1.0 : 0.0;
        sub.on_time = high * slot_dt;
        auto accumulate = [&](bool gate, double dt) {
            const auto r = sim::step(state_, gate, dt, circuit_);
            state_ = r.state;
            sub.source_energy += r.telemetry.source_energy;
            sub.dissipated_energy += r.telemetry.dissipated_energy;
        };
        if (high >= 1.0) {
            accumulate(true, slot_dt);
        } else if (high <= 0.0) {
            accumulate(false, slot_dt);
        } else {
            accumulate(true, high * slot_dt);
            accumulate(false, slot_dt - high * slot_dt);
        }
        sub.i_L = state_.i_L;
        sub.v_out = sim::output_voltage(state_, circuit_);
        substeps_.push_back(sub);
    }

    Transition tr;
    tr.action = action;
    tr.info.i_L = state_.i_L;
    tr.info.v_out = sim::output_voltage(state_, circuit_);
    tr.info.v_err = tr.info.v_out - config_.v_ref;
    tr.info.applied = applied;
    tr.info.load = circuit_.R;
    tr.reward = reward(tr.info.v_err, applied, last_applied_, config_.reward, config_.reward_scale);
    last_applied_ = applied;

    const Sample sample = measure(pending_);
    tr.info.v_out_observed = config_.v_ref + sample.v_err;
    window_.push(sample);
    ++steps_;
    tr.done = done();
    tr.observation = observation();
    return tr;
}

}  // namespace dgc::env
