#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string_view>
#include <utility>
#include <vector>

#include "dgc/converter.hpp"
#include "dgc/random.hpp"

namespace dgc::env {

/// Direct gate control (binary gate every control step) or the PWM duty baseline.
enum class Variant { Dgc, Pwm };

const char* to_string(Variant variant);
/// Accepts "dgc" or "pwm"; throws std::invalid_argument otherwise.
Variant parse_variant(std::string_view text);

/// Coefficients of the shaped reward
///   r = alpha / (|v_err| + epsilon) - zeta |v_err| - beta - delta |a_now - a_prev|
struct RewardParams {
    double alpha = 0.2;
    double beta = 0.004;
    double zeta = 0.1;
    double delta = 4.0;
    double epsilon = 0.1;  // [V]

    void validate() const;
};

/// Regulation term alone (the first three terms of the reward).
double regulation_reward(double v_err, const RewardParams& p);

/// Full reward, both terms multiplied by `scale` (10 for the PWM baseline).
double reward(double v_err, double a_now, double a_prev, const RewardParams& p, double scale = 1.0);

struct Range {
    double lo = 0.0;
    double hi = 0.0;
};

struct EnvConfig {
    Variant variant = Variant::Dgc;
    sim::CircuitParams circuit;     // circuit.R is replaced on every reset
    double control_period = 1e-6;   // [s]
    double pwm_period = 10e-6;      // [s], PWM variant only
    int episode_steps = 2000;
    double v_ref = 15.0;            // [V]
    Range init_current{0.0, 10.0};  // uniform [A]
    Range init_voltage{0.0, 20.0};  // uniform [V] on the capacitor
    Range load{1.0, 50.0};          // log-uniform [Ohm]
    double sigma_v = 0.0;           // observation noise [V]
    double sigma_i = 0.0;           // observation noise [A]
    RewardParams reward;
    double reward_scale = 1.0;
    bool load_steps = false;        // resample R once at a random mid-episode step
    double obs_voltage_scale = 1.0;
    double obs_current_scale = 1.0 / 20.0;

    /// 1 us / 2000 steps / reward x1 for DGC; 10 us / 200 steps / reward x10 for PWM.
    static EnvConfig defaults(Variant variant);
    /// Throws std::invalid_argument.
    void validate() const;
};

inline constexpr std::size_t kHistory = 10;
inline constexpr std::size_t kFeatures = 3;
inline constexpr std::size_t kObsDim = kHistory * kFeatures;

/// Simulator resolution used inside a control period.
inline constexpr double kSimStep = 1e-6;

using Observation = std::array<double, kObsDim>;

/// One measured sample. `gate` is the gate (DGC) or duty (PWM) committed at
/// the sample instant, i.e. the one that drives the next interval.
struct Sample {
    double v_err = 0.0;
    double i_L = 0.0;
    double gate = 0.0;

    friend bool operator==(const Sample&, const Sample&) = default;
};

/// Fixed-length history, oldest first. The observation is the interleaved
/// (v_err, i_L, gate) triples scaled by fixed factors.
class ObsWindow {
public:
    void fill(const Sample& sample);
    void push(const Sample& sample);

    const Sample& operator[](std::size_t i) const { return samples_[(head_ + i) % kHistory]; }
    const Sample& newest() const { return (*this)[kHistory - 1]; }

    Observation flatten(double voltage_scale, double current_scale) const;

private:
    std::array<Sample, kHistory> samples_{};
    std::size_t head_ = 0;  // index of the oldest sample
};

/// Additive white Gaussian noise on the measured quantities. A zero sigma
/// leaves the value untouched and draws nothing from `rng`.
std::pair<double, double> apply_sensor_noise(double v_err, double i_L, double sigma_v, double sigma_i,
                                             Rng& rng);

struct StepInfo {
    double v_out = 0.0;           // true, end of interval
    double v_out_observed = 0.0;  // v_ref + observed v_err
    double v_err = 0.0;           // true
    double i_L = 0.0;             // true
    double applied = 0.0;         // gate (DGC) or duty (PWM) used during the interval
    double load = 0.0;
};

struct Transition {
    Observation observation{};
    double action = 0.0;
    double reward = 0.0;
    bool done = false;
    StepInfo info;
};

/// One simulator sub-interval of the last control step.
struct SubStep {
    double gate = 0.0;      // gate level at the start of the sub-interval
    double on_time = 0.0;   // seconds the gate was high within it
    double i_L = 0.0;
    double v_out = 0.0;
    double source_energy = 0.0;
    double dissipated_energy = 0.0;
};

/// Buck converter wrapped as an episodic MDP. The action chosen at step t is
/// applied during interval t + 1; interval 0 uses gate 0 (duty 0).
class BuckEnv {
public:
    explicit BuckEnv(EnvConfig config);

    /// Randomized initial state drawn from the configured ranges.
    Observation reset(std::uint64_t seed);
    /// Deterministic initial state and load. `seed` only drives sensor noise.
    Observation reset_to(const sim::CircuitState& state, double load, std::uint64_t seed);

    /// Dispatches on the variant: binary action for DGC, duty for PWM.
    Transition step(double action);
    Transition step_dgc(int action);
    Transition step_pwm(double duty);

    void set_load(double load);
    void set_circuit(const sim::CircuitParams& params);

    const EnvConfig& config() const { return config_; }
    const sim::CircuitParams& circuit() const { return circuit_; }
    const sim::CircuitState& state() const { return state_; }
    const ObsWindow& window() const { return window_; }
    const std::vector<SubStep>& substeps() const { return substeps_; }
    Observation observation() const;
    double pending_action() const { return pending_; }
    int steps() const { return steps_; }
    bool done() const { return steps_ >= config_.episode_steps; }
    /// Step index at which the mid-episode load change happens, or -1.
    int load_step_index() const { return load_step_index_; }

private:
    Transition advance(double applied, double action);
    Sample measure(double gate);

    EnvConfig config_;
    sim::CircuitParams circuit_;
    sim::CircuitState state_;
    ObsWindow window_;
    std::vector<SubStep> substeps_;
    Rng noise_rng_;
    double pending_ = 0.0;
    double last_applied_ = 0.0;
    int steps_ = 0;
    bool started_ = false;
    int load_step_index_ = -1;
    double load_step_value_ = 0.0;
};

}  // namespace dgc::env
