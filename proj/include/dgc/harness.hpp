#pragma once

#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "dgc/converter.hpp"
#include "dgc/env.hpp"
#include "dgc/nn.hpp"

namespace dgc::harness {

/// Circuit fields a scenario may replace. Unset fields keep the base value.
struct ParamOverrides {
    std::optional<double> E, L, R_L, C, R_C;

    /// Key is one of E, L, R_L, C, R_C; throws std::invalid_argument otherwise.
    void set(std::string_view key, double value);
    /// Fields set in `other` win.
    ParamOverrides merged(const ParamOverrides& other) const;
    /// Returns the overridden copy; throws std::invalid_argument if it is invalid.
    sim::CircuitParams apply(const sim::CircuitParams& base) const;
    bool empty() const { return !E && !L && !R_L && !C && !R_C; }
};

/// Load-step experiment. Exported time runs from -pre_roll; the load changes
/// from load_before to load_after at `step_time`.
struct Scenario {
    std::string name;
    std::optional<env::Variant> variant;  // unset: take it from the checkpoint
    double load_before = 15.0;            // [Ohm]
    double load_after = 1.0;              // [Ohm]
    double pre_roll = 1e-3;               // closed-loop settling before t = 0 [s]
    double step_time = 0.0;               // [s]
    double horizon = 2e-3;                // end of the trace [s]
    ParamOverrides overrides;
    double sigma_v = 0.0;
    double sigma_i = 0.0;

    /// Checks timing against the control period of `variant`.
    void validate(const env::EnvConfig& env) const;
};

struct Variation {
    std::string label;
    ParamOverrides overrides;
};

/// A scenario plus the parameter variations that `sweep` runs on it.
struct ScenarioSpec {
    Scenario scenario;
    std::vector<Variation> variations;
};

/// L = 33 uH, L = 68 uH and R_C = 200 mOhm.
std::vector<Variation> parameter_variations();

/// loadstep-nominal, sweep-params and noise.
const std::vector<ScenarioSpec>& builtin_scenarios();
/// Nullptr when unknown.
const ScenarioSpec* find_builtin(std::string_view name);

/// One row per 1 us simulator step. Row k describes the interval ending at
/// time[k]: gate level (1 if it was high at all), duty (applied duty for PWM,
/// low-passed gate for DGC), i_L and v_out at the end of the interval, the
/// most recent observed v_out, the action driving the interval, and the
/// reward, which is non-zero only on the last row of a control interval.
struct EpisodeTrace {
    std::vector<double> time, gate, duty, i_L, v_out, v_obs, action, reward;

    std::size_t size() const { return time.size(); }
    void reserve(std::size_t n);
};

/// Maps an observation to an environment action.
using Policy = std::function<double(const env::Observation&)>;

/// Greedy policy: argmax for the categorical head, mean for the Gaussian.
/// Holds a reference to `model`.
Policy greedy_policy(const nn::ActorCritic& model);

/// Throws std::invalid_argument when the head does not fit the variant.
void check_variant(const nn::ActorCritic& model, env::Variant variant);

/// Starts at (v_ref / load_before, v_ref), runs the pre-roll closed loop,
/// steps the load and continues to the horizon. `base` supplies everything
/// the scenario does not override; its variant must already be resolved.
/// `seed` drives sensor noise only.
EpisodeTrace run_scenario(const Policy& policy, const Scenario& scenario, const env::EnvConfig& base,
                          std::uint64_t seed);

/// Same, for a loaded checkpoint; rejects a variant mismatch.
EpisodeTrace run_scenario(const nn::Checkpoint& checkpoint, const Scenario& scenario, const env::EnvConfig& base,
                          std::uint64_t seed);

/// Open-loop drive: a gate pattern repeated every len(pattern) us, or a fixed
/// duty with leading-edge modulation at `pwm_period`.
struct OpenLoopDrive {
    std::vector<int> pattern;
    std::optional<double> duty;
    double pwm_period = 10e-6;
};

/// "110100"; commas and spaces are ignored. Throws std::invalid_argument.
std::vector<int> parse_gate_pattern(std::string_view text);

/// 1 us rows from `initial`; v_obs equals v_out, reward is 0 and action holds
/// the gate (pattern) or duty.
EpisodeTrace simulate_open_loop(const sim::CircuitParams& params, const OpenLoopDrive& drive, double horizon,
                                const sim::CircuitState& initial = {});

inline constexpr double kDutyTau = 100e-6;

/// First-order low-pass y <- y + (dt / tau) (u - y), applied sample by
/// sample so that chunked and whole-trace processing agree.
class DutyFilter {
public:
    /// Throws std::invalid_argument unless 0 < dt <= tau.
    DutyFilter(double dt, double tau = kDutyTau, double initial = 0.0);
    double push(double u);
    double value() const { return y_; }

private:
    double gain_;
    double y_;
};

/// Filtered output after each input sample.
std::vector<double> effective_duty(const std::vector<double>& gate, double dt, double tau = kDutyTau,
                                   double initial = 0.0);

struct MetricsOptions {
    double v_ref = 15.0;
    double band = 0.3;             // recovery band half-width [V]
    double step_time = 0.0;        // [s]
    double ripple_window = 0.2e-3;  // final window for ripple [s]
    double error_window = 0.5e-3;   // final window for mean |v_err| [s]
};

/// 2% band around v_ref, windows as above.
MetricsOptions default_metrics_options(double v_ref, double step_time = 0.0);

/// Extrema, rate and error averages cover samples after the step. Recovery
/// is the time from the step until v_out enters the band and stays there to
/// the end of the trace; settling uses half the band. Both are nullopt when
/// the last sample is outside.
struct Metrics {
    double v_min = 0.0;
    double v_max = 0.0;
    std::optional<double> recovery_time;
    std::optional<double> settling_time;
    double overshoot = 0.0;        // max(0, v_max - v_ref)
    double ripple = 0.0;           // peak-to-peak over the ripple window
    double switching_rate = 0.0;   // rising gate edges per second
    double mean_abs_error = 0.0;   // over the error window

    bool recovered() const { return recovery_time.has_value(); }
};

/// Uses only the time, gate and v_out columns. Throws std::invalid_argument
/// if the trace is non-uniform or has no samples after the step.
Metrics compute_metrics(const EpisodeTrace& trace, const MetricsOptions& options);

struct SweepRow {
    std::string label;
    std::optional<Metrics> metrics;  // unset if the run failed
    std::string error;
    EpisodeTrace trace;
};

/// Nominal row first, then one per variation. A failing row records its error
/// and the sweep continues.
std::vector<SweepRow> sweep(const Policy& policy, const Scenario& scenario, const std::vector<Variation>& variations,
                            const env::EnvConfig& base, std::uint64_t seed);

// CSV -------------------------------------------------------------------------

/// Columns time_s, gate, duty, i_L_A, v_out_V, v_obs_V, action, reward with
/// round-trip precision.
void write_trace_csv(std::ostream& out, const EpisodeTrace& trace);
/// Throws std::runtime_error naming the line or the missing column.
EpisodeTrace read_trace_csv(std::istream& in);

/// label, v_min_V, v_max_V, recovery_time_s, settling_time_s, overshoot_V,
/// ripple_pp_V, switching_rate_Hz, mean_abs_err_V, error. A missing recovery
/// is written as "not_recovered".
void write_metrics_csv(std::ostream& out, const std::vector<SweepRow>& rows);

/// Fixed-width text table of the same rows.
void write_summary(std::ostream& out, const std::vector<SweepRow>& rows);

inline constexpr std::string_view kNotRecovered = "not_recovered";

}  // namespace dgc::harness
