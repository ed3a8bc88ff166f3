#pragma once

#include <array>
#include <cstddef>
#include <limits>

namespace dgc::sim {

inline constexpr double kOpenLoad = std::numeric_limits<double>::infinity();

/// Physical parameters of the buck power stage. All resistances in ohms.
/// `R` is the load and may be `kOpenLoad`.
struct CircuitParams {
    double E = 20.0;      // input voltage [V]
    double L = 47e-6;     // inductance [H]
    double R_L = 10e-3;   // inductor ESR [Ohm]
    double C = 470e-6;    // capacitance [F]
    double R_C = 100e-3;  // capacitor ESR [Ohm]
    double R = 15.0;      // load [Ohm]

    bool open_load() const { return R == kOpenLoad; }

    /// Throws std::invalid_argument naming the offending field.
    void validate() const;
};

/// Table values of the reference converter with a 15 Ohm load.
CircuitParams nominal_params();

/// Continuous state. `v_C` is the voltage across the ideal capacitance,
/// excluding the ESR drop.
struct CircuitState {
    double i_L = 0.0;
    double v_C = 0.0;

    friend bool operator==(const CircuitState&, const CircuitState&) = default;
};

enum class ConductionMode { SwitchOn, DiodeOn, AllOff };

const char* to_string(ConductionMode mode);

/// Modes visited inside one call to `step`, in order.
struct ModeSequence {
    static constexpr std::size_t kCapacity = 4;
    std::array<ConductionMode, kCapacity> modes{};
    std::size_t count = 0;

    void push(ConductionMode mode);
    ConductionMode back() const { return modes[count - 1]; }
    std::size_t size() const { return count; }
    ConductionMode operator[](std::size_t i) const { return modes[i]; }
};

struct StepTelemetry {
    double v_out_end = 0.0;
    double v_out_mean = 0.0;
    double source_energy = 0.0;      // integral of E * i_L while the switch conducts [J]
    double dissipated_energy = 0.0;  // ESR and load losses [J]
    ModeSequence modes;
};

struct Derivative {
    double di_L = 0.0;  // [A/s]
    double dv_C = 0.0;  // [V/s]
};

struct StepResult {
    CircuitState state;
    StepTelemetry telemetry;
};

/// Voltage across the load terminals. With a load R:
///   v_out = R (v_C + R_C i_L) / (R + R_C)
/// which follows from v_out = v_C + R_C (i_L - v_out / R). For an open
/// load the capacitor branch carries all of i_L and v_out = v_C + R_C i_L.
double output_voltage(const CircuitState& state, const CircuitParams& params);

/// Current into the load, v_out / R (zero for an open load).
double load_current(const CircuitState& state, const CircuitParams& params);

/// Mode the power stage takes at `state` under `gate`.
///
/// Gate low: the diode freewheels while i_L > 0, otherwise everything is off.
/// Gate high: the switch conducts unless i_L = 0 and v_out >= E, in which case
/// the switch cell cannot source current and the stage is AllOff (blocked).
/// Both switch and diode carry forward current only, so i_L never goes negative.
ConductionMode conduction_mode(const CircuitState& state, bool gate, const CircuitParams& params);

/// Affine vector field of `mode` at `state`.
/// SwitchOn: L di/dt = E - R_L i - v_out; DiodeOn: same with E = 0;
/// AllOff: di/dt = 0 with i pinned at 0. Always C dv_C/dt = i_L - v_out / R.
/// Throws std::logic_error if `mode` is inconsistent with `state`
/// (AllOff with i_L != 0, or any mode with i_L < 0).
Derivative derivatives(const CircuitState& state, ConductionMode mode, const CircuitParams& params);

/// Advances the converter by `dt` seconds with the gate held constant.
///
/// Each mode is integrated with the closed-form solution of its 2x2 affine
/// system. A zero crossing of i_L (diode turn-off, or switch blocking when
/// v_out > E) is located by bisection and integration continues in AllOff.
/// Throws std::invalid_argument on dt <= 0 or invalid params, and
/// std::runtime_error if the result is not finite.
StepResult step(const CircuitState& state, bool gate, double dt, const CircuitParams& params);

/// Averaged-model steady-state duty for `v_ref` in CCM:
///   D = (v_ref + i_L R_L) / E,  i_L = v_ref / R.
/// Saturates to [0, 1].
double dc_duty_for_target(const CircuitParams& params, double v_ref);

/// Energy stored in the inductor and capacitor [J].
double stored_energy(const CircuitState& state, const CircuitParams& params);

}  // namespace dgc::sim
