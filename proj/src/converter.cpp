#include "dgc/converter.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <string>

namespace dgc::sim {

namespace {

// Nodal coefficients: v_out = k (v_C + R_C i_L), v_out / R = g (v_C + R_C i_L).
struct Nodal {
    double k;
    double g;
};

Nodal nodal(const CircuitParams& p) {
    if (p.open_load()) return {1.0, 0.0};
    return {p.R / (p.R + p.R_C), 1.0 / (p.R + p.R_C)};
}

// dx/dt = A x + b for a conducting mode (switch or diode carries i_L).
struct AffineSystem {
    double a11, a12, a21, a22;
    double b1;
    double i_fixed, v_fixed;  // x* = -A^-1 b
    double s;                 // trace / 2
    double disc;              // s^2 - det
};

AffineSystem conducting_system(const CircuitParams& p, bool source_connected) {
    const auto [k, g] = nodal(p);
    AffineSystem sys{};
    sys.a11 = -(p.R_L + k * p.R_C) / p.L;
    sys.a12 = -k / p.L;
    sys.a21 = k / p.C;
    sys.a22 = -g / p.C;
    sys.b1 = source_connected ? p.E / p.L : 0.0;
    const double det = sys.a11 * sys.a22 - sys.a12 * sys.a21;
    sys.i_fixed = -sys.a22 * sys.b1 / det;
    sys.v_fixed = sys.a21 * sys.b1 / det;
    sys.s = 0.5 * (sys.a11 + sys.a22);
    sys.disc = sys.s * sys.s - det;
    return sys;
}

// exp(A t) = e^{s t} (c(t) I + h(t) M) with M = A - s I and M^2 = disc I.
// Returns (e^{st} c, e^{st} h).
std::pair<double, double> propagator_coefficients(const AffineSystem& sys, double t) {
    const double z = sys.disc * t * t;
    if (std::abs(z) < 1e-4) {
        const double c = 1.0 + z / 2.0 + z * z / 24.0 + z * z * z / 720.0;
        const double h = t * (1.0 + z / 6.0 + z * z / 120.0 + z * z * z / 5040.0);
        const double e = std::exp(sys.s * t);
        return {e * c, e * h};
    }
    if (sys.disc > 0.0) {
        const double r = std::sqrt(sys.disc);
        const double e1 = std::exp((sys.s + r) * t);
        const double e2 = std::exp((sys.s - r) * t);
        return {0.5 * (e1 + e2), 0.5 * (e1 - e2) / r};
    }
    const double w = std::sqrt(-sys.disc);
    const double e = std::exp(sys.s * t);
    return {e * std::cos(w * t), e * std::sin(w * t) / w};
}

CircuitState propagate(const AffineSystem& sys, const CircuitState& x0, double t) {
    const auto [c, h] = propagator_coefficients(sys, t);
    const double di = x0.i_L - sys.i_fixed;
    const double dv = x0.v_C - sys.v_fixed;
    const double m11 = sys.a11 - sys.s;
    const double m22 = sys.a22 - sys.s;
    return {sys.i_fixed + c * di + h * (m11 * di + sys.a12 * dv),
            sys.v_fixed + c * dv + h * (sys.a21 * di + m22 * dv)};
}

CircuitState propagate_all_off(const CircuitParams& p, const CircuitState& x0, double t) {
    const auto g = nodal(p).g;
    return {0.0, x0.v_C * std::exp(-g * t / p.C)};
}

// Five-point Gauss-Legendre on [0, 1].
constexpr std::array<double, 5> kGaussNodes = {
    0.04691007703066800, 0.23076534494715845, 0.5, 0.76923465505284155, 0.95308992296933200};
constexpr std::array<double, 5> kGaussWeights = {
    0.11846344252809454, 0.23931433524968324, 0.28444444444444444, 0.23931433524968324,
    0.11846344252809454};
constexpr double kQuadraturePanel = 1e-6;

struct SegmentIntegrals {
    double v_out = 0.0;
    double source = 0.0;
    double dissipated = 0.0;
};

template <typename Evolve>
SegmentIntegrals integrate_segment(const CircuitParams& p, bool switch_conducts, double duration,
                                   Evolve&& evolve) {
    SegmentIntegrals out;
    if (duration <= 0.0) return out;
    const auto [k, g] = nodal(p);
    const int panels = std::max(1, static_cast<int>(std::ceil(duration / kQuadraturePanel)));
    const double width = duration / panels;
    for (int panel = 0; panel < panels; ++panel) {
        for (std::size_t q = 0; q < kGaussNodes.size(); ++q) {
            const double t = (panel + kGaussNodes[q]) * width;
            const CircuitState x = evolve(t);
            const double node = x.v_C + p.R_C * x.i_L;
            const double i_C = k * x.i_L - g * x.v_C;
            const double w = kGaussWeights[q] * width;
            out.v_out += w * k * node;
            if (switch_conducts) out.source += w * p.E * x.i_L;
            out.dissipated += w * (x.i_L * x.i_L * p.R_L + i_C * i_C * p.R_C + k * g * node * node);
        }
    }
    return out;
}

// First time in (0, duration] where i_L becomes negative, or -1 if none.
double find_current_zero(const AffineSystem& sys, const CircuitState& x0, double duration) {
    int samples = 16;
    if (sys.disc < 0.0) {
        const double period = 2.0 * M_PI / std::sqrt(-sys.disc);
        samples = std::max(samples, static_cast<int>(std::ceil(32.0 * duration / period)));
    }
    double lo = 0.0;
    for (int j = 1; j <= samples; ++j) {
        const double hi = duration * j / samples;
        if (propagate(sys, x0, hi).i_L < 0.0) {
            double a = lo;
            double b = hi;
            for (int it = 0; it < 64 && b - a > 0.0; ++it) {
                const double mid = 0.5 * (a + b);
                if (mid <= a || mid >= b) break;
                if (propagate(sys, x0, mid).i_L < 0.0) {
                    b = mid;
                } else {
                    a = mid;
                }
            }
            return a;
        }
        lo = hi;
    }
    return -1.0;
}

void require_finite(const CircuitState& x, const CircuitParams& p) {
    if (std::isfinite(x.i_L) && std::isfinite(x.v_C)) return;
    std::ostringstream msg;
    msg << "converter step produced a non-finite state (i_L=" << x.i_L << ", v_C=" << x.v_C
        << ") with E=" << p.E << " L=" << p.L << " C=" << p.C << " R=" << p.R;
    throw std::runtime_error(msg.str());
}

}  // namespace

void CircuitParams::validate() const {
    auto fail = [](const std::string& what) { throw std::invalid_argument("CircuitParams: " + what); };
    if (!(E > 0.0) || !std::isfinite(E)) fail("E must be positive and finite");
    if (!(L > 0.0) || !std::isfinite(L)) fail("L must be positive and finite");
    if (!(C > 0.0) || !std::isfinite(C)) fail("C must be positive and finite");
    if (!(R_L >= 0.0) || !std::isfinite(R_L)) fail("R_L must be non-negative");
    if (!(R_C >= 0.0) || !std::isfinite(R_C)) fail("R_C must be non-negative");
    if (!(R >= 1.0)) fail("R must be at least 1 Ohm or open (infinite)");
}

CircuitParams nominal_params() { return CircuitParams{}; }

const char* to_string(ConductionMode mode) {
    switch (mode) {
        case ConductionMode::SwitchOn: return "switch_on";
        case ConductionMode::DiodeOn: return "diode_on";
        case ConductionMode::AllOff: return "all_off";
    }
    return "?";
}

void ModeSequence::push(ConductionMode mode) {
    if (count == kCapacity) throw std::logic_error("ModeSequence: too many mode changes in one step");
    modes[count++] = mode;
}

double output_voltage(const CircuitState& state, const CircuitParams& params) {
    return nodal(params).k * (state.v_C + params.R_C * state.i_L);
}

double load_current(const CircuitState& state, const CircuitParams& params) {
    return nodal(params).g * (state.v_C + params.R_C * state.i_L);
}

ConductionMode conduction_mode(const CircuitState& state, bool gate, const CircuitParams& params) {
    if (state.i_L > 0.0) return gate ? ConductionMode::SwitchOn : ConductionMode::DiodeOn;
    if (gate && params.E > output_voltage(state, params)) return ConductionMode::SwitchOn;
    return ConductionMode::AllOff;
}

Derivative derivatives(const CircuitState& state, ConductionMode mode, const CircuitParams& params) {
    if (state.i_L < 0.0) throw std::logic_error("derivatives: negative inductor current");
    if (mode == ConductionMode::AllOff) {
        if (state.i_L != 0.0) throw std::logic_error("derivatives: AllOff requires i_L == 0");
        return {0.0, -load_current(state, params) / params.C};
    }
    const double v_out = output_voltage(state, params);
    const double source = mode == ConductionMode::SwitchOn ? params.E : 0.0;
    return {(source - params.R_L * state.i_L - v_out) / params.L,
            (state.i_L - load_current(state, params)) / params.C};
}

StepResult step(const CircuitState& state, bool gate, double dt, const CircuitParams& params) {
    if (!(dt > 0.0) || !std::isfinite(dt)) throw std::invalid_argument("step: dt must be positive");
    params.validate();
    if (state.i_L < 0.0) throw std::logic_error("step: negative inductor current");

    StepResult result;
    auto& tel = result.telemetry;
    CircuitState x = state;
    double remaining = dt;
    bool force_switch_on = false;

    while (remaining > 0.0) {
        const ConductionMode mode =
            force_switch_on ? ConductionMode::SwitchOn : conduction_mode(x, gate, params);
        force_switch_on = false;
        tel.modes.push(mode);

        if (mode == ConductionMode::AllOff) {
            x.i_L = 0.0;
            double duration = remaining;
            if (gate) {
                // Blocked switch: conduction resumes once v_out decays below E.
                const auto [k, g] = nodal(params);
                const double v_out = k * x.v_C;
                if (g > 0.0 && v_out > params.E) {
                    const double release = params.C / g * std::log(v_out / params.E);
                    if (release < remaining) {
                        duration = release;
                        force_switch_on = true;
                    }
                }
            }
            const CircuitState x0 = x;
            const auto sums = integrate_segment(params, false, duration, [&](double t) {
                return propagate_all_off(params, x0, t);
            });
            tel.v_out_mean += sums.v_out;
            tel.dissipated_energy += sums.dissipated;
            x = propagate_all_off(params, x0, duration);
            remaining = force_switch_on ? remaining - duration : 0.0;
            continue;
        }

        const bool switch_conducts = mode == ConductionMode::SwitchOn;
        const AffineSystem sys = conducting_system(params, switch_conducts);
        const CircuitState x0 = x;
        const double crossing = find_current_zero(sys, x0, remaining);
        const double duration = crossing >= 0.0 ? crossing : remaining;
        const auto sums = integrate_segment(params, switch_conducts, duration,
                                            [&](double t) { return propagate(sys, x0, t); });
        tel.v_out_mean += sums.v_out;
        tel.source_energy += sums.source;
        tel.dissipated_energy += sums.dissipated;
        x = propagate(sys, x0, duration);
        if (crossing >= 0.0) {
            x.i_L = 0.0;
            remaining -= duration;
            if (remaining <= 0.0) tel.modes.push(ConductionMode::AllOff);
        } else {
            remaining = 0.0;
        }
    }

    if (x.i_L < 0.0) x.i_L = 0.0;
    require_finite(x, params);
    if (!gate && tel.modes.size() > 2)
        throw std::logic_error("step: more than one mode transition with the gate low");
    result.state = x;
    tel.v_out_mean /= dt;
    tel.v_out_end = output_voltage(x, params);
    return result;
}

double dc_duty_for_target(const CircuitParams& params, double v_ref) {
    if (v_ref <= 0.0) return 0.0;
    const double i_load = params.open_load() ? 0.0 : v_ref / params.R;
    return std::clamp((v_ref + i_load * params.R_L) / params.E, 0.0, 1.0);
}

double stored_energy(const CircuitState& state, const CircuitParams& params) {
    return 0.5 * params.L * state.i_L * state.i_L + 0.5 * params.C * state.v_C * state.v_C;
}

}  // namespace dgc::sim
