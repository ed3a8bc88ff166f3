#include "dgc/harness.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "dgc/text.hpp"

namespace dgc::harness {

void ParamOverrides::set(std::string_view key, double value) {
    if (key == "E") E = value;
    else if (key == "L") L = value;
    else if (key == "R_L") R_L = value;
    else if (key == "C") C = value;
    else if (key == "R_C") R_C = value;
    else throw std::invalid_argument("unknown circuit override '" + std::string(key) + "' (expected E, L, R_L, C, R_C)");
}

ParamOverrides ParamOverrides::merged(const ParamOverrides& other) const {
    ParamOverrides out = *this;
    if (other.E) out.E = other.E;
    if (other.L) out.L = other.L;
    if (other.R_L) out.R_L = other.R_L;
    if (other.C) out.C = other.C;
    if (other.R_C) out.R_C = other.R_C;
    return out;
}

sim::CircuitParams ParamOverrides::apply(const sim::CircuitParams& base) const {
    sim::CircuitParams p = base;
    if (E) p.E = *E;
    if (L) p.L = *L;
    if (R_L) p.R_L = *R_L;
    if (C) p.C = *C;
    if (R_C) p.R_C = *R_C;
    p.validate();
    return p;
}

namespace {

long whole_steps(double duration, double period, const char* what) {
    const double n = duration / period;
    if (!(n >= 0.0) || std::abs(n - std::round(n)) > 1e-6)
        throw std::invalid_argument(std::string("Scenario: ") + what + " must be a whole number of control periods");
    return std::lround(n);
}

}  // namespace

void Scenario::validate(const env::EnvConfig& env) const {
    auto fail = [&](const std::string& what) { throw std::invalid_argument("Scenario '" + name + "': " + what); };
    if (!(load_before >= 1.0 && load_after >= 1.0)) fail("loads must be >= 1 Ohm");
    if (!(pre_roll >= 0.0)) fail("pre_roll must be non-negative");
    if (!(step_time >= 0.0)) fail("step_time must be non-negative");
    if (!(horizon > step_time)) fail("horizon must exceed step_time");
    if (!(sigma_v >= 0.0 && sigma_i >= 0.0)) fail("noise sigmas must be non-negative");
    overrides.apply(env.circuit);
    whole_steps(pre_roll, env.control_period, "pre_roll");
    whole_steps(pre_roll + step_time, env.control_period, "pre_roll + step_time");
    whole_steps(pre_roll + horizon, env.control_period, "pre_roll + horizon");
}

std::vector<Variation> parameter_variations() {
    std::vector<Variation> out(3);
    out[0].label = "L=33uH";
    out[0].overrides.L = 33e-6;
    out[1].label = "L=68uH";
    out[1].overrides.L = 68e-6;
    out[2].label = "R_C=200mOhm";
    out[2].overrides.R_C = 0.2;
    return out;
}

const std::vector<ScenarioSpec>& builtin_scenarios() {
    static const std::vector<ScenarioSpec> specs = [] {
        std::vector<ScenarioSpec> s(3);
        s[0].scenario.name = "loadstep-nominal";
        s[1].scenario.name = "sweep-params";
        s[1].variations = parameter_variations();
        s[2].scenario.name = "noise";
        s[2].scenario.sigma_v = 0.01;
        s[2].scenario.sigma_i = 0.1;
        return s;
    }();
    return specs;
}

const ScenarioSpec* find_builtin(std::string_view name) {
    for (const auto& s : builtin_scenarios())
        if (s.scenario.name == name) return &s;
    return nullptr;
}

void EpisodeTrace::reserve(std::size_t n) {
    for (auto* col : {&time, &gate, &duty, &i_L, &v_out, &v_obs, &action, &reward}) col->reserve(n);
}

Policy greedy_policy(const nn::ActorCritic& model) {
    return [&model](const env::Observation& obs) {
        Rng unused(0);
        const Eigen::Map<const nn::Vector> x(obs.data(), static_cast<Eigen::Index>(obs.size()));
        return model.act(x, unused, true).action;
    };
}

void check_variant(const nn::ActorCritic& model, env::Variant variant) {
    const auto expected = variant == env::Variant::Dgc ? nn::ActionKind::Categorical : nn::ActionKind::Gaussian;
    if (model.kind() != expected)
        throw std::invalid_argument(std::string("policy head does not match variant ") + env::to_string(variant));
}

EpisodeTrace run_scenario(const Policy& policy, const Scenario& scenario, const env::EnvConfig& base,
                          std::uint64_t seed) {
    if (scenario.variant && *scenario.variant != base.variant)
        throw std::invalid_argument("Scenario '" + scenario.name + "' requires variant " +
                                    env::to_string(*scenario.variant));
    scenario.validate(base);

    env::EnvConfig cfg = base;
    cfg.circuit = scenario.overrides.apply(base.circuit);
    cfg.sigma_v = scenario.sigma_v;
    cfg.sigma_i = scenario.sigma_i;
    cfg.load_steps = false;
    const long pre_steps = whole_steps(scenario.pre_roll, cfg.control_period, "pre_roll");
    const long step_index = whole_steps(scenario.pre_roll + scenario.step_time, cfg.control_period, "step_time");
    const long total = whole_steps(scenario.pre_roll + scenario.horizon, cfg.control_period, "horizon");
    cfg.episode_steps = static_cast<int>(total);

    env::BuckEnv env(cfg);
    env::Observation obs = env.reset_to({cfg.v_ref / scenario.load_before, cfg.v_ref}, scenario.load_before, seed);

    const long slots = std::lround(cfg.control_period / env::kSimStep);
    const long pre_rows = pre_steps * slots;
    DutyFilter filter(env::kSimStep);
    double v_obs = cfg.v_ref + env.window().newest().v_err;

    EpisodeTrace trace;
    trace.reserve(static_cast<std::size_t>(total * slots));
    long row = 0;
    for (long s = 0; s < total; ++s) {
        if (s == step_index) env.set_load(scenario.load_after);
        const double action = policy(obs);
        const env::Transition tr = env.step(action);
        const auto& subs = env.substeps();
        for (std::size_t j = 0; j < subs.size(); ++j) {
            const auto& sub = subs[j];
            const bool last = j + 1 == subs.size();
            ++row;
            const double on_fraction = sub.on_time / env::kSimStep;
            const double filtered = filter.push(on_fraction);
            if (last) v_obs = tr.info.v_out_observed;
            trace.time.push_back(static_cast<double>(row - pre_rows) * env::kSimStep);
            trace.gate.push_back(sub.gate);
            trace.duty.push_back(cfg.variant == env::Variant::Pwm ? tr.info.applied : filtered);
            trace.i_L.push_back(sub.i_L);
            trace.v_out.push_back(sub.v_out);
            trace.v_obs.push_back(v_obs);
            trace.action.push_back(tr.action);
            trace.reward.push_back(last ? tr.reward : 0.0);
        }
        obs = tr.observation;
    }
    return trace;
}

EpisodeTrace run_scenario(const nn::Checkpoint& checkpoint, const Scenario& scenario, const env::EnvConfig& base,
                          std::uint64_t seed) {
    const env::Variant variant = env::parse_variant(checkpoint.variant);
    if (variant != base.variant)
        throw std::invalid_argument("checkpoint variant " + checkpoint.variant + " does not match environment variant " +
                                    env::to_string(base.variant));
    check_variant(checkpoint.model, variant);
    return run_scenario(greedy_policy(checkpoint.model), scenario, base, seed);
}

std::vector<int> parse_gate_pattern(std::string_view text) {
    std::vector<int> out;
    for (char ch : text) {
        if (ch == '0' || ch == '1') out.push_back(ch - '0');
        else if (ch != ',' && ch != ' ') throw std::invalid_argument("gate pattern may contain only 0 and 1");
    }
    if (out.empty()) throw std::invalid_argument("gate pattern is empty");
    return out;
}

EpisodeTrace simulate_open_loop(const sim::CircuitParams& params, const OpenLoopDrive& drive, double horizon,
                                const sim::CircuitState& initial) {
    params.validate();
    if (drive.duty.has_value() == !drive.pattern.empty())
        throw std::invalid_argument("simulate: give exactly one of a gate pattern or a duty");
    if (drive.duty && !(*drive.duty >= 0.0 && *drive.duty <= 1.0))
        throw std::invalid_argument("simulate: duty must lie in [0, 1]");
    for (int g : drive.pattern)
        if (g != 0 && g != 1) throw std::invalid_argument("simulate: gate pattern entries must be 0 or 1");
    const long rows = whole_steps(horizon, env::kSimStep, "horizon");
    if (rows <= 0) throw std::invalid_argument("simulate: horizon must be positive");
    const long slots = whole_steps(drive.pwm_period, env::kSimStep, "pwm_period");
    if (drive.duty && slots <= 0) throw std::invalid_argument("simulate: pwm_period must be positive");

    double on_slots = drive.duty ? *drive.duty * static_cast<double>(slots) : 0.0;
    if (std::abs(on_slots - std::round(on_slots)) < 1e-9) on_slots = std::round(on_slots);

    sim::CircuitState state = initial;
    EpisodeTrace t;
    t.reserve(static_cast<std::size_t>(rows));
    for (long k = 0; k < rows; ++k) {
        double high = 0.0;
        if (drive.duty) high = std::clamp(on_slots - static_cast<double>(k % slots), 0.0, 1.0);
        else high = drive.pattern[static_cast<std::size_t>(k) % drive.pattern.size()];
        if (high >= 1.0) {
            state = sim::step(state, true, env::kSimStep, params).state;
        } else if (high <= 0.0) {
            state = sim::step(state, false, env::kSimStep, params).state;
        } else {
            state = sim::step(state, true, high * env::kSimStep, params).state;
            state = sim::step(state, false, env::kSimStep - high * env::kSimStep, params).state;
        }
        const double v = sim::output_voltage(state, params);
        t.time.push_back(static_cast<double>(k + 1) * env::kSimStep);
        t.gate.push_back(high > 0.0 ? 1.0 : 0.0);
        t.duty.push_back(drive.duty ? *drive.duty : high);
        t.i_L.push_back(state.i_L);
        t.v_out.push_back(v);
        t.v_obs.push_back(v);
        t.action.push_back(drive.duty ? *drive.duty : high);
        t.reward.push_back(0.0);
    }
    return t;
}

DutyFilter::DutyFilter(double dt, double tau, double initial) : gain_(dt / tau), y_(initial) {
    if (!(dt > 0.0 && tau > 0.0 && dt <= tau)) throw std::invalid_argument("DutyFilter: need 0 < dt <= tau");
}

double DutyFilter::push(double u) {
    y_ += gain_ * (u - y_);
    return y_;
}

std::vector<double> effective_duty(const std::vector<double>& gate, double dt, double tau, double initial) {
    DutyFilter f(dt, tau, initial);
    std::vector<double> out;
    out.reserve(gate.size());
    for (double u : gate) out.push_back(f.push(u));
    return out;
}

MetricsOptions default_metrics_options(double v_ref, double step_time) {
    MetricsOptions o;
    o.v_ref = v_ref;
    o.band = 0.02 * v_ref;
    o.step_time = step_time;
    return o;
}

namespace {

std::optional<double> time_in_band(const EpisodeTrace& t, std::size_t first, double v_ref, double band,
                                   double step_time) {
    const std::size_t n = t.size();
    std::size_t last_out = n;
    for (std::size_t k = n; k-- > first;) {
        if (std::abs(t.v_out[k] - v_ref) > band) {
            last_out = k;
            break;
        }
    }
    if (last_out == n) return 0.0;
    if (last_out + 1 == n) return std::nullopt;
    return t.time[last_out + 1] - step_time;
}

}  // namespace

Metrics compute_metrics(const EpisodeTrace& t, const MetricsOptions& o) {
    const std::size_t n = t.size();
    if (n < 2 || t.gate.size() != n || t.v_out.size() != n)
        throw std::invalid_argument("compute_metrics: need at least two samples with time, gate and v_out");
    const double dt = (t.time.back() - t.time.front()) / static_cast<double>(n - 1);
    if (!(dt > 0.0)) throw std::invalid_argument("compute_metrics: time must increase");

    std::size_t first = 0;
    while (first < n && !(t.time[first] > o.step_time + 0.5 * dt)) ++first;
    if (first == n) throw std::invalid_argument("compute_metrics: no samples after the step");

    Metrics m;
    m.v_min = *std::min_element(t.v_out.begin() + first, t.v_out.end());
    m.v_max = *std::max_element(t.v_out.begin() + first, t.v_out.end());
    m.overshoot = std::max(0.0, m.v_max - o.v_ref);
    m.recovery_time = time_in_band(t, first, o.v_ref, o.band, o.step_time);
    m.settling_time = time_in_band(t, first, o.v_ref, 0.5 * o.band, o.step_time);

    auto window_start = [&](double window) {
        const auto count = static_cast<std::size_t>(std::max(1L, std::lround(window / dt)));
        return std::max(first, n - std::min(count, n));
    };
    const std::size_t r0 = window_start(o.ripple_window);
    const auto [lo, hi] = std::minmax_element(t.v_out.begin() + r0, t.v_out.end());
    m.ripple = *hi - *lo;

    const std::size_t e0 = window_start(o.error_window);
    double sum = 0.0;
    for (std::size_t k = e0; k < n; ++k) sum += std::abs(t.v_out[k] - o.v_ref);
    m.mean_abs_error = sum / static_cast<double>(n - e0);

    long edges = 0;
    for (std::size_t k = std::max<std::size_t>(first, 1); k < n; ++k)
        if (t.gate[k] > 0.5 && t.gate[k - 1] <= 0.5) ++edges;
    m.switching_rate = static_cast<double>(edges) / (t.time.back() - o.step_time);
    return m;
}

std::vector<SweepRow> sweep(const Policy& policy, const Scenario& scenario, const std::vector<Variation>& variations,
                            const env::EnvConfig& base, std::uint64_t seed) {
    std::vector<Variation> all;
    all.push_back({"nominal", {}});
    all.insert(all.end(), variations.begin(), variations.end());

    std::vector<SweepRow> rows;
    for (const auto& v : all) {
        SweepRow row;
        row.label = v.label;
        try {
            Scenario s = scenario;
            s.overrides = scenario.overrides.merged(v.overrides);
            row.trace = run_scenario(policy, s, base, seed);
            row.metrics = compute_metrics(row.trace, default_metrics_options(base.v_ref, s.step_time));
        } catch (const std::exception& e) {
            row.error = e.what();
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

// CSV -------------------------------------------------------------------------

namespace {

constexpr const char* kTraceHeader = "time_s,gate,duty,i_L_A,v_out_V,v_obs_V,action,reward";

std::string csv_field(std::string s) {
    std::replace(s.begin(), s.end(), ',', ';');
    std::replace(s.begin(), s.end(), '\n', ' ');
    return s;
}

std::string optional_time(const std::optional<double>& t) {
    return t ? format_number(*t) : std::string(kNotRecovered);
}

}  // namespace

void write_trace_csv(std::ostream& out, const EpisodeTrace& t) {
    out << kTraceHeader << '\n';
    for (std::size_t k = 0; k < t.size(); ++k) {
        out << format_number(t.time[k]) << ',' << format_number(t.gate[k]) << ',' << format_number(t.duty[k]) << ','
            << format_number(t.i_L[k]) << ',' << format_number(t.v_out[k]) << ',' << format_number(t.v_obs[k]) << ','
            << format_number(t.action[k]) << ',' << format_number(t.reward[k]) << '\n';
    }
}

EpisodeTrace read_trace_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("trace csv: empty input");
    const auto header = split(trim(line), ',');
    const std::vector<std::string> expected = split(kTraceHeader, ',');
    std::vector<int> column(expected.size(), -1);
    for (std::size_t c = 0; c < expected.size(); ++c) {
        const auto it = std::find(header.begin(), header.end(), expected[c]);
        if (it == header.end()) throw std::runtime_error("trace csv: missing column '" + expected[c] + "'");
        column[c] = static_cast<int>(it - header.begin());
    }

    EpisodeTrace t;
    std::vector<double>* cols[] = {&t.time, &t.gate, &t.duty, &t.i_L, &t.v_out, &t.v_obs, &t.action, &t.reward};
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        const auto fields = split(trim(line), ',');
        if (fields.size() != header.size())
            throw std::runtime_error("trace csv line " + std::to_string(line_no) + ": expected " +
                                     std::to_string(header.size()) + " fields");
        for (std::size_t c = 0; c < expected.size(); ++c) {
            const auto v = parse_number(fields[static_cast<std::size_t>(column[c])]);
            if (!v) throw std::runtime_error("trace csv line " + std::to_string(line_no) + ": bad number in " + expected[c]);
            cols[c]->push_back(*v);
        }
    }
    return t;
}

void write_metrics_csv(std::ostream& out, const std::vector<SweepRow>& rows) {
    out << "label,v_min_V,v_max_V,recovery_time_s,settling_time_s,overshoot_V,ripple_pp_V,switching_rate_Hz,"
           "mean_abs_err_V,error\n";
    for (const auto& r : rows) {
        out << csv_field(r.label) << ',';
        if (r.metrics) {
            const Metrics& m = *r.metrics;
            out << format_number(m.v_min) << ',' << format_number(m.v_max) << ',' << optional_time(m.recovery_time)
                << ',' << optional_time(m.settling_time) << ',' << format_number(m.overshoot) << ','
                << format_number(m.ripple) << ',' << format_number(m.switching_rate) << ','
                << format_number(m.mean_abs_error) << ',';
        } else {
            out << ",,,,,,,,";
        }
        out << csv_field(r.error) << '\n';
    }
}

void write_summary(std::ostream& out, const std::vector<SweepRow>& rows) {
    auto us = [](const std::optional<double>& t) {
        if (!t) return std::string(kNotRecovered);
        std::ostringstream s;
        s << std::fixed << std::setprecision(1) << *t * 1e6 << " us";
        return s.str();
    };
    out << std::left << std::setw(14) << "case" << std::setw(10) << "v_min" << std::setw(10) << "v_max"
        << std::setw(16) << "recovery" << std::setw(16) << "settling" << std::setw(12) << "ripple"
        << std::setw(12) << "sw_rate" << "mean|e|\n";
    for (const auto& r : rows) {
        out << std::left << std::setw(14) << r.label;
        if (!r.metrics) {
            out << "failed: " << r.error << '\n';
            continue;
        }
        const Metrics& m = *r.metrics;
        std::ostringstream line;
        line << std::fixed << std::setprecision(3) << std::left << std::setw(10) << m.v_min << std::setw(10)
             << m.v_max << std::setw(16) << us(m.recovery_time) << std::setw(16) << us(m.settling_time)
             << std::setw(12) << m.ripple << std::setprecision(0) << std::setw(12) << m.switching_rate
             << std::setprecision(4) << m.mean_abs_error;
        out << line.str() << '\n';
    }
}

}  // namespace dgc::harness
