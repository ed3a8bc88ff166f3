// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
// exits non-zero if any fails. Artifacts go to ./acceptance-out.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "dgc/config.hpp"
#include "dgc/converter.hpp"
#include "dgc/env.hpp"
#include "dgc/harness.hpp"
#include "dgc/nn.hpp"
#include "dgc/ppo.hpp"
#include "oracles.hpp"

using namespace dgc;
namespace fs = std::filesystem;

namespace {

int failures = 0;

void report(bool pass, const std::string& name, const std::string& detail) {
    std::cout << (pass ? "PASS " : "FAIL ") << name << ": " << detail << std::endl;
    if (!pass) ++failures;
}

std::string fmt(const char* f, double x) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, x);
    return buf;
}

std::string us(const std::optional<double>& t) { return t ? fmt("%.1f us", *t * 1e6) : "not recovered"; }

sim::CircuitParams random_params(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> f(0.5, 1.5);
    sim::CircuitParams p = sim::nominal_params();
    p.E *= f(rng);
    p.L *= f(rng);
    p.R_L *= f(rng);
    p.C *= f(rng);
    p.R_C *= f(rng);
    p.R *= f(rng);
    return p;
}

void simulator_oracle() {
    const auto start = std::chrono::steady_clock::now();
    std::mt19937_64 rng(2024);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    double worst_i = 0.0, worst_v = 0.0;
    for (int trial = 0; trial < 200; ++trial) {
        const sim::CircuitParams p = random_params(rng);
        sim::CircuitState s{10.0 * unit(rng), 20.0 * unit(rng)};
        oracle::State o{s.i_L, s.v_C};
        const oracle::Circuit c{p.E, p.L, p.R_L, p.C, p.R_C, p.R};
        for (int k = 0; k < 100; ++k) {
            const bool gate = unit(rng) < 0.5;
            s = sim::step(s, gate, 1e-6, p).state;
            o = oracle::euler(o, gate, 1e-6, c);
        }
        worst_i = std::max(worst_i, std::abs(s.i_L - o.i));
        worst_v = std::max(worst_v, std::abs(s.v_C - o.v_C));
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    report(worst_i < 1e-3 && worst_v < 1e-3 && secs < 60.0, "simulator-oracle",
           "200 sequences, max |di_L| " + fmt("%.2e A", worst_i) + ", max |dv_C| " + fmt("%.2e V", worst_v) + ", " +
               fmt("%.1f s", secs));
}

void energy_balance() {
    std::mt19937_64 rng(99);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    double worst = 0.0;
    for (int trial = 0; trial < 10; ++trial) {
        const sim::CircuitParams p = random_params(rng);
        const double duty = 0.2 + 0.7 * unit(rng);
        sim::CircuitState s{};
        const double e0 = sim::stored_energy(s, p);
        double source = 0.0, lost = 0.0;
        for (int k = 0; k < 1000; ++k) {
            const auto r = sim::step(s, unit(rng) < duty, 1e-6, p);
            s = r.state;
            source += r.telemetry.source_energy;
            lost += r.telemetry.dissipated_energy;
        }
        worst = std::max(worst, std::abs(source - (sim::stored_energy(s, p) - e0 + lost)) / source);
    }
    report(worst < 1e-3, "energy-balance", "10 runs of 1 ms, max relative error " + fmt("%.2e", worst));
}

void open_loop_duty() {
    const sim::CircuitParams p = sim::nominal_params();
    const double duty = sim::dc_duty_for_target(p, 15.0);
    const auto t = harness::simulate_open_loop(p, {{}, duty, 10e-6}, 5e-3);
    double mean = 0.0;
    for (std::size_t k = t.size() - 1000; k < t.size(); ++k) mean += t.v_out[k] / 1000.0;
    report(std::abs(duty - 0.7505) < 5e-5 && std::abs(mean - 15.0) <= 0.15, "open-loop-duty",
           "duty " + fmt("%.4f", duty) + ", mean v_out over final 1 ms " + fmt("%.3f V", mean));
}

void reward_values() {
    const env::RewardParams p;  // alpha 0.2, beta 0.004, zeta 0.1, delta 4, epsilon 0.1
    struct Case {
        double e, a, prev, scale, expect;
    };
    const Case cases[] = {
        {0.0, 0, 0, 1, 0.2 / 0.1 - 0.004},
        {0.5, 1, 1, 1, 0.2 / 0.6 - 0.05 - 0.004},
        {-0.5, 1, 0, 1, 0.2 / 0.6 - 0.05 - 0.004 - 4.0},
        {2.0, 0.3, 0.1, 10, 10 * (0.2 / 2.1 - 0.2 - 0.004 - 0.8)},
    };
    double worst = 0.0;
    for (const auto& c : cases) worst = std::max(worst, std::abs(env::reward(c.e, c.a, c.prev, p, c.scale) - c.expect));
    const bool pwm_scale = env::EnvConfig::defaults(env::Variant::Pwm).reward_scale == 10.0;
    report(worst < 1e-12 && pwm_scale && p.delta == 4.0, "reward-values",
           "max deviation from hand values " + fmt("%.1e", worst) + ", PWM scale x10");
}

void gradient_suite() {
    Rng rng(31337);
    std::uniform_int_distribution<int> dim(1, 10), width(1, 16), depth(1, 3), batch_size(1, 8);
    std::normal_distribution<double> n(0.0, 1.0), w(0.0, 0.5);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const auto kind = trial % 2 ? nn::ActionKind::Gaussian : nn::ActionKind::Categorical;
        std::vector<int> hidden(depth(rng));
        for (int& h : hidden) h = width(rng);
        const int obs_dim = dim(rng);
        nn::ActorCritic model = nn::ActorCritic::create(kind, obs_dim, hidden, rng, -0.5);
        nn::Vector theta = model.flat_parameters();
        for (Eigen::Index j = 0; j < theta.size(); ++j) theta(j) = w(rng);
        model.set_flat_parameters(theta);

        const int batch = batch_size(rng);
        const nn::Matrix obs = nn::Matrix::NullaryExpr(obs_dim, batch, [&] { return n(rng); });
        nn::Vector actions(batch), cl(batch), ce(batch), cv(batch);
        for (int b = 0; b < batch; ++b) {
            actions(b) = kind == nn::ActionKind::Categorical ? double(rng() % 2) : n(rng);
            cl(b) = n(rng);
            ce(b) = n(rng);
            cv(b) = n(rng);
        }
        const auto ev = model.evaluate(obs, actions);
        const nn::Vector g = model.gradient(ev, actions, cl, ce, cv);
        nn::ActorCritic probe = model;
        const auto f = [&](const std::vector<double>& t) {
            probe.set_flat_parameters(Eigen::Map<const nn::Vector>(t.data(), static_cast<Eigen::Index>(t.size())));
            const auto e = probe.evaluate(obs, actions);
            return cl.dot(e.log_prob) + ce.dot(e.entropy) + cv.dot(e.value);
        };
        const auto numeric = oracle::numeric_gradient(f, {theta.data(), theta.data() + theta.size()}, 1e-6);
        worst = std::max(worst, oracle::relative_error({g.data(), g.data() + g.size()}, numeric));
    }

    double worst_gae = 0.0;
    int buffers = 0;
    std::bernoulli_distribution end(0.25);
    const auto check = [&](const std::vector<double>& r, const std::vector<double>& v, const std::vector<int>& done,
                           double boot) {
        std::vector<std::uint8_t> d8(done.begin(), done.end());
        const auto len = static_cast<Eigen::Index>(r.size());
        const auto got = ppo::compute_gae(Eigen::Map<const nn::Vector>(r.data(), len),
                                          Eigen::Map<const nn::Vector>(v.data(), len), d8, 0.999, 0.99, boot);
        const auto expect = oracle::gae_brute_force(r, v, done, 0.999, 0.99, boot);
        for (Eigen::Index t = 0; t < len; ++t)
            worst_gae = std::max(worst_gae, std::abs(got.advantages(t) - expect[t]) / (1.0 + std::abs(expect[t])));
        ++buffers;
    };
    for (int len = 1; len <= 32; ++len) {
        std::vector<double> r(len), v(len);
        std::vector<int> done(len);
        // Every done mask for short buffers, random masks beyond.
        const long masks = len <= 10 ? (1L << len) : 64;
        for (long m = 0; m < masks; ++m) {
            for (int t = 0; t < len; ++t) {
                r[t] = n(rng);
                v[t] = n(rng);
                done[t] = len <= 10 ? int((m >> t) & 1) : int(end(rng));
            }
            check(r, v, done, n(rng));
        }
    }
    report(worst < 1e-4 && worst_gae < 1e-12, "gradient-suite",
           "100 configurations, max relative error " + fmt("%.2e", worst) + "; GAE over " + std::to_string(buffers) +
               " buffers, max deviation " + fmt("%.1e", worst_gae));
}

// Training-based criteria -------------------------------------------------------

struct Trained {
    std::uint64_t seed;
    config::RunConfig cfg;
    nn::ActorCritic model;
    std::string checkpoint_text;
};

Trained train_variant(env::Variant variant, std::uint64_t seed) {
    Trained t{seed, config::RunConfig::defaults(variant), {}, {}};
    t.cfg.seed = seed;
    const env::EnvConfig env_cfg = t.cfg.env;
    t.model = ppo::train([env_cfg] { return env::BuckEnv(env_cfg); }, t.cfg.ppo, seed).model;
    std::ostringstream s;
    nn::save_checkpoint(s, t.model, env::to_string(variant), config::environment_hash(t.cfg));
    t.checkpoint_text = s.str();
    return t;
}

harness::Metrics evaluate(const Trained& t, const harness::Scenario& scenario, harness::EpisodeTrace* trace = nullptr) {
    const auto tr = harness::run_scenario(harness::greedy_policy(t.model), scenario, t.cfg.env, 0);
    if (trace) *trace = tr;
    return harness::compute_metrics(tr, harness::default_metrics_options(t.cfg.env.v_ref, scenario.step_time));
}

std::string trace_text(const harness::EpisodeTrace& t) {
    std::ostringstream s;
    harness::write_trace_csv(s, t);
    return s.str();
}

void save(const fs::path& path, const std::string& text) { std::ofstream(path, std::ios::binary) << text; }

}  // namespace

int main() {
    const fs::path out = "acceptance-out";
    fs::create_directories(out);

    simulator_oracle();
    energy_balance();
    open_loop_duty();
    reward_values();
    gradient_suite();

    const harness::Scenario nominal = harness::find_builtin("loadstep-nominal")->scenario;

    // DGC training gate: 3 seeds, at least 2 pass.
    std::vector<Trained> dgc;
    std::optional<std::size_t> chosen;
    int passed = 0;
    std::string detail;
    for (std::uint64_t seed : {1, 2, 3}) {
        const auto start = std::chrono::steady_clock::now();
        dgc.push_back(train_variant(env::Variant::Dgc, seed));
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        harness::EpisodeTrace trace;
        const auto m = evaluate(dgc.back(), nominal, &trace);
        save(out / ("dgc-s" + std::to_string(seed) + ".ckpt"), dgc.back().checkpoint_text);
        save(out / ("loadstep-nominal__dgc-s" + std::to_string(seed) + ".csv"), trace_text(trace));
        const bool ok = m.recovery_time && *m.recovery_time <= 0.5e-3 && m.v_min >= 13.0 && m.mean_abs_error < 0.3;
        if (ok) {
            ++passed;
            if (!chosen) chosen = dgc.size() - 1;
        }
        std::cout << "  dgc seed " << seed << ": recovery " << us(m.recovery_time) << ", v_min " << fmt("%.3f V", m.v_min)
                  << ", mean |v_err| " << fmt("%.3f V", m.mean_abs_error) << ", trained in " << fmt("%.0f s", secs)
                  << (ok ? "" : "  (fails)") << std::endl;
        detail += (detail.empty() ? "" : ", ") + std::string("s") + std::to_string(seed) + " " + us(m.recovery_time) +
                  " / " + fmt("%.2f V", m.v_min);
    }
    report(passed >= 2, "dgc-training-gate", std::to_string(passed) + "/3 seeds pass (" + detail + ")");

    // Robustness: the same checkpoint under parameter variations and sensor noise.
    if (chosen) {
        const Trained& t = dgc[*chosen];
        bool all = true;
        std::string rob;
        std::vector<std::pair<std::string, harness::Scenario>> cases;
        for (const auto& v : harness::parameter_variations()) {
            harness::Scenario s = nominal;
            s.overrides = s.overrides.merged(v.overrides);
            cases.emplace_back(v.label, s);
        }
        cases.emplace_back("noise", harness::find_builtin("noise")->scenario);
        for (const auto& [label, s] : cases) {
            const auto m = evaluate(t, s);
            const bool ok = m.recovery_time && *m.recovery_time <= 1e-3;
            all = all && ok;
            rob += (rob.empty() ? "" : ", ") + label + " " + us(m.recovery_time);
        }
        report(all, "robustness", "checkpoint dgc-s" + std::to_string(t.seed) + ": " + rob);
    } else {
        report(false, "robustness", "no DGC seed passed the training gate");
    }

    // Baseline comparison: DGC against the best of three PWM seeds.
    {
        const Trained& d = dgc[chosen.value_or(0)];
        const auto md = evaluate(d, nominal);
        std::optional<double> best;
        std::string pwm_detail;
        for (std::uint64_t seed : {1, 2, 3}) {
            const Trained pwm = train_variant(env::Variant::Pwm, seed);
            const std::string stem = "pwm-s" + std::to_string(seed);
            save(out / (stem + ".ckpt"), pwm.checkpoint_text);
            harness::EpisodeTrace trace;
            const auto mp = evaluate(pwm, nominal, &trace);
            save(out / ("loadstep-nominal__" + stem + ".csv"), trace_text(trace));
            std::cout << "  pwm seed " << seed << ": recovery " << us(mp.recovery_time) << ", v_min "
                      << fmt("%.3f V", mp.v_min) << std::endl;
            if (mp.recovery_time && (!best || *mp.recovery_time < *best)) best = mp.recovery_time;
            pwm_detail += (pwm_detail.empty() ? "" : ", ") + std::string("s") + std::to_string(seed) + " " +
                          us(mp.recovery_time);
        }
        const bool ok = md.recovery_time && (!best || *md.recovery_time <= *best);
        report(ok, "pwm-baseline",
               "DGC (seed " + std::to_string(d.seed) + ") recovery " + us(md.recovery_time) + " vs best PWM " +
                   us(best) + " (" + pwm_detail + ")");
    }

    // Determinism: retrain and re-evaluate seed 1.
    {
        const Trained again = train_variant(env::Variant::Dgc, 1);
        harness::EpisodeTrace a, b;
        evaluate(dgc[0], harness::find_builtin("noise")->scenario, &a);
        evaluate(again, harness::find_builtin("noise")->scenario, &b);
        const bool same_ckpt = again.checkpoint_text == dgc[0].checkpoint_text;
        const bool same_trace = trace_text(a) == trace_text(b);
        report(same_ckpt && same_trace, "determinism",
               std::string("checkpoint ") + (same_ckpt ? "identical" : "differs") + ", noisy trace " +
                   (same_trace ? "identical" : "differs"));
    }

    std::cout << (failures == 0 ? "all criteria pass" : std::to_string(failures) + " criteria failed") << std::endl;
    return failures == 0 ? 0 : 1;
}
