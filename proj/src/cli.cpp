#include "dgc/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>

#include "dgc/config.hpp"
#include "dgc/harness.hpp"
#include "dgc/nn.hpp"
#include "dgc/ppo.hpp"
#include "dgc/text.hpp"

namespace dgc::cli {

namespace fs = std::filesystem;

namespace {

/// Usage or configuration problem, exit code 1.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct CommonOptions {
    std::string config_path;
    std::string variant;
    std::uint64_t seed = 0;
    bool seed_given = false;
    std::string out_dir;
    std::int64_t steps = 0;
    std::vector<std::string> assignments;
};

void add_common(CLI::App* cmd, CommonOptions& o, bool with_steps) {
    cmd->add_option("--config", o.config_path, "Configuration file");
    cmd->add_option("--variant", o.variant, "dgc or pwm");
    cmd->add_option_function<std::uint64_t>(
        "--seed", [&o](const std::uint64_t& s) { o.seed = s, o.seed_given = true; }, "Root seed");
    cmd->add_option("--out", o.out_dir, "Output directory");
    if (with_steps) cmd->add_option("--steps", o.steps, "Total training steps")->check(CLI::PositiveNumber);
    cmd->add_option("--set", o.assignments, "Override one key, section.key=value (repeatable)");
}

config::Overrides overrides_from(const CommonOptions& o, std::optional<env::Variant> variant) {
    config::Overrides f;
    try {
        if (!o.variant.empty()) f.variant = env::parse_variant(o.variant);
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
    if (variant) {
        if (f.variant && *f.variant != *variant)
            throw UsageError(std::string("--variant ") + o.variant + " conflicts with " + env::to_string(*variant));
        f.variant = variant;
    }
    if (o.seed_given) f.seed = o.seed;
    if (!o.out_dir.empty()) f.out_dir = o.out_dir;
    if (o.steps > 0) f.steps = o.steps;
    f.assignments = o.assignments;
    return f;
}

std::optional<std::string> config_path(const CommonOptions& o) {
    if (o.config_path.empty()) return std::nullopt;
    return o.config_path;
}

void write_text_file(const fs::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + path.string());
    f << text;
    if (!f) throw std::runtime_error("write failed: " + path.string());
}

template <class Fn>
void write_file(const fs::path& path, Fn&& fn) {
    std::ostringstream s;
    fn(s);
    write_text_file(path, s.str());
}

std::string hex(std::uint64_t x) {
    std::ostringstream s;
    s << std::hex << std::setw(16) << std::setfill('0') << x;
    return s.str();
}

// train -----------------------------------------------------------------------

int cmd_train(const std::string& positional_variant, const CommonOptions& opts, std::ostream& out, std::ostream& err) {
    std::optional<env::Variant> variant;
    if (!positional_variant.empty()) {
        try {
            variant = env::parse_variant(positional_variant);
        } catch (const std::invalid_argument& e) {
            throw UsageError(e.what());
        }
    }
    const config::RunConfig cfg = config::load(config_path(opts), overrides_from(opts, variant));
    const std::uint64_t hash = config::environment_hash(cfg);
    const std::string variant_name = env::to_string(cfg.variant);
    const std::string stem = variant_name + "-s" + std::to_string(cfg.seed);

    const fs::path dir(cfg.out_dir);
    fs::create_directories(dir);
    write_text_file(dir / "config.ini", config::to_string(cfg));

    const env::EnvConfig env_cfg = cfg.env;
    const auto make_env = [env_cfg] { return env::BuckEnv(env_cfg); };
    std::vector<ppo::TrainRecord> log;
    auto on_update = [&](const ppo::TrainRecord& r, const nn::ActorCritic& model) {
        log.push_back(r);
        out << "update=" << r.update << " steps=" << r.steps << " mean_reward=" << format_number(r.mean_episode_reward)
            << " policy_loss=" << format_number(r.policy_loss) << " value_loss=" << format_number(r.value_loss)
            << " entropy=" << format_number(r.entropy) << " clip_fraction=" << format_number(r.clip_fraction)
            << " approx_kl=" << format_number(r.approx_kl)
            << " explained_variance=" << format_number(r.explained_variance) << '\n';
        if (cfg.checkpoint_every > 0 && r.update % cfg.checkpoint_every == 0)
            nn::save_checkpoint((dir / (stem + "-u" + std::to_string(r.update) + ".ckpt")).string(), model,
                                variant_name, hash);
    };

    try {
        const auto result = ppo::train(make_env, cfg.ppo, cfg.seed, on_update);
        const fs::path ckpt = dir / (stem + ".ckpt");
        nn::save_checkpoint(ckpt.string(), result.model, variant_name, hash);
        write_file(dir / "train_log.csv", [&](std::ostream& s) { ppo::write_train_log_csv(s, result.log); });
        out << "checkpoint " << ckpt.string() << '\n';
    } catch (const ppo::TrainingAborted& e) {
        log.push_back(e.record());
        write_file(dir / "train_log.csv", [&](std::ostream& s) { ppo::write_train_log_csv(s, log); });
        err << "training aborted: " << e.what() << '\n';
        return kExitRuntime;
    }
    return kExitOk;
}

// eval / sweep ----------------------------------------------------------------

struct EvalTarget {
    config::RunConfig cfg;
    harness::ScenarioSpec spec;
};

EvalTarget resolve_target(const nn::Checkpoint& ckpt, const std::string& scenario_arg, const CommonOptions& opts) {
    env::Variant variant;
    try {
        variant = env::parse_variant(ckpt.variant);
    } catch (const std::invalid_argument& e) {
        throw std::runtime_error(std::string("checkpoint: ") + e.what());
    }
    config::Overrides flags = overrides_from(opts, variant);

    std::vector<config::Entry> entries;
    if (auto path = config_path(opts)) entries = config::parse_file(*path);
    std::string name = scenario_arg;
    const bool known = harness::find_builtin(scenario_arg) != nullptr ||
                       std::any_of(entries.begin(), entries.end(),
                                   [&](const config::Entry& e) { return e.section == "scenario." + scenario_arg; });
    if (!known && fs::is_regular_file(scenario_arg)) {
        const auto extra = config::parse_file(scenario_arg);
        const auto first = std::find_if(extra.begin(), extra.end(),
                                        [](const config::Entry& e) { return e.section.rfind("scenario.", 0) == 0; });
        if (first == extra.end()) throw UsageError(scenario_arg + ": no [scenario.NAME] section");
        name = first->section.substr(std::string("scenario.").size());
        entries.insert(entries.end(), extra.begin(), extra.end());
    }

    EvalTarget t{config::resolve(entries, flags), {}};
    const harness::ScenarioSpec* spec = config::find_scenario(t.cfg, name);
    if (!spec) {
        std::string names;
        for (const auto& n : config::scenario_names(t.cfg)) names += (names.empty() ? "" : ", ") + n;
        throw UsageError("unknown scenario '" + scenario_arg + "'; available: " + names);
    }
    t.spec = *spec;
    if (t.spec.scenario.variant && *t.spec.scenario.variant != variant)
        throw UsageError("scenario '" + name + "' requires variant " + env::to_string(*t.spec.scenario.variant) +
                         " but the checkpoint is " + ckpt.variant);
    return t;
}

int run_eval(const std::string& checkpoint_path, const std::string& scenario_arg, bool force_sweep,
             const CommonOptions& opts, std::ostream& out, std::ostream& err) {
    nn::Checkpoint ckpt;
    try {
        ckpt = nn::load_checkpoint(checkpoint_path);
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitRuntime;
    }
    EvalTarget t = resolve_target(ckpt, scenario_arg, opts);
    try {
        harness::check_variant(ckpt.model, t.cfg.variant);
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
    if (ckpt.config_hash != config::environment_hash(t.cfg))
        err << "warning: checkpoint was trained with environment config " << hex(ckpt.config_hash)
            << ", evaluating with " << hex(config::environment_hash(t.cfg)) << '\n';

    std::vector<harness::Variation> variations = t.spec.variations;
    if (force_sweep && variations.empty()) variations = harness::parameter_variations();

    const auto policy = harness::greedy_policy(ckpt.model);
    const auto rows = harness::sweep(policy, t.spec.scenario, variations, t.cfg.env, t.cfg.seed);

    const std::string id = fs::path(checkpoint_path).stem().string();
    const std::string scenario = sanitize_label(t.spec.scenario.name);
    const fs::path dir(t.cfg.out_dir);
    fs::create_directories(dir);
    config::RunConfig archived = t.cfg;
    std::erase_if(archived.scenarios, [&](const auto& s) { return s.scenario.name == t.spec.scenario.name; });
    archived.scenarios.push_back(t.spec);
    write_text_file(dir / (scenario + "__" + id + ".config.ini"), config::to_string(archived));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (!rows[i].metrics) continue;
        const std::string name = i == 0 ? scenario : scenario + "." + sanitize_label(rows[i].label);
        write_file(dir / (name + "__" + id + ".csv"), [&](std::ostream& s) { harness::write_trace_csv(s, rows[i].trace); });
    }
    write_file(dir / (scenario + "__" + id + ".metrics.csv"),
               [&](std::ostream& s) { harness::write_metrics_csv(s, rows); });

    out << "scenario " << t.spec.scenario.name << " (" << format_number(t.spec.scenario.load_before) << " Ohm -> "
        << format_number(t.spec.scenario.load_after) << " Ohm, sigma_v " << format_number(t.spec.scenario.sigma_v)
        << " V, sigma_i " << format_number(t.spec.scenario.sigma_i) << " A), checkpoint " << id << '\n';
    harness::write_summary(out, rows);
    const bool failed = std::any_of(rows.begin(), rows.end(), [](const auto& r) { return !r.metrics; });
    return failed ? kExitRuntime : kExitOk;
}

// simulate --------------------------------------------------------------------

struct SimulateOptions {
    std::string pattern;
    std::optional<double> duty;
    std::string load;
    double horizon = 5e-3;
    double init_current = 0.0;
    double init_voltage = 0.0;
};

int cmd_simulate(const SimulateOptions& so, const CommonOptions& opts, std::ostream& out) {
    const config::RunConfig cfg = config::load(config_path(opts), overrides_from(opts, std::nullopt));
    harness::OpenLoopDrive drive;
    drive.pwm_period = cfg.env.pwm_period;
    try {
        if (!so.pattern.empty()) drive.pattern = harness::parse_gate_pattern(so.pattern);
        drive.duty = so.duty;
        if (so.pattern.empty() == !drive.duty.has_value())
            throw std::invalid_argument("give exactly one of --pattern or --duty");
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }

    sim::CircuitParams params = cfg.env.circuit;
    if (!so.load.empty()) {
        if (so.load == "open" || so.load == "inf") {
            params.R = sim::kOpenLoad;
        } else {
            const auto r = parse_number(so.load);
            if (!r) throw UsageError("--load expects a resistance or 'open'");
            params.R = *r;
        }
    }
    harness::EpisodeTrace trace;
    try {
        params.validate();
        trace = harness::simulate_open_loop(params, drive, so.horizon, {so.init_current, so.init_voltage});
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }

    const fs::path dir(cfg.out_dir);
    fs::create_directories(dir);
    write_text_file(dir / "simulate.config.ini", config::to_string(cfg));
    write_file(dir / "simulate.csv", [&](std::ostream& s) { harness::write_trace_csv(s, trace); });

    const std::size_t window = std::min<std::size_t>(trace.size(), 1000);
    double sum = 0.0;
    for (std::size_t k = trace.size() - window; k < trace.size(); ++k) sum += trace.v_out[k];
    out << "rows=" << trace.size() << " final_i_L=" << format_number(trace.i_L.back())
        << " final_v_out=" << format_number(trace.v_out.back())
        << " mean_v_out_last_1ms=" << format_number(sum / static_cast<double>(window)) << '\n';
    return kExitOk;
}

}  // namespace

std::string sanitize_label(const std::string& label) {
    std::string s = label;
    for (char& c : s)
        if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '_' || c == '-')) c = '_';
    return s;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Buck converter direct gate control: training, evaluation and simulation", "dgc"};
    app.require_subcommand(1);

    CommonOptions train_opts, eval_opts, sweep_opts, sim_opts;
    std::string train_variant, eval_ckpt, eval_scenario, sweep_ckpt, sweep_scenario = "loadstep-nominal";
    SimulateOptions so;

    auto* train = app.add_subcommand("train", "Train a policy with PPO");
    train->add_option("VARIANT", train_variant, "dgc or pwm (same as --variant)");
    add_common(train, train_opts, true);

    auto* eval = app.add_subcommand("eval", "Run a scenario on a checkpoint");
    eval->add_option("checkpoint", eval_ckpt, "Checkpoint file")->required();
    eval->add_option("scenario", eval_scenario, "Scenario name or file")->required();
    add_common(eval, eval_opts, false);

    auto* sweep = app.add_subcommand("sweep", "Run a scenario under parameter variations");
    sweep->add_option("checkpoint", sweep_ckpt, "Checkpoint file")->required();
    sweep->add_option("scenario", sweep_scenario, "Base scenario name or file");
    add_common(sweep, sweep_opts, false);

    auto* simulate = app.add_subcommand("simulate", "Open-loop simulation");
    simulate->add_option("--pattern", so.pattern, "Repeating 1 us gate pattern, e.g. 110");
    simulate->add_option("--duty", so.duty, "Fixed duty in [0, 1]");
    simulate->add_option("--load", so.load, "Load resistance in Ohm or 'open'");
    simulate->add_option("--horizon", so.horizon, "Duration [s]");
    simulate->add_option("--init-current", so.init_current, "Initial inductor current [A]");
    simulate->add_option("--init-voltage", so.init_voltage, "Initial capacitor voltage [V]");
    add_common(simulate, sim_opts, false);

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (*train) return cmd_train(train_variant, train_opts, out, err);
        if (*eval) return run_eval(eval_ckpt, eval_scenario, false, eval_opts, out, err);
        if (*sweep) return run_eval(sweep_ckpt, sweep_scenario, true, sweep_opts, out, err);
        if (*simulate) return cmd_simulate(so, sim_opts, out);
    } catch (const UsageError& e) {
        err << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const config::ConfigError& e) {
        err << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitRuntime;
    }
    return kExitUsage;
}

}  // namespace dgc::cli
