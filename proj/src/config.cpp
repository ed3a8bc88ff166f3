#include "dgc/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <istream>
#include <ostream>
#include <sstream>

#include "dgc/text.hpp"

namespace dgc::config {

ConfigError::ConfigError(const std::string& source, int line, const std::string& message)
    : std::runtime_error(line > 0 ? source + ":" + std::to_string(line) + ": " + message
                                  : source + ": " + message),
      line_(line) {}

RunConfig RunConfig::defaults(env::Variant variant) {
    RunConfig cfg;
    cfg.variant = variant;
    cfg.env = env::EnvConfig::defaults(variant);
    cfg.ppo = ppo::PpoConfig::defaults(variant);
    return cfg;
}

void RunConfig::validate() const {
    if (env.variant != variant) throw std::invalid_argument("RunConfig: env variant differs from run variant");
    if (checkpoint_every < 0) throw std::invalid_argument("RunConfig: checkpoint_every must be non-negative");
    if (out_dir.empty()) throw std::invalid_argument("RunConfig: out must not be empty");
    env.validate();
    ppo.validate();
    for (const auto& s : scenarios) {
        // Scenarios pinned to the other variant are checked against the checkpoint at run time.
        if (s.scenario.variant && *s.scenario.variant != variant) continue;
        s.scenario.validate(env);
        for (const auto& v : s.variations) s.scenario.overrides.merged(v.overrides).apply(env.circuit);
    }
}

// Parsing ---------------------------------------------------------------------

std::vector<Entry> parse(std::istream& in, const std::string& source) {
    std::vector<Entry> out;
    std::string section;
    std::string raw;
    int line_no = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        std::string_view line = trim(raw);
        if (line.empty() || line.front() == '#' || line.front() == ';') continue;
        // Inline comments start at a '#' preceded by whitespace.
        for (std::size_t k = 1; k < line.size(); ++k) {
            if (line[k] == '#' && (line[k - 1] == ' ' || line[k - 1] == '\t')) {
                line = trim(line.substr(0, k));
                break;
            }
        }
        if (line.front() == '[') {
            if (line.back() != ']') throw ConfigError(source, line_no, "unterminated section header");
            section = std::string(trim(line.substr(1, line.size() - 2)));
            if (section.empty()) throw ConfigError(source, line_no, "empty section name");
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) throw ConfigError(source, line_no, "expected 'key = value'");
        Entry e;
        e.section = section;
        e.key = std::string(trim(line.substr(0, eq)));
        e.value = std::string(trim(line.substr(eq + 1)));
        e.source = source;
        e.line = line_no;
        if (e.key.empty()) throw ConfigError(source, line_no, "missing key");
        if (section.empty()) throw ConfigError(source, line_no, "key '" + e.key + "' outside any section");
        out.push_back(std::move(e));
    }
    return out;
}

std::vector<Entry> parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError(path, 0, "cannot open config file");
    return parse(in, path);
}

Entry parse_assignment(const std::string& text) {
    const auto eq = text.find('=');
    const std::string lhs = std::string(trim(std::string_view(text).substr(0, eq)));
    const auto dot = lhs.rfind('.');
    if (eq == std::string::npos || dot == std::string::npos || dot == 0 || dot + 1 == lhs.size())
        throw ConfigError("--set", 0, "expected section.key=value, got '" + text + "'");
    Entry e;
    e.section = lhs.substr(0, dot);
    e.key = lhs.substr(dot + 1);
    e.value = std::string(trim(std::string_view(text).substr(eq + 1)));
    e.source = "--set " + text;
    return e;
}

// Field table -----------------------------------------------------------------

namespace {

double to_double(const std::string& v) {
    const auto x = parse_number(v);
    if (!x) throw std::invalid_argument("expected a number, got '" + v + "'");
    return *x;
}

template <class T>
T to_integer(const std::string& v) {
    T x{};
    const auto res = std::from_chars(v.data(), v.data() + v.size(), x);
    if (res.ec != std::errc() || res.ptr != v.data() + v.size())
        throw std::invalid_argument("expected an integer, got '" + v + "'");
    return x;
}

bool to_bool(const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw std::invalid_argument("expected true or false, got '" + v + "'");
}

std::vector<int> to_int_list(const std::string& v) {
    std::vector<int> out;
    for (const auto& item : split(v, ',')) out.push_back(to_integer<int>(std::string(trim(item))));
    return out;
}

std::string from_bool(bool b) { return b ? "true" : "false"; }

std::string from_int_list(const std::vector<int>& xs) {
    std::string s;
    for (std::size_t i = 0; i < xs.size(); ++i) s += (i ? "," : "") + std::to_string(xs[i]);
    return s;
}

struct Field {
    std::string section;
    std::string key;
    std::function<void(RunConfig&, const std::string&)> set;
    std::function<std::string(const RunConfig&)> get;
};

template <class Access>
Field real(std::string section, std::string key, Access access) {
    return {std::move(section), std::move(key),
            [access](RunConfig& c, const std::string& v) { access(c) = to_double(v); },
            [access](const RunConfig& c) { return format_number(access(c)); }};
}

template <class T, class Access>
Field integer(std::string section, std::string key, Access access) {
    return {std::move(section), std::move(key),
            [access](RunConfig& c, const std::string& v) { access(c) = to_integer<T>(v); },
            [access](const RunConfig& c) { return std::to_string(access(c)); }};
}

template <class Access>
Field boolean(std::string section, std::string key, Access access) {
    return {std::move(section), std::move(key),
            [access](RunConfig& c, const std::string& v) { access(c) = to_bool(v); },
            [access](const RunConfig& c) { return from_bool(access(c)); }};
}

const std::vector<Field>& fields() {
    static const std::vector<Field> table = [] {
        std::vector<Field> f;
        f.push_back({"run", "variant", [](RunConfig&, const std::string& v) { env::parse_variant(v); },
                     [](const RunConfig& c) { return std::string(env::to_string(c.variant)); }});
        f.push_back(integer<std::uint64_t>("run", "seed", [](auto& c) -> auto& { return c.seed; }));
        f.push_back({"run", "out", [](RunConfig& c, const std::string& v) { c.out_dir = v; },
                     [](const RunConfig& c) { return c.out_dir; }});
        f.push_back(integer<int>("run", "checkpoint_every", [](auto& c) -> auto& { return c.checkpoint_every; }));

        f.push_back(real("circuit", "E", [](auto& c) -> auto& { return c.env.circuit.E; }));
        f.push_back(real("circuit", "L", [](auto& c) -> auto& { return c.env.circuit.L; }));
        f.push_back(real("circuit", "R_L", [](auto& c) -> auto& { return c.env.circuit.R_L; }));
        f.push_back(real("circuit", "C", [](auto& c) -> auto& { return c.env.circuit.C; }));
        f.push_back(real("circuit", "R_C", [](auto& c) -> auto& { return c.env.circuit.R_C; }));
        f.push_back(real("circuit", "R", [](auto& c) -> auto& { return c.env.circuit.R; }));

        f.push_back(real("env", "control_period", [](auto& c) -> auto& { return c.env.control_period; }));
        f.push_back(real("env", "pwm_period", [](auto& c) -> auto& { return c.env.pwm_period; }));
        f.push_back(integer<int>("env", "episode_steps", [](auto& c) -> auto& { return c.env.episode_steps; }));
        f.push_back(real("env", "v_ref", [](auto& c) -> auto& { return c.env.v_ref; }));
        f.push_back(real("env", "init_current_min", [](auto& c) -> auto& { return c.env.init_current.lo; }));
        f.push_back(real("env", "init_current_max", [](auto& c) -> auto& { return c.env.init_current.hi; }));
        f.push_back(real("env", "init_voltage_min", [](auto& c) -> auto& { return c.env.init_voltage.lo; }));
        f.push_back(real("env", "init_voltage_max", [](auto& c) -> auto& { return c.env.init_voltage.hi; }));
        f.push_back(real("env", "load_min", [](auto& c) -> auto& { return c.env.load.lo; }));
        f.push_back(real("env", "load_max", [](auto& c) -> auto& { return c.env.load.hi; }));
        f.push_back(real("env", "sigma_v", [](auto& c) -> auto& { return c.env.sigma_v; }));
        f.push_back(real("env", "sigma_i", [](auto& c) -> auto& { return c.env.sigma_i; }));
        f.push_back(real("env", "reward_scale", [](auto& c) -> auto& { return c.env.reward_scale; }));
        f.push_back(boolean("env", "load_steps", [](auto& c) -> auto& { return c.env.load_steps; }));
        f.push_back(real("env", "obs_voltage_scale", [](auto& c) -> auto& { return c.env.obs_voltage_scale; }));
        f.push_back(real("env", "obs_current_scale", [](auto& c) -> auto& { return c.env.obs_current_scale; }));

        f.push_back(real("reward", "alpha", [](auto& c) -> auto& { return c.env.reward.alpha; }));
        f.push_back(real("reward", "beta", [](auto& c) -> auto& { return c.env.reward.beta; }));
        f.push_back(real("reward", "zeta", [](auto& c) -> auto& { return c.env.reward.zeta; }));
        f.push_back(real("reward", "delta", [](auto& c) -> auto& { return c.env.reward.delta; }));
        f.push_back(real("reward", "epsilon", [](auto& c) -> auto& { return c.env.reward.epsilon; }));

        f.push_back(real("ppo", "gamma", [](auto& c) -> auto& { return c.ppo.gamma; }));
        f.push_back(real("ppo", "clip_range", [](auto& c) -> auto& { return c.ppo.clip_range; }));
        f.push_back(real("ppo", "learning_rate", [](auto& c) -> auto& { return c.ppo.learning_rate; }));
        f.push_back(integer<int>("ppo", "epochs", [](auto& c) -> auto& { return c.ppo.epochs; }));
        f.push_back(integer<int>("ppo", "minibatch_size", [](auto& c) -> auto& { return c.ppo.minibatch_size; }));
        f.push_back(integer<int>("ppo", "rollout_steps", [](auto& c) -> auto& { return c.ppo.rollout_steps; }));
        f.push_back(integer<std::int64_t>("ppo", "total_steps", [](auto& c) -> auto& { return c.ppo.total_steps; }));
        f.push_back(real("ppo", "gae_lambda", [](auto& c) -> auto& { return c.ppo.gae_lambda; }));
        f.push_back(real("ppo", "vf_coef", [](auto& c) -> auto& { return c.ppo.vf_coef; }));
        f.push_back(real("ppo", "ent_coef", [](auto& c) -> auto& { return c.ppo.ent_coef; }));
        f.push_back(real("ppo", "max_grad_norm", [](auto& c) -> auto& { return c.ppo.max_grad_norm; }));
        f.push_back(boolean("ppo", "normalize_advantages", [](auto& c) -> auto& { return c.ppo.normalize_advantages; }));
        f.push_back(boolean("ppo", "bootstrap_truncation", [](auto& c) -> auto& { return c.ppo.bootstrap_truncation; }));
        f.push_back({"ppo", "hidden", [](RunConfig& c, const std::string& v) { c.ppo.hidden = to_int_list(v); },
                     [](const RunConfig& c) { return from_int_list(c.ppo.hidden); }});
        f.push_back(real("ppo", "log_std_init", [](auto& c) -> auto& { return c.ppo.log_std_init; }));
        f.push_back(real("ppo", "mean_init", [](auto& c) -> auto& { return c.ppo.mean_init; }));
        return f;
    }();
    return table;
}

const std::vector<std::string> kScenarioKeys = {"variant", "load_before", "load_after", "pre_roll", "step_time",
                                               "horizon",  "E",           "L",          "R_L",      "C",
                                               "R_C",      "sigma_v",     "sigma_i",    "variations"};

/// "item; item", each item "k=v,k=v" or "label: k=v,k=v". Without a label
/// the item text is the label.
std::vector<harness::Variation> parse_variations(const std::string& text) {
    std::vector<harness::Variation> out;
    for (const auto& item : split(text, ';')) {
        const std::string_view trimmed = trim(item);
        if (trimmed.empty()) continue;
        harness::Variation v;
        std::string_view body = trimmed;
        if (const auto colon = trimmed.find(':'); colon != std::string_view::npos) {
            v.label = std::string(trim(trimmed.substr(0, colon)));
            body = trim(trimmed.substr(colon + 1));
            if (v.label.empty()) throw std::invalid_argument("variation '" + std::string(trimmed) + "' has an empty label");
        } else {
            v.label = std::string(trimmed);
        }
        for (const auto& assign : split(body, ',')) {
            if (trim(assign).empty()) continue;
            const auto eq = assign.find('=');
            if (eq == std::string::npos)
                throw std::invalid_argument("variation '" + std::string(trimmed) + "' needs key=value");
            v.overrides.set(trim(std::string_view(assign).substr(0, eq)),
                            to_double(std::string(trim(std::string_view(assign).substr(eq + 1)))));
        }
        out.push_back(std::move(v));
    }
    return out;
}

std::string format_variation(const harness::Variation& v) {
    std::string body;
    const auto add = [&](const char* key, const std::optional<double>& x) {
        if (x) body += (body.empty() ? "" : ",") + std::string(key) + "=" + format_number(*x);
    };
    const auto& o = v.overrides;
    add("E", o.E);
    add("L", o.L);
    add("R_L", o.R_L);
    add("C", o.C);
    add("R_C", o.R_C);
    return v.label + ": " + body;
}

void set_scenario_key(harness::ScenarioSpec& spec, const std::string& key, const std::string& v) {
    auto& s = spec.scenario;
    if (key == "variant") s.variant = env::parse_variant(v);
    else if (key == "load_before") s.load_before = to_double(v);
    else if (key == "load_after") s.load_after = to_double(v);
    else if (key == "pre_roll") s.pre_roll = to_double(v);
    else if (key == "step_time") s.step_time = to_double(v);
    else if (key == "horizon") s.horizon = to_double(v);
    else if (key == "sigma_v") s.sigma_v = to_double(v);
    else if (key == "sigma_i") s.sigma_i = to_double(v);
    else if (key == "variations") spec.variations = parse_variations(v);
    else s.overrides.set(key, to_double(v));
}

void apply(RunConfig& cfg, const Entry& e) {
    try {
        constexpr std::string_view prefix = "scenario.";
        if (e.section.rfind(prefix, 0) == 0) {
            const std::string name = e.section.substr(prefix.size());
            if (name.empty()) throw std::invalid_argument("scenario section needs a name");
            if (std::find(kScenarioKeys.begin(), kScenarioKeys.end(), e.key) == kScenarioKeys.end())
                throw std::invalid_argument("unknown key '" + e.key + "' in [" + e.section + "]");
            auto it = std::find_if(cfg.scenarios.begin(), cfg.scenarios.end(),
                                   [&](const auto& s) { return s.scenario.name == name; });
            if (it == cfg.scenarios.end()) {
                harness::ScenarioSpec spec;
                if (const auto* builtin = harness::find_builtin(name)) spec = *builtin;
                spec.scenario.name = name;
                cfg.scenarios.push_back(spec);
                it = cfg.scenarios.end() - 1;
            }
            set_scenario_key(*it, e.key, e.value);
            return;
        }
        bool known_section = false;
        for (const auto& f : fields()) {
            if (f.section != e.section) continue;
            known_section = true;
            if (f.key == e.key) {
                f.set(cfg, e.value);
                return;
            }
        }
        if (!known_section) throw std::invalid_argument("unknown section [" + e.section + "]");
        throw std::invalid_argument("unknown key '" + e.key + "' in [" + e.section + "]");
    } catch (const std::invalid_argument& ex) {
        throw ConfigError(e.source, e.line, ex.what());
    }
}

}  // namespace

RunConfig resolve(const std::vector<Entry>& file, const Overrides& flags) {
    env::Variant variant = env::Variant::Dgc;
    for (const auto& e : file) {
        if (e.section == "run" && e.key == "variant") {
            try {
                variant = env::parse_variant(e.value);
            } catch (const std::invalid_argument& ex) {
                throw ConfigError(e.source, e.line, ex.what());
            }
        }
    }
    if (flags.variant) variant = *flags.variant;

    RunConfig cfg = RunConfig::defaults(variant);
    for (const auto& e : file) apply(cfg, e);
    if (flags.seed) cfg.seed = *flags.seed;
    if (flags.out_dir) cfg.out_dir = *flags.out_dir;
    if (flags.steps) cfg.ppo.total_steps = *flags.steps;
    for (const auto& text : flags.assignments) {
        const Entry e = parse_assignment(text);
        if (e.section == "run" && e.key == "variant" && env::parse_variant(e.value) != variant)
            throw ConfigError(e.source, 0, "use --variant to change the variant");
        apply(cfg, e);
    }
    cfg.variant = variant;
    cfg.env.variant = variant;
    try {
        cfg.validate();
    } catch (const std::invalid_argument& ex) {
        throw ConfigError("config", 0, ex.what());
    }
    return cfg;
}

RunConfig load(const std::optional<std::string>& path, const Overrides& flags) {
    return resolve(path ? parse_file(*path) : std::vector<Entry>{}, flags);
}

// Writing ---------------------------------------------------------------------

namespace {

void write_sections(std::ostream& out, const RunConfig& cfg, const std::vector<std::string>& sections) {
    for (const auto& section : sections) {
        out << '[' << section << "]\n";
        for (const auto& f : fields())
            if (f.section == section) out << f.key << " = " << f.get(cfg) << '\n';
        out << '\n';
    }
}

void write_scenario(std::ostream& out, const harness::ScenarioSpec& spec) {
    const auto& s = spec.scenario;
    out << "[scenario." << s.name << "]\n";
    if (s.variant) out << "variant = " << env::to_string(*s.variant) << '\n';
    out << "load_before = " << format_number(s.load_before) << '\n'
        << "load_after = " << format_number(s.load_after) << '\n'
        << "pre_roll = " << format_number(s.pre_roll) << '\n'
        << "step_time = " << format_number(s.step_time) << '\n'
        << "horizon = " << format_number(s.horizon) << '\n'
        << "sigma_v = " << format_number(s.sigma_v) << '\n'
        << "sigma_i = " << format_number(s.sigma_i) << '\n';
    const auto& o = s.overrides;
    if (o.E) out << "E = " << format_number(*o.E) << '\n';
    if (o.L) out << "L = " << format_number(*o.L) << '\n';
    if (o.R_L) out << "R_L = " << format_number(*o.R_L) << '\n';
    if (o.C) out << "C = " << format_number(*o.C) << '\n';
    if (o.R_C) out << "R_C = " << format_number(*o.R_C) << '\n';
    if (!spec.variations.empty()) {
        out << "variations = ";
        for (std::size_t i = 0; i < spec.variations.size(); ++i) out << (i ? "; " : "") << format_variation(spec.variations[i]);
        out << '\n';
    }
    out << '\n';
}

}  // namespace

void write(std::ostream& out, const RunConfig& cfg) {
    out << "# resolved configuration\n";
    write_sections(out, cfg, {"run", "circuit", "env", "reward", "ppo"});
    for (const auto& s : cfg.scenarios) write_scenario(out, s);
}

std::string to_string(const RunConfig& cfg) {
    std::ostringstream s;
    write(s, cfg);
    return s.str();
}

std::uint64_t fnv1a(const std::string& text) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t environment_hash(const RunConfig& cfg) {
    std::ostringstream s;
    s << "variant = " << env::to_string(cfg.variant) << '\n';
    write_sections(s, cfg, {"circuit", "env", "reward"});
    return fnv1a(s.str());
}

const harness::ScenarioSpec* find_scenario(const RunConfig& cfg, const std::string& name) {
    for (const auto& s : cfg.scenarios)
        if (s.scenario.name == name) return &s;
    return harness::find_builtin(name);
}

std::vector<std::string> scenario_names(const RunConfig& cfg) {
    std::vector<std::string> names;
    for (const auto& s : harness::builtin_scenarios()) names.push_back(s.scenario.name);
    for (const auto& s : cfg.scenarios)
        if (std::find(names.begin(), names.end(), s.scenario.name) == names.end()) names.push_back(s.scenario.name);
    return names;
}

}  // namespace dgc::config
