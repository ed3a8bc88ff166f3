#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "dgc/env.hpp"
#include "dgc/harness.hpp"
#include "dgc/ppo.hpp"

namespace dgc::config {

/// Everything a run needs, fully resolved.
struct RunConfig {
    env::Variant variant = env::Variant::Dgc;
    std::uint64_t seed = 0;
    std::string out_dir = "runs";
    int checkpoint_every = 0;  // updates between intermediate checkpoints; 0 = final only
    env::EnvConfig env;
    ppo::PpoConfig ppo;
    std::vector<harness::ScenarioSpec> scenarios;  // [scenario.NAME] sections

    /// Variant-specific built-in defaults.
    static RunConfig defaults(env::Variant variant);
    /// Throws std::invalid_argument.
    void validate() const;
};

/// Parse or validation failure. what() is "<source>:<line>: <message>" when a
/// line is known.
class ConfigError : public std::runtime_error {
public:
    ConfigError(const std::string& source, int line, const std::string& message);
    int line() const { return line_; }

private:
    int line_;
};

/// One `key = value` line.
struct Entry {
    std::string section;  // e.g. "env" or "scenario.mine"
    std::string key;
    std::string value;
    std::string source;  // file name or "--set"
    int line = 0;
};

/// INI-style: `[section]` headers, `key = value` lines, `#` or `;` comment
/// lines, and inline comments from a whitespace-preceded `#`.
/// Throws ConfigError on malformed lines.
std::vector<Entry> parse(std::istream& in, const std::string& source);
/// Throws ConfigError if the file cannot be opened.
std::vector<Entry> parse_file(const std::string& path);
/// "section.key=value"; the section may itself contain dots.
Entry parse_assignment(const std::string& text);

/// Command-line layer, applied over the file.
struct Overrides {
    std::optional<env::Variant> variant;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out_dir;
    std::optional<std::int64_t> steps;
    std::vector<std::string> assignments;  // --set section.key=value
};

/// Built-in defaults for the variant, then `file`, then `flags`. The variant
/// comes from the flags, else [run] variant, else dgc. Unknown sections or
/// keys and invalid values throw ConfigError with the offending line.
RunConfig resolve(const std::vector<Entry>& file, const Overrides& flags);
/// Reads `path` if given.
RunConfig load(const std::optional<std::string>& path, const Overrides& flags);

/// Round-trips through `parse` + `resolve` to the same configuration.
void write(std::ostream& out, const RunConfig& cfg);
std::string to_string(const RunConfig& cfg);

/// 64-bit FNV-1a over the serialized circuit, env and reward sections.
std::uint64_t environment_hash(const RunConfig& cfg);
std::uint64_t fnv1a(const std::string& text);

/// User-defined scenarios shadow built-ins of the same name. Nullptr if unknown.
const harness::ScenarioSpec* find_scenario(const RunConfig& cfg, const std::string& name);
/// Names of every scenario `find_scenario` accepts.
std::vector<std::string> scenario_names(const RunConfig& cfg);

}  // namespace dgc::config
