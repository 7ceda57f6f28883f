#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mnl/dynamics/kolmogorov.hpp"
#include "mnl/dynamics/linear_gaussian.hpp"
#include "mnl/error.hpp"
#include "mnl/nn/denoiser.hpp"
#include "mnl/nn/surrogate.hpp"
#include "mnl/rollout/engine.hpp"
#include "mnl/schedule.hpp"

// Nested experiment configuration. Every section has defaults, so a config file only needs the
// keys it changes; unknown keys are rejected to catch typos.

namespace mnl {

namespace fs = std::filesystem;

inline dynamics::KolmogorovConfig desk_kolmogorov() {
    dynamics::KolmogorovConfig k;
    k.solver_dt = 0.005;
    return k;
}

struct DynamicsSection {
    std::string system = "kolmogorov";  // "kolmogorov" or "ou"
    dynamics::KolmogorovConfig kolmogorov = desk_kolmogorov();
    dynamics::LinearGaussianSystem ou = dynamics::LinearGaussianSystem::unit_variance_ar1(0.9);
    int trajectories = 8;
    std::int64_t frames = 1000;
    std::int64_t burn_in = 10000;  // solver steps
    std::int64_t subsample = 20;   // solver steps per frame
    int initial_max_wavenumber = 8;
    double heldout_fraction = 0.1;

    void validate() const {
        if (system == "kolmogorov") {
            kolmogorov.validate();
        } else if (system == "ou") {
            ou.validate();
        } else {
            throw ConfigurationError("dynamics.system must be 'kolmogorov' or 'ou'");
        }
        if (trajectories < 1 || frames < 1 || burn_in < 0 || subsample < 1) {
            throw ConfigurationError("dynamics: trajectories, frames, subsample must be >= 1 and burn_in >= 0");
        }
        if (!(heldout_fraction > 0.0 && heldout_fraction < 1.0)) {
            throw ConfigurationError("dynamics.heldout_fraction must lie in (0, 1)");
        }
    }
};

inline void to_json(nlohmann::json& j, const DynamicsSection& d) {
    j = {{"system", d.system},       {"kolmogorov", d.kolmogorov}, {"ou", d.ou},
         {"trajectories", d.trajectories}, {"frames", d.frames},   {"burn_in", d.burn_in},
         {"subsample", d.subsample}, {"initial_max_wavenumber", d.initial_max_wavenumber},
         {"heldout_fraction", d.heldout_fraction}};
}

inline void from_json(const nlohmann::json& j, DynamicsSection& d) {
    const DynamicsSection def;
    d.system = j.value("system", def.system);
    if (j.contains("kolmogorov")) {
        nlohmann::json k = def.kolmogorov;  // partial sections inherit the desk defaults
        k.merge_patch(j.at("kolmogorov"));
        d.kolmogorov = k.get<dynamics::KolmogorovConfig>();
    } else {
        d.kolmogorov = def.kolmogorov;
    }
    d.ou = j.contains("ou") ? j.at("ou").get<dynamics::LinearGaussianSystem>() : def.ou;
    d.trajectories = j.value("trajectories", def.trajectories);
    d.frames = j.value("frames", def.frames);
    d.burn_in = j.value("burn_in", def.burn_in);
    d.subsample = j.value("subsample", def.subsample);
    d.initial_max_wavenumber = j.value("initial_max_wavenumber", def.initial_max_wavenumber);
    d.heldout_fraction = j.value("heldout_fraction", def.heldout_fraction);
}

struct ScheduleSection {
    std::string type = "cosine";
    int S = 250;

    NoiseSchedule build() const {
        if (type != "cosine") throw ConfigurationError("schedule.type must be 'cosine'");
        return cosine_schedule(S);
    }

    NLOHMANN_DEFINE_TYPE_INTRUSIVE_WITH_DEFAULT(ScheduleSection, type, S)
};

struct MetricsSection {
    std::vector<int> correlation_lags = {0, 1, 2, 5, 10, 20, 50, 100};
    int histogram_bins = 0;  // 0: one bin per level

    NLOHMANN_DEFINE_TYPE_INTRUSIVE_WITH_DEFAULT(MetricsSection, correlation_lags, histogram_bins)
};

struct PathsSection {
    std::string data = "data";
    std::string checkpoints = "checkpoints";
    std::string outputs = "outputs";

    NLOHMANN_DEFINE_TYPE_INTRUSIVE_WITH_DEFAULT(PathsSection, data, checkpoints, outputs)
};

struct ExperimentConfig {
    std::uint64_t seed = 0;
    PathsSection paths;
    DynamicsSection dynamics;
    ScheduleSection schedule;
    nn::DenoiserConfig denoiser;
    nn::SurrogateConfig surrogate;
    rollout::RolloutConfig rollout;
    MetricsSection metrics;

    /// Throws ConfigurationError on any invalid section or an S mismatch between sections.
    void validate() const {
        dynamics.validate();
        schedule.build();
        denoiser.validate();
        surrogate.validate();
        rollout.validate(schedule.S);
        if (denoiser.S != schedule.S) {
            throw ConfigurationError("config: denoiser.S = " + std::to_string(denoiser.S) +
                                     " differs from schedule.S = " + std::to_string(schedule.S));
        }
        for (const auto* p : {&paths.data, &paths.checkpoints, &paths.outputs}) {
            if (p->empty()) throw ConfigurationError("config: paths must be non-empty");
        }
        for (int lag : metrics.correlation_lags) {
            if (lag < 0) throw ConfigurationError("config: correlation lags must be >= 0");
        }
    }
};

inline void to_json(nlohmann::json& j, const ExperimentConfig& c) {
    j = {{"seed", c.seed},         {"paths", c.paths},       {"dynamics", c.dynamics},
         {"schedule", c.schedule}, {"denoiser", c.denoiser}, {"surrogate", c.surrogate},
         {"rollout", c.rollout},   {"metrics", c.metrics}};
}

inline void from_json(const nlohmann::json& j, ExperimentConfig& c) {
    static const std::vector<std::string> known = {"seed",     "paths",     "dynamics", "schedule",
                                                   "denoiser", "surrogate", "rollout",  "metrics"};
    for (const auto& [k, v] : j.items()) {
        if (std::find(known.begin(), known.end(), k) == known.end()) {
            throw ConfigurationError("config: unknown section '" + k + "'");
        }
    }
    const ExperimentConfig def;
    c.seed = j.value("seed", def.seed);
    c.paths = j.value("paths", def.paths);
    c.dynamics = j.value("dynamics", def.dynamics);
    c.schedule = j.value("schedule", def.schedule);
    c.denoiser = j.value("denoiser", def.denoiser);
    c.surrogate = j.value("surrogate", def.surrogate);
    c.rollout = j.value("rollout", def.rollout);
    c.metrics = j.value("metrics", def.metrics);
}

/// Applies "a.b.c=value" overrides; the value is parsed as JSON when possible, else taken as a string.
inline void apply_override(nlohmann::json& j, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) {
        throw ConfigurationError("--set expects key.path=value, got '" + assignment + "'");
    }
    std::string pointer;
    std::string key = assignment.substr(0, eq);
    std::size_t pos = 0;
    while (true) {
        const auto dot = key.find('.', pos);
        pointer += "/" + key.substr(pos, dot == std::string::npos ? std::string::npos : dot - pos);
        if (dot == std::string::npos) break;
        pos = dot + 1;
    }
    const auto text = assignment.substr(eq + 1);
    nlohmann::json value;
    try {
        value = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error&) {
        value = text;
    }
    j[nlohmann::json::json_pointer(pointer)] = value;
}

/// Throws on keys of `given` that the canonical serialization does not contain.
inline void check_known_keys(const nlohmann::json& given, const nlohmann::json& canonical, const std::string& where) {
    if (!given.is_object() || !canonical.is_object()) return;
    for (const auto& [k, v] : given.items()) {
        const auto path = where.empty() ? k : where + "." + k;
        if (!canonical.contains(k)) throw ConfigurationError("config: unknown key '" + path + "'");
        check_known_keys(v, canonical.at(k), path);
    }
}

/// Reads the config file (if given), applies overrides, and validates.
inline ExperimentConfig load_config(const std::string& path, const std::vector<std::string>& overrides = {}) {
    nlohmann::json j = nlohmann::json::object();
    if (!path.empty()) {
        std::ifstream in(path);
        if (!in) throw ConfigurationError("config: cannot read " + path);
        try {
            in >> j;
        } catch (const nlohmann::json::exception& e) {
            throw ConfigurationError("config: malformed " + path + ": " + e.what());
        }
    }
    for (const auto& o : overrides) apply_override(j, o);
    ExperimentConfig cfg;
    try {
        cfg = j.get<ExperimentConfig>();
        check_known_keys(j, nlohmann::json(cfg), "");
    } catch (const nlohmann::json::exception& e) {
        throw ConfigurationError(std::string("config: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

/// Output root from MNL_OUTPUT_ROOT (default: current directory).
inline fs::path output_root() {
    const char* env = std::getenv("MNL_OUTPUT_ROOT");
    return env && *env ? fs::path(env) : fs::current_path();
}

/// Relative paths resolve against the output root.
inline fs::path resolve_path(const std::string& p) {
    const fs::path path(p);
    return path.is_absolute() ? path : output_root() / path;
}

/// 64-bit FNV-1a of a byte string.
inline std::uint64_t fnv1a(const std::string& bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xF];
    return s;
}

}  // namespace mnl
