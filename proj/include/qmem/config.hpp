#pragma once

// Scenario configuration: a single JSON document whose keys are closed.
// Every key is optional; omitted keys take the defaults below. Unknown keys,
// wrong types and invariant violations raise ConfigError naming the key path.
// The schema is documented in docs/config.md.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "qmem/detection.hpp"
#include "qmem/error.hpp"
#include "qmem/fitting.hpp"
#include "qmem/memory_channel.hpp"
#include "qmem/polarization.hpp"
#include "qmem/tomography.hpp"

namespace qmem {

using Json = nlohmann::json;

/// Experiment timing; carried into reports, not simulated.
struct CycleConfig {
    double repetition_hz = 20.0;
    double mot_load_ms = 42.0;
};

struct ScenarioConfig {
    MemoryConfig memory;
    DetectionConfig detection;
    PhaseMatchConfig phase_match;
    ChannelSet channels = ChannelSet::defaults();
    CycleConfig cycle;

    std::uint64_t pulses_per_setting = 100000;
    std::vector<double> storage_times_ms{0.005, 0.5, 1.0, 1.5, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 10.0};
    std::vector<NamedState> input_states{NamedState::H, NamedState::V, NamedState::D, NamedState::R};
    std::uint64_t seed = 20170519;
    std::size_t mc_resamples = 500;
    std::string output_dir = "results";

    double fig3_time_ms = 0.005;
    double table1_time_ms = 0.005;
    std::string fig4_channel = "S2";
    std::string fig5_channel = "S2";
    std::size_t curve_points = 101;

    SigmaGammaFitOptions sigma_gamma_fit;

    ExperimentModel model() const { return {memory, detection, phase_match, input_states}; }

    /// Throws DomainError on the first violated invariant.
    void validate() const {
        memory.validate();
        detection.validate();
        phase_match.validate();
        detail::require(pulses_per_setting >= 1 && pulses_per_setting <= kMaxPulses,
                        "scenario.pulses_per_setting must lie in [1, 1e9]");
        detail::require(!storage_times_ms.empty(), "scenario.storage_times must not be empty");
        for (double t : storage_times_ms)
            detail::require(std::isfinite(t) && t >= 0.0, "scenario.storage_times must be >= 0");
        detail::require(input_states.size() == 4, "scenario.input_states must list four states");
        std::vector<StatePair> probe;
        for (NamedState s : input_states) probe.push_back({density_of(s), density_of(s)});
        try {
            (void)process_matrix(probe);
        } catch (const DomainError&) {
            throw DomainError("scenario.input_states must be informationally complete (e.g. H, V, D, R)");
        }
        detail::require(mc_resamples >= 2, "scenario.mc_resamples must be >= 2");
        detail::require(fig3_time_ms >= 0.0, "scenario.fig3_time must be >= 0");
        detail::require(table1_time_ms >= 0.0, "scenario.table1_time must be >= 0");
        detail::require(channels.contains(fig4_channel), "scenario.fig4_channel names an unknown channel");
        detail::require(channels.contains(fig5_channel), "scenario.fig5_channel names an unknown channel");
        detail::require(curve_points >= 2, "scenario.curve_points must be >= 2");
        detail::require(sigma_gamma_fit.lower_ms > 0.0 && sigma_gamma_fit.upper_ms > sigma_gamma_fit.lower_ms,
                        "fit.sigma_gamma_lower must be > 0 and below fit.sigma_gamma_upper");
        detail::require(sigma_gamma_fit.interval_sigmas >= 0.0, "fit.interval_sigmas must be >= 0");
        for (const auto& [id, g] : memory.static_gamma)
            detail::require(channels.contains(id), "memory.static_gamma." + id + " names an unknown channel");
        detail::require(cycle.repetition_hz > 0.0, "experiment.repetition_hz must be > 0");
        detail::require(cycle.mot_load_ms >= 0.0, "experiment.mot_load_ms must be >= 0");
    }
};

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

/// Full effective configuration; loading it back yields an equal config.
inline Json to_json(const ScenarioConfig& c) {
    Json j;
    auto& m = j["memory"];
    m["r0_axis"] = c.memory.r0_axis;
    m["r0_ch2"] = c.memory.r0_ch2;
    m["anchor_theta"] = c.memory.anchor_theta_deg;
    m["use_anchor"] = c.memory.use_anchor;
    m["tau"] = c.memory.tau_ms;
    m["sigma_gamma"] = c.memory.sigma_gamma_ms;
    m["theta_w"] = c.memory.theta_w_deg;
    m["static_gamma"] = Json::object();
    for (const auto& ch : c.channels) m["static_gamma"][ch.id] = c.memory.static_gamma_for(ch.id);
    m["r0_table"] = Json::array();
    for (const auto& [th, r0] : c.memory.r0_table) m["r0_table"].push_back({th, r0});
    m["b0"] = c.memory.b0_gauss;
    m["gradient"] = c.memory.gradient_mg_per_cm;
    m["sigma_b"] = c.memory.sigma_b_mg;

    auto& d = j["detection"];
    d["eta_fiber"] = c.detection.eta_fiber;
    d["eta_etalons"] = c.detection.eta_etalons;
    d["eta_mmf"] = c.detection.eta_mmf;
    d["eta_spd"] = c.detection.eta_spd;
    d["eta_total"] = c.detection.eta_total ? Json(*c.detection.eta_total) : Json(nullptr);
    d["n_bar"] = c.detection.n_bar;
    d["background_n"] = c.detection.background_n;

    j["phase_match"]["delta"] = c.phase_match.delta;

    j["channels"] = Json::array();
    for (const auto& ch : c.channels) j["channels"].push_back({{"id", ch.id}, {"theta", ch.theta_deg}});

    j["experiment"]["repetition_hz"] = c.cycle.repetition_hz;
    j["experiment"]["mot_load_ms"] = c.cycle.mot_load_ms;

    auto& s = j["scenario"];
    s["pulses_per_setting"] = c.pulses_per_setting;
    s["storage_times"] = c.storage_times_ms;
    s["input_states"] = Json::array();
    for (NamedState st : c.input_states) s["input_states"].push_back(std::string(to_string(st)));
    s["seed"] = c.seed;
    s["mc_resamples"] = c.mc_resamples;
    s["output_dir"] = c.output_dir;
    s["fig3_time"] = c.fig3_time_ms;
    s["table1_time"] = c.table1_time_ms;
    s["fig4_channel"] = c.fig4_channel;
    s["fig5_channel"] = c.fig5_channel;
    s["curve_points"] = c.curve_points;

    j["fit"]["sigma_gamma_lower"] = c.sigma_gamma_fit.lower_ms;
    j["fit"]["sigma_gamma_upper"] = c.sigma_gamma_fit.upper_ms;
    j["fit"]["joint_static_gamma"] = c.sigma_gamma_fit.joint_static_gamma;
    j["fit"]["interval_sigmas"] = c.sigma_gamma_fit.interval_sigmas;
    return j;
}

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

namespace detail {

class ConfigReader {
public:
    explicit ConfigReader(ScenarioConfig& cfg) : cfg_(cfg) {}

    void read(const Json& root) {
        expect_object(root, "");
        for (const auto& [key, value] : root.items()) {
            if (key == "memory") memory(value);
            else if (key == "detection") detection(value);
            else if (key == "phase_match") phase_match(value);
            else if (key == "channels") channels(value);
            else if (key == "experiment") experiment(value);
            else if (key == "scenario") scenario(value);
            else if (key == "fit") fit(value);
            else unknown(key);
        }
    }

private:
    [[noreturn]] static void fail(const std::string& path, const std::string& what) {
        throw ConfigError(path + ": " + what);
    }
    [[noreturn]] static void unknown(const std::string& path) { throw ConfigError("unknown key '" + path + "'"); }

    static void expect_object(const Json& v, const std::string& path) {
        if (!v.is_object()) fail(path.empty() ? "<root>" : path, "expected an object");
    }
    static double number(const Json& v, const std::string& path) {
        if (!v.is_number()) fail(path, "expected a number");
        return v.get<double>();
    }
    static bool boolean(const Json& v, const std::string& path) {
        if (!v.is_boolean()) fail(path, "expected true or false");
        return v.get<bool>();
    }
    static std::string string(const Json& v, const std::string& path) {
        if (!v.is_string()) fail(path, "expected a string");
        return v.get<std::string>();
    }
    static std::uint64_t unsigned_int(const Json& v, const std::string& path) {
        if (v.is_number_unsigned()) return v.get<std::uint64_t>();
        if (v.is_number_float()) {
            const double d = v.get<double>();
            if (d >= 0.0 && d == std::floor(d) && d <= 1.8e19) return static_cast<std::uint64_t>(d);
        }
        fail(path, "expected a non-negative integer");
    }

    void memory(const Json& v) {
        expect_object(v, "memory");
        auto& m = cfg_.memory;
        for (const auto& [key, val] : v.items()) {
            const std::string p = "memory." + key;
            if (key == "r0_axis") m.r0_axis = number(val, p);
            else if (key == "r0_ch2") m.r0_ch2 = number(val, p);
            else if (key == "anchor_theta") m.anchor_theta_deg = number(val, p);
            else if (key == "use_anchor") m.use_anchor = boolean(val, p);
            else if (key == "tau") m.tau_ms = number(val, p);
            else if (key == "sigma_gamma") m.sigma_gamma_ms = number(val, p);
            else if (key == "theta_w") m.theta_w_deg = number(val, p);
            else if (key == "static_gamma") {
                expect_object(val, p);
                m.static_gamma.clear();
                for (const auto& [id, g] : val.items()) m.static_gamma[id] = number(g, p + "." + id);
            } else if (key == "r0_table") {
                if (!val.is_array()) fail(p, "expected an array of [theta, r0] pairs");
                m.r0_table.clear();
                for (std::size_t i = 0; i < val.size(); ++i) {
                    const auto& e = val[i];
                    const std::string ep = p + "[" + std::to_string(i) + "]";
                    if (!e.is_array() || e.size() != 2) fail(ep, "expected a [theta, r0] pair");
                    m.r0_table.emplace_back(number(e[0], ep), number(e[1], ep));
                }
            } else if (key == "b0") m.b0_gauss = number(val, p);
            else if (key == "gradient") m.gradient_mg_per_cm = number(val, p);
            else if (key == "sigma_b") m.sigma_b_mg = number(val, p);
            else unknown(p);
        }
    }

    void detection(const Json& v) {
        expect_object(v, "detection");
        auto& d = cfg_.detection;
        for (const auto& [key, val] : v.items()) {
            const std::string p = "detection." + key;
            if (key == "eta_fiber") d.eta_fiber = number(val, p);
            else if (key == "eta_etalons") d.eta_etalons = number(val, p);
            else if (key == "eta_mmf") d.eta_mmf = number(val, p);
            else if (key == "eta_spd") d.eta_spd = number(val, p);
            else if (key == "eta_total") {
                if (val.is_null()) d.eta_total.reset();
                else d.eta_total = number(val, p);
            } else if (key == "n_bar") d.n_bar = number(val, p);
            else if (key == "background_n") d.background_n = number(val, p);
            else unknown(p);
        }
    }

    void phase_match(const Json& v) {
        expect_object(v, "phase_match");
        for (const auto& [key, val] : v.items()) {
            if (key == "delta") cfg_.phase_match.delta = number(val, "phase_match.delta");
            else unknown("phase_match." + key);
        }
    }

    void channels(const Json& v) {
        if (!v.is_array()) fail("channels", "expected an array of {id, theta} objects");
        std::vector<ChannelSpec> list;
        for (std::size_t i = 0; i < v.size(); ++i) {
            const std::string p = "channels[" + std::to_string(i) + "]";
            expect_object(v[i], p);
            ChannelSpec spec;
            bool has_id = false, has_theta = false;
            for (const auto& [key, val] : v[i].items()) {
                if (key == "id") spec.id = string(val, p + ".id"), has_id = true;
                else if (key == "theta") spec.theta_deg = number(val, p + ".theta"), has_theta = true;
                else unknown(p + "." + key);
            }
            if (!has_id || !has_theta) fail(p, "requires both 'id' and 'theta'");
            list.push_back(spec);
        }
        try {
            cfg_.channels = ChannelSet(std::move(list));
        } catch (const DomainError& e) {
            fail("channels", e.what());
        }
    }

    void experiment(const Json& v) {
        expect_object(v, "experiment");
        for (const auto& [key, val] : v.items()) {
            const std::string p = "experiment." + key;
            if (key == "repetition_hz") cfg_.cycle.repetition_hz = number(val, p);
            else if (key == "mot_load_ms") cfg_.cycle.mot_load_ms = number(val, p);
            else unknown(p);
        }
    }

    void scenario(const Json& v) {
        expect_object(v, "scenario");
        for (const auto& [key, val] : v.items()) {
            const std::string p = "scenario." + key;
            if (key == "pulses_per_setting") cfg_.pulses_per_setting = unsigned_int(val, p);
            else if (key == "storage_times") {
                if (!val.is_array()) fail(p, "expected an array of times in ms");
                cfg_.storage_times_ms.clear();
                for (std::size_t i = 0; i < val.size(); ++i)
                    cfg_.storage_times_ms.push_back(number(val[i], p + "[" + std::to_string(i) + "]"));
            } else if (key == "input_states") {
                if (!val.is_array()) fail(p, "expected an array of state labels");
                cfg_.input_states.clear();
                for (std::size_t i = 0; i < val.size(); ++i) {
                    const std::string ip = p + "[" + std::to_string(i) + "]";
                    const auto label = parse_named_state(string(val[i], ip));
                    if (!label) fail(ip, "expected one of H, V, D, A, R, L");
                    cfg_.input_states.push_back(*label);
                }
            } else if (key == "seed") cfg_.seed = unsigned_int(val, p);
            else if (key == "mc_resamples") cfg_.mc_resamples = unsigned_int(val, p);
            else if (key == "output_dir") cfg_.output_dir = string(val, p);
            else if (key == "fig3_time") cfg_.fig3_time_ms = number(val, p);
            else if (key == "table1_time") cfg_.table1_time_ms = number(val, p);
            else if (key == "fig4_channel") cfg_.fig4_channel = string(val, p);
            else if (key == "fig5_channel") cfg_.fig5_channel = string(val, p);
            else if (key == "curve_points") cfg_.curve_points = unsigned_int(val, p);
            else unknown(p);
        }
    }

    void fit(const Json& v) {
        expect_object(v, "fit");
        for (const auto& [key, val] : v.items()) {
            const std::string p = "fit." + key;
            if (key == "sigma_gamma_lower") cfg_.sigma_gamma_fit.lower_ms = number(val, p);
            else if (key == "sigma_gamma_upper") cfg_.sigma_gamma_fit.upper_ms = number(val, p);
            else if (key == "joint_static_gamma") cfg_.sigma_gamma_fit.joint_static_gamma = boolean(val, p);
            else if (key == "interval_sigmas") cfg_.sigma_gamma_fit.interval_sigmas = number(val, p);
            else unknown(p);
        }
    }

    ScenarioConfig& cfg_;
};

} // namespace detail

/// Parses and validates a configuration document.
inline ScenarioConfig parse_config(const Json& root) {
    ScenarioConfig cfg;
    detail::ConfigReader(cfg).read(root);
    try {
        cfg.validate();
    } catch (const DomainError& e) {
        throw ConfigError(e.what());
    }
    return cfg;
}

inline ScenarioConfig parse_config_text(const std::string& text) {
    Json root;
    try {
        root = Json::parse(text, nullptr, true, /*ignore_comments=*/true);
    } catch (const Json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    return parse_config(root);
}

inline ScenarioConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path.string() + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_config_text(buf.str());
}

/// Dotted paths of every leaf key in the schema (array/object-valued keys are leaves).
inline std::set<std::string> config_leaf_paths(const Json& j, const std::string& prefix = "") {
    std::set<std::string> out;
    for (const auto& [key, val] : j.items()) {
        const std::string p = prefix.empty() ? key : prefix + "." + key;
        if (val.is_object() && key != "static_gamma") {
            auto sub = config_leaf_paths(val, p);
            out.insert(sub.begin(), sub.end());
        } else {
            out.insert(p);
        }
    }
    return out;
}

/// Reads a decay dataset: CSV with columns t_ms,value[,sigma]. Blank lines
/// and lines starting with '#' are skipped; a non-numeric first row is a header.
inline DecayDataset parse_dataset_text(const std::string& text, const std::string& origin = "<dataset>") {
    std::vector<DecayPoint> pts;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    bool header_allowed = true;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        const auto first = line.find_first_not_of(" \t");
        if (first == std::string::npos || line[first] == '#') continue;
        std::vector<std::string> fields;
        std::stringstream ls(line);
        for (std::string f; std::getline(ls, f, ',');) fields.push_back(f);
        std::vector<double> nums;
        bool numeric = true;
        for (const auto& f : fields) {
            try {
                std::size_t used = 0;
                nums.push_back(std::stod(f, &used));
                if (f.find_first_not_of(" \t", used) != std::string::npos) numeric = false;
            } catch (const std::exception&) {
                numeric = false;
            }
        }
        if (!numeric && header_allowed) {
            header_allowed = false;
            continue;
        }
        header_allowed = false;
        const std::string where = origin + ":" + std::to_string(lineno);
        if (!numeric) throw ConfigError(where + ": expected numeric fields");
        if (nums.size() != 2 && nums.size() != 3) throw ConfigError(where + ": expected t_ms,value[,sigma]");
        pts.push_back({nums[0], nums[1], nums.size() == 3 ? std::optional<double>(nums[2]) : std::nullopt});
    }
    try {
        return DecayDataset(std::move(pts));
    } catch (const DomainError& e) {
        throw ConfigError(origin + ": " + e.what());
    }
}

inline DecayDataset load_dataset(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open dataset '" + path.string() + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_dataset_text(buf.str(), path.string());
}

} // namespace qmem
