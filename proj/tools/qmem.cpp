// qmem: reproduce, simulate, fit and calibrate the multi-channel polarization
// qubit memory model from the command line.
//
// Exit codes: 0 success, 2 configuration error, 3 numerical/fit failure,
// 4 I/O error.

#include <chrono>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "qmem/qmem.hpp"

namespace {

enum ExitCode : int { kOk = 0, kConfig = 2, kNumerical = 3, kIo = 4 };

struct CommonOptions {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::uint64_t> pulses;
    std::optional<std::string> out;
    bool expected_counts = false;
    std::vector<std::string> formats{"csv"};
    unsigned threads = qmem::default_thread_count();
    bool timestamp = false;
};

void add_common(CLI::App* sub, CommonOptions& o) {
    sub->add_option("--config", o.config_path, "Scenario configuration (JSON); defaults apply when omitted")
        ->check(CLI::ExistingFile);
    sub->add_option("--seed", o.seed, "Run seed (overrides scenario.seed)");
    sub->add_option("--pulses", o.pulses, "Pulses per analyzer setting (overrides scenario.pulses_per_setting)");
    sub->add_option("--out", o.out, "Output directory (overrides scenario.output_dir)");
    sub->add_flag("--expected-counts", o.expected_counts, "Use infinite-statistics expected counts");
    sub->add_option("--format", o.formats, "Output format(s): csv, json")
        ->check(CLI::IsMember({"csv", "json"}))
        ->delimiter(',');
    sub->add_option("--threads", o.threads, "Worker threads (results do not depend on this)")
        ->check(CLI::PositiveNumber);
    sub->add_flag("--timestamp", o.timestamp, "Record a creation timestamp in JSON output");
}

qmem::ScenarioConfig resolve_config(const CommonOptions& o) {
    qmem::ScenarioConfig cfg = o.config_path.empty() ? qmem::ScenarioConfig{} : qmem::load_config(o.config_path);
    if (o.seed) cfg.seed = *o.seed;
    if (o.pulses) cfg.pulses_per_setting = *o.pulses;
    if (o.out) cfg.output_dir = *o.out;
    try {
        cfg.validate();
    } catch (const qmem::DomainError& e) {
        throw qmem::ConfigError(e.what());
    }
    return cfg;
}

qmem::RunOptions run_options(const CommonOptions& o) {
    return {o.expected_counts ? qmem::CountMode::Expected : qmem::CountMode::Sampled, o.threads};
}

std::string utc_now() {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::ostringstream os;
    os << std::put_time(std::gmtime(&now), "%Y-%m-%dT%H:%M:%SZ");
    return os.str();
}

/// Writes the artifact, reports the files, and maps recorded fit failures to exit code 3.
int finish(qmem::RunArtifact artifact, const CommonOptions& o, const qmem::ScenarioConfig& cfg) {
    if (o.timestamp) artifact.created_at = utc_now();
    std::set<qmem::OutputFormat> formats;
    for (const auto& f : o.formats) formats.insert(f == "json" ? qmem::OutputFormat::Json : qmem::OutputFormat::Csv);
    for (const auto& p : qmem::emit(artifact, formats, cfg.output_dir)) std::cout << "wrote " << p.string() << '\n';
    for (const auto& e : artifact.errors) std::cerr << "error: " << e << '\n';
    return artifact.errors.empty() ? kOk : kNumerical;
}

std::vector<std::pair<std::string, double>> parse_targets(const std::vector<std::string>& specs) {
    std::vector<std::pair<std::string, double>> out;
    for (const auto& s : specs) {
        const auto eq = s.find('=');
        if (eq == std::string::npos) throw qmem::ConfigError("target '" + s + "' must look like S0=0.902");
        try {
            out.emplace_back(s.substr(0, eq), std::stod(s.substr(eq + 1)));
        } catch (const std::exception&) {
            throw qmem::ConfigError("target '" + s + "' has a non-numeric fidelity");
        }
    }
    return out;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Multi-channel polarization-qubit memory simulator"};
    app.require_subcommand(1);

    CommonOptions reproduce_opts, simulate_opts, fit_opts, calibrate_opts;

    auto* reproduce = app.add_subcommand("reproduce", "Reproduce fig3 | fig4 | fig5 | table1");
    std::string target;
    reproduce->add_option("target", target, "Scenario to reproduce")
        ->required()
        ->check(CLI::IsMember({"fig3", "fig4", "fig5", "table1"}));
    add_common(reproduce, reproduce_opts);

    auto* simulate = app.add_subcommand("simulate", "Process tomography on every channel at every storage time");
    add_common(simulate, simulate_opts);

    auto* fit = app.add_subcommand("fit", "Fit a decay model to a dataset file (CSV: t_ms,value[,sigma])");
    std::string dataset_path, model = "exponential";
    bool joint = false;
    fit->add_option("dataset", dataset_path, "Dataset file")->required();
    fit->add_option("--model", model, "exponential | sigma_gamma")
        ->check(CLI::IsMember({"exponential", "sigma_gamma"}));
    fit->add_flag("--joint", joint, "sigma_gamma model: also fit the static coherence factor");
    add_common(fit, fit_opts);

    auto* calibrate = app.add_subcommand("calibrate", "Static coherence factors that reproduce target fidelities");
    std::vector<std::string> target_specs;
    calibrate->add_option("--targets", target_specs, "Channel targets, e.g. S0=0.902,S1=0.903 (default: reference set)")
        ->delimiter(',');
    add_common(calibrate, calibrate_opts);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kConfig;
    }

    try {
        if (*reproduce) {
            const auto cfg = resolve_config(reproduce_opts);
            const auto opt = run_options(reproduce_opts);
            qmem::RunArtifact a;
            if (target == "fig3") a = qmem::run_fig3(cfg, opt);
            else if (target == "fig4") a = qmem::run_fig4(cfg, opt);
            else if (target == "fig5") a = qmem::run_fig5(cfg, opt);
            else a = qmem::run_table1(cfg, opt);
            return finish(std::move(a), reproduce_opts, cfg);
        }
        if (*simulate) {
            const auto cfg = resolve_config(simulate_opts);
            return finish(qmem::run_simulate(cfg, run_options(simulate_opts)), simulate_opts, cfg);
        }
        if (*fit) {
            const auto cfg = resolve_config(fit_opts);
            const auto data = qmem::load_dataset(dataset_path);
            qmem::RunArtifact a = qmem::base_artifact("fit", cfg, run_options(fit_opts));
            qmem::FitReport report;
            if (model == "exponential") {
                report = qmem::fit_exponential(data);
            } else {
                auto opt = cfg.sigma_gamma_fit;
                opt.joint_static_gamma = opt.joint_static_gamma || joint;
                const auto& ch = cfg.channels.at(cfg.fig5_channel);
                report = qmem::fit_sigma_gamma(data, qmem::channel_fidelity_model(cfg, ch), cfg.detection, opt);
            }
            a.fits.emplace_back(model, report);
            a.notes["dataset"] = dataset_path;
            for (const auto& [k, v] : report.parameters) std::cout << k << " = " << v << '\n';
            return finish(std::move(a), fit_opts, cfg);
        }
        if (*calibrate) {
            const auto cfg = resolve_config(calibrate_opts);
            const auto targets = target_specs.empty() ? qmem::reference_channel_fidelities() : parse_targets(target_specs);
            qmem::RunArtifact a = qmem::run_calibrate(cfg, targets);
            const int rc = finish(a, calibrate_opts, cfg);
            const auto path = std::filesystem::path(cfg.output_dir) / "calibrated_config.json";
            qmem::detail::write_file(path, a.notes["calibrated_config"].dump(2) + "\n");
            std::cout << "wrote " << path.string() << '\n';
            return rc;
        }
    } catch (const qmem::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kConfig;
    } catch (const qmem::IoError& e) {
        std::cerr << "i/o error: " << e.what() << '\n';
        return kIo;
    } catch (const qmem::NumericalError& e) {
        std::cerr << "numerical error: " << e.what() << '\n';
        return kNumerical;
    } catch (const qmem::DomainError& e) {
        std::cerr << "numerical error: " << e.what() << '\n';
        return kNumerical;
    }
    return kOk;
}
