#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <regex>
#include <sstream>

#include <gtest/gtest.h>

#include "qmem/qmem.hpp"

using namespace qmem;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("qmem_harness_" + name);
    fs::remove_all(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

const FidelityPoint& row_for(const std::vector<FidelityPoint>& pts, const std::string& id) {
    for (const auto& p : pts)
        if (p.channel == id) return p;
    throw std::runtime_error("no row " + id);
}

int run_cli(const std::string& args) {
    const std::string cmd = std::string(QMEM_CLI) + " " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

} // namespace

TEST(Config, EmptyDocumentGivesDefaults) {
    const auto cfg = parse_config_text("{}");
    EXPECT_EQ(cfg.memory.tau_ms, 2.9);
    EXPECT_EQ(cfg.memory.sigma_gamma_ms, 104.0);
    EXPECT_EQ(cfg.channels.size(), 7u);
    EXPECT_NEAR(total_detection_efficiency(cfg.detection), 0.22504, 1e-12);
    EXPECT_EQ(cfg.pulses_per_setting, 100000u);
    EXPECT_EQ(cfg.storage_times_ms.size(), 12u);
}

TEST(Config, RejectsBadValuesWithKeyPath) {
    try {
        parse_config_text(R"({"memory": {"tau": -1}})");
        FAIL() << "expected rejection";
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("memory.tau must be > 0"), std::string::npos) << e.what();
    }
    try {
        parse_config_text(R"({"memory": {"taus": 3}})");
        FAIL() << "expected rejection";
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("memory.taus"), std::string::npos) << e.what();
    }
    EXPECT_THROW(parse_config_text(R"({"scenario": {"seed": -3}})"), ConfigError);
    EXPECT_THROW(parse_config_text(R"({"scenario": {"input_states": ["H", "V", "D", "A"]}})"), ConfigError);
    EXPECT_THROW(parse_config_text(R"({"scenario": {"fig5_channel": "S9"}})"), ConfigError);
    EXPECT_THROW(parse_config_text(R"({"channels": [{"id": "a"}]})"), ConfigError);
    EXPECT_THROW(parse_config_text("{ not json"), ConfigError);
    EXPECT_THROW(load_config("/nonexistent/qmem.json"), ConfigError);
}

TEST(Config, CommentsAccepted) {
    const auto cfg = parse_config_text("// header\n{ /* inline */ \"memory\": {\"tau\": 3.1} }");
    EXPECT_EQ(cfg.memory.tau_ms, 3.1);
}

TEST(Config, EchoRoundTripsAndCoversEveryKey) {
    ScenarioConfig cfg;
    cfg.memory.static_gamma["S3"] = 0.87;
    cfg.detection.eta_total.reset();
    cfg.seed = 77;
    cfg.storage_times_ms = {0.0, 1.25};
    const Json echo = to_json(cfg);
    const auto back = parse_config(echo);
    EXPECT_EQ(to_json(back), echo);
    EXPECT_EQ(back.memory.static_gamma_for("S3"), 0.87);
    EXPECT_FALSE(back.detection.eta_total.has_value());

    // Every leaf in the echo is accepted on its own, so the schema is closed
    // over exactly what the echo writes.
    for (const auto& path : config_leaf_paths(echo)) {
        Json doc;
        doc[Json::json_pointer("/" + std::regex_replace(path, std::regex("\\."), "/"))] =
            echo[Json::json_pointer("/" + std::regex_replace(path, std::regex("\\."), "/"))];
        EXPECT_NO_THROW(parse_config(doc)) << path;
    }
}

TEST(Fig3, ColumnsAndValues) {
    const ScenarioConfig cfg;
    const auto a = run_fig3(cfg);
    ASSERT_EQ(a.tables.size(), 1u);
    const std::vector<std::string> cols{"channel", "theta_deg", "efficiency_sigma_plus", "efficiency_sigma_minus"};
    EXPECT_EQ(a.tables[0].columns, cols);
    const auto rows = fig3_rows(cfg);
    ASSERT_EQ(rows.size(), 7u);
    EXPECT_NEAR(rows[0].efficiency_sigma_plus, 0.13976, 5e-6);
    EXPECT_EQ(rows[0].efficiency_sigma_plus, rows[0].efficiency_sigma_minus);
    for (std::size_t i = 1; i < rows.size(); ++i) EXPECT_LT(rows[i].efficiency_sigma_plus, rows[i - 1].efficiency_sigma_plus);
}

TEST(Fig4, NoiseFreeRoundTrip) {
    const ScenarioConfig cfg;
    const auto r = fig4_result(cfg, CountMode::Expected);
    ASSERT_TRUE(r.fit);
    EXPECT_NEAR(r.fit->parameter("tau"), 2.9, 1e-6);
    EXPECT_NEAR(r.fit->parameter("R0"), 0.127, 1e-6);
}

TEST(Fig4, SinglePointReportsFitErrorAndKeepsData) {
    ScenarioConfig cfg;
    cfg.storage_times_ms = {1.0};
    const auto a = run_fig4(cfg, {CountMode::Sampled, 1});
    EXPECT_TRUE(a.fits.empty());
    ASSERT_EQ(a.errors.size(), 1u);
    ASSERT_EQ(a.tables[0].rows.size(), 1u);
    EXPECT_GT(std::get<double>(a.tables[0].rows[0][1]), 0.0);
}

TEST(Fig5, ExpectedCountsFollowClosedForm) {
    const ScenarioConfig cfg;
    const auto r = fig5_result(cfg, {CountMode::Expected, 2});
    const auto model = channel_fidelity_model(cfg, cfg.channels.at("S2"));
    ASSERT_EQ(r.points.size(), cfg.storage_times_ms.size());
    for (const auto& p : r.points) EXPECT_NEAR(p.fidelity, closed_form_fidelity(p.t_ms, model, cfg.detection), 1e-6);
    ASSERT_TRUE(r.fit);
    EXPECT_NEAR(r.fit->parameter("sigma_gamma"), 104.0, 1.04);
}

TEST(Fig5, NoNoiseNoDephasingIsPerfect) {
    ScenarioConfig cfg;
    cfg.detection.background_n = 0.0;
    cfg.memory.sigma_gamma_ms = 1e12;
    for (const auto& p : fig5_result(cfg, {CountMode::Expected, 1}).points) EXPECT_NEAR(p.fidelity, 1.0, 1e-12);
}

TEST(Table1, ExpectedDefaults) {
    const ScenarioConfig cfg;
    const auto pts = table1_points(cfg, {CountMode::Expected, 4});
    ASSERT_EQ(pts.size(), 7u);
    EXPECT_NEAR(row_for(pts, "S2").fidelity, 0.9657, 1e-4);
    // S6 sits at R0 = 0.08; with gamma ~ 1 the fidelity is ((1+g)x + N) / (2(x + 2N)).
    const double x = 0.23 * 0.08 * std::exp(-0.005 / 2.9), g = std::exp(-0.005 * 0.005 / (104.0 * 104.0));
    EXPECT_NEAR(row_for(pts, "S6").fidelity, ((1 + g) * x + 7e-4) / (2 * (x + 1.4e-3)), 0.08 * 5e-3);
    for (const auto& p : pts) {
        EXPECT_EQ(p.fidelity_err, 0.0);
        EXPECT_FALSE(p.projected);
    }
}

TEST(Determinism, ThreadCountAndRepeatsAreByteIdentical) {
    ScenarioConfig cfg;
    cfg.pulses_per_setting = 20000;
    cfg.mc_resamples = 50;
    const auto d1 = scratch("det1"), d4 = scratch("det4"), again = scratch("again");
    emit(run_table1(cfg, {CountMode::Sampled, 1}), {OutputFormat::Csv, OutputFormat::Json}, d1);
    emit(run_table1(cfg, {CountMode::Sampled, 4}), {OutputFormat::Csv, OutputFormat::Json}, d4);
    emit(run_table1(cfg, {CountMode::Sampled, 4}), {OutputFormat::Csv, OutputFormat::Json}, again);
    for (const char* f : {"table1.csv", "table1.json", "table1_config.json"}) {
        EXPECT_EQ(slurp(d1 / f), slurp(d4 / f)) << f;
        EXPECT_EQ(slurp(d1 / f), slurp(again / f)) << f;
        EXPECT_FALSE(slurp(d1 / f).empty()) << f;
    }
}

TEST(Determinism, SharedPointStreams) {
    ScenarioConfig cfg;
    cfg.pulses_per_setting = 20000;
    cfg.mc_resamples = 20;
    cfg.storage_times_ms = {0.005, 2.0};
    const auto f5 = fig5_result(cfg, {CountMode::Sampled, 2});
    const auto t1 = table1_points(cfg, {CountMode::Sampled, 3});
    const auto& s2 = row_for(t1, "S2");
    EXPECT_EQ(f5.points[0].fidelity, s2.fidelity);
    EXPECT_EQ(f5.points[0].fidelity_err, s2.fidelity_err);
}

TEST(Emit, UnwritableDirectoryNamesPath) {
    const fs::path blocker = scratch("blocker");
    std::ofstream(blocker) << "x";
    const fs::path target = blocker / "sub";
    try {
        emit(run_fig3(ScenarioConfig{}), {OutputFormat::Csv}, target);
        FAIL() << "expected IoError";
    } catch (const IoError& e) {
        EXPECT_NE(std::string(e.what()).find(target.string()), std::string::npos) << e.what();
    }
}

TEST(Emit, CsvQuotingAndNumbers) {
    Table t{"q", {"name", "x", "n"}, {{std::string("a,b"), 0.1, std::int64_t{3}}, {std::string("say \"hi\""), std::nan(""), std::int64_t{-1}}}};
    EXPECT_EQ(to_csv(t), "name,x,n\n\"a,b\",0.1,3\n\"say \"\"hi\"\"\",,-1\n");
}

TEST(Emit, JsonDocumentShape) {
    const auto a = run_fig4(ScenarioConfig{}, {CountMode::Expected, 1});
    const Json j = to_json(a);
    EXPECT_EQ(j["format_version"], "1.0");
    EXPECT_EQ(j["scenario"], "fig4");
    EXPECT_EQ(j["tables"]["fig4"]["columns"][0], "t_ms");
    EXPECT_TRUE(j["fits"]["exponential"]["converged"].get<bool>());
    EXPECT_FALSE(j.contains("created_at"));
    EXPECT_EQ(parse_config(j["config"]).seed, ScenarioConfig{}.seed);
}

TEST(Datasets, ParseAndReject) {
    const auto d = parse_dataset_text("# lifetime\nt_ms,value,sigma\n0,0.127,0.001\n\n2.9,0.0467,0.001\n");
    ASSERT_EQ(d.points().size(), 2u);
    EXPECT_EQ(d.points()[1].t_ms, 2.9);
    EXPECT_EQ(*d.points()[0].sigma, 0.001);
    const auto plain = parse_dataset_text("0,0.9\r\n1,0.8\r\n");
    EXPECT_FALSE(plain.points()[0].sigma.has_value());
    EXPECT_THROW(parse_dataset_text("t,v\n0,0.9\nx,0.8\n"), ConfigError);
    EXPECT_THROW(parse_dataset_text("0,0.9,0.1,7\n"), ConfigError);
    EXPECT_THROW(load_dataset("/nonexistent/data.csv"), IoError);
}

TEST(Cli, ExitCodes) {
    const fs::path out = scratch("cli");
    EXPECT_EQ(run_cli("reproduce fig3 --out " + out.string()), 0);
    EXPECT_TRUE(fs::exists(out / "fig3.csv"));
    EXPECT_EQ(run_cli("reproduce fig9"), 2);
    EXPECT_EQ(run_cli("reproduce fig3 --config /nonexistent.json"), 2);

    const fs::path bad = scratch("bad.json");
    std::ofstream(bad) << R"({"memory": {"tau": 0}})";
    EXPECT_EQ(run_cli("reproduce fig3 --config " + bad.string()), 2);

    const fs::path one = scratch("one.csv");
    std::ofstream(one) << "0,0.1\n";
    EXPECT_EQ(run_cli("fit " + one.string() + " --model exponential --out " + out.string()), 3);

    const fs::path blocker = scratch("cli_blocker");
    std::ofstream(blocker) << "x";
    EXPECT_EQ(run_cli("reproduce fig3 --out " + (blocker / "sub").string()), 4);
}
