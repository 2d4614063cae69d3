#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <sys/wait.h>
#include <unistd.h>

#include <gtest/gtest.h>

#include "zofe/scenario.hpp"

using namespace zofe;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir() {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    const fs::path p = fs::temp_directory_path() /
                       ("zofe_" + std::string(info->test_suite_name()) + "_" + info->name() + "_" + std::to_string(::getpid()));
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void spit(const fs::path& p, const std::string& text) {
    std::ofstream out(p);
    out << text;
}

// Small, fast scenario: dimer with a two-peak bath.
json dimer_config(const fs::path& out) {
    return json{{"version", 1},
                {"name", "dimer"},
                {"hamiltonian", {{"energies", {0.0, 100.0}}, {"couplings", {{0.0, 50.0}, {50.0, 0.0}}}}},
                {"spectral_density",
                 {{"type", "lorentzians"},
                  {"peaks", {{{"strength", 6000.0}, {"center", 180.0}, {"width", 40.0}},
                             {{"strength", 2000.0}, {"center", 70.0}, {"width", 25.0}}}}}},
                {"temperature", 300.0},
                {"t_end", 0.2},
                {"integrator", {{"method", "rk4"}, {"fixed_step", 0.0005}}},
                {"output", {{"dir", out.string()}}}};
}

std::string config_error(const json& j) {
    try {
        parse_config(j);
    } catch (const ConfigError& e) {
        return e.what();
    }
    return "";
}

#ifdef ZOFE_CLI_PATH
int cli(const std::string& args, const fs::path& log) {
    const std::string cmd = std::string(ZOFE_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}
#endif

}  // namespace

TEST(Config, MinimalConfigFillsDefaults) {
    const auto c = parse_config(json{{"version", 1}, {"hamiltonian", {{"preset", "fmo_monomer"}}}, {"temperature", 77.0}});
    EXPECT_EQ(c.spectral_densities.size(), 7u);
    EXPECT_EQ(c.spectral_densities[0].type, "drude_lorentz");
    EXPECT_DOUBLE_EQ(c.spectral_densities[0].lambda, 35.0);
    EXPECT_NEAR(c.spectral_densities[0].gamma, 106.17675, 1e-4);
    EXPECT_EQ(c.initial_site, 1u);
    EXPECT_DOUBLE_EQ(c.t_end, 1.0);
    EXPECT_DOUBLE_EQ(c.lambda_eff_max, 550.0);
    EXPECT_EQ(c.output_prefix, "scenario");
    EXPECT_FALSE(c.sweep);
}

TEST(Config, UnknownFieldNamesPath) {
    auto j = dimer_config("out");
    j["spectral_density"]["colour"] = "blue";
    EXPECT_NE(config_error(j).find("spectral_density.colour: unknown field"), std::string::npos) << config_error(j);
    j = dimer_config("out");
    j["temprature"] = 77;
    EXPECT_NE(config_error(j).find("temprature"), std::string::npos);
}

TEST(Config, VersionChecked) {
    auto j = dimer_config("out");
    j["version"] = 2;
    EXPECT_NE(config_error(j).find("version"), std::string::npos);
    j.erase("version");
    EXPECT_NE(config_error(j).find("version"), std::string::npos);
}

TEST(Config, InvalidValuesRejected) {
    auto bad = [](const std::string& path, const json& value) {
        auto j = dimer_config("out");
        j[json::json_pointer(path)] = value;
        return config_error(j);
    };
    EXPECT_NE(bad("/temperature", -1.0).find("temperature"), std::string::npos);
    EXPECT_NE(bad("/initial_site", 3).find("initial_site"), std::string::npos);
    EXPECT_NE(bad("/t_end", 0.0).find("t_end"), std::string::npos);
    EXPECT_NE(bad("/integrator/method", "euler").find("integrator.method"), std::string::npos);
    EXPECT_NE(bad("/hamiltonian/couplings", json{{0.0, 50.0}, {40.0, 0.0}}).find("symmetric"), std::string::npos);
    EXPECT_NE(bad("/spectral_density/type", "ohmic").find("unknown type"), std::string::npos);
    EXPECT_NE(bad("/spectral_density/peaks/0/width", -1.0).find("spectral_density.peaks"), std::string::npos);
    EXPECT_NE(bad("/hamiltonian/preset", "lh2").find("available: fmo_monomer"), std::string::npos);
}

TEST(Config, SweepBlockValidated) {
    auto j = dimer_config("out");
    j["sweep"] = {{"parameter", "wavelength"}, {"values", {1.0}}};
    EXPECT_NE(config_error(j).find("sweep.parameter"), std::string::npos);
    j["sweep"] = {{"parameter", "coupling_scale"}, {"values", {1.0, 2.0, 3.0}}, {"max_points", 2}};
    EXPECT_NE(config_error(j).find("max_points"), std::string::npos);
    j["sweep"] = {{"parameter", "expansion_order"}, {"values", {2.5}}};
    EXPECT_NE(config_error(j).find("sweep.values[0]"), std::string::npos);
    j["sweep"] = {{"parameter", "coupling_scale"}, {"values", {1.0}}, {"metric", {{"site", 3}}}};
    EXPECT_NE(config_error(j).find("sweep.metric.site"), std::string::npos);
    j["sweep"] = {{"parameter", "enhance_factor"}, {"values", {1.0}}};
    EXPECT_NE(config_error(j).find("enhance"), std::string::npos);
}

TEST(Config, HeomNeedsUniformDrudeLorentz) {
    auto j = dimer_config("out");
    j["heom"] = {{"enabled", true}};
    EXPECT_NE(config_error(j).find("heom.enabled"), std::string::npos);
}

TEST(Config, SyntaxErrorReportsLineAndColumn) {
    const auto dir = scratch_dir();
    spit(dir / "bad.json", "{\n  \"version\": 1,\n  \"temperature\": ,\n}\n");
    try {
        load_config(dir / "bad.json");
        FAIL() << "expected a parse error";
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
        EXPECT_NE(std::string(e.what()).find("column"), std::string::npos) << e.what();
    }
    EXPECT_THROW(load_config(dir / "missing.json"), ConfigError);
}

TEST(Config, JsonRoundTrip) {
    auto j = dimer_config("out");
    j["sweep"] = {{"parameter", "temperature"}, {"values", {77.0, 300.0}}, {"metric", {{"site", 2}, {"time", 0.1}}}};
    const auto a = parse_config(j);
    const auto b = parse_config(to_json(a));
    EXPECT_EQ(to_json(a).dump(), to_json(b).dump());
    const auto fmo = parse_config(find_preset(preset_catalog(), "structured_sd_c").config);
    EXPECT_EQ(to_json(fmo).dump(), to_json(parse_config(to_json(fmo))).dump());
}

TEST(Config, TabulatedPathResolvesAgainstConfigDir) {
    const auto dir = scratch_dir();
    fs::create_directories(dir / "data");
    auto j = dimer_config(dir);
    j["spectral_density"] = {{"type", "tabulated"}, {"path", "data/j.txt"}};
    spit(dir / "cfg.json", j.dump());
    const auto c = load_config(dir / "cfg.json");
    EXPECT_EQ(fs::path(c.spectral_densities[0].path), (dir / "data/j.txt").lexically_normal());
}

TEST(Presets, CatalogShape) {
    const auto cat = preset_catalog();
    EXPECT_GE(cat.size(), 9u);
    std::set<std::string> names;
    for (const auto& p : cat) {
        EXPECT_TRUE(names.insert(p.name).second) << "duplicate " << p.name;
        EXPECT_FALSE(p.description.empty());
        EXPECT_NO_THROW(parse_config(p.config)) << p.name;
    }
    for (const char* n : {"fig3a", "fig3b", "fig3c", "fig3d", "high_energy_peak", "structured_sd_b", "structured_sd_c",
                          "structured_sd_d", "coupling_scale_125"})
        EXPECT_TRUE(names.count(n)) << n;
}

TEST(Presets, TemperaturesAndSites) {
    const auto cat = preset_catalog();
    auto cfg = [&](const char* n) { return parse_config(find_preset(cat, n).config); };
    EXPECT_DOUBLE_EQ(cfg("fig3a").temperature, 77.0);
    EXPECT_DOUBLE_EQ(cfg("fig3c").temperature, 300.0);
    EXPECT_EQ(cfg("fig3b").initial_site, 6u);
    EXPECT_EQ(cfg("fig3d").initial_site, 6u);
    EXPECT_DOUBLE_EQ(cfg("coupling_scale_125").hamiltonian.coupling_scale, 1.25);
    const auto hp = cfg("high_energy_peak");
    ASSERT_EQ(hp.spectral_densities[0].extra_peaks.size(), 1u);
    EXPECT_DOUBLE_EQ(hp.spectral_densities[0].extra_peaks[0].center, 1600.0);
    EXPECT_NEAR(reorganization_energy(SpectralDensity::lorentzians(hp.spectral_densities[0].extra_peaks)), 35.0, 1e-6);
}

TEST(Presets, UnknownNameListsAvailable) {
    try {
        find_preset(preset_catalog(), "fig9");
        FAIL();
    } catch (const ConfigError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("fig9"), std::string::npos);
        EXPECT_NE(msg.find("fig3a"), std::string::npos);
        EXPECT_NE(msg.find("structured_sd_d"), std::string::npos);
    }
}

TEST(Presets, StructuredEffectiveReorganizationMatchesReference) {
    const auto cat = preset_catalog();
    const double reference =
        effective_reorganization_energy(SpectralDensity::drude_lorentz(35.0, units::inverse_fs_to_cm(50.0)), 0.0, 550.0);
    for (const char* n : {"structured_sd_b", "structured_sd_c", "structured_sd_d", "structured_sd_b_300"}) {
        const auto c = parse_config(find_preset(cat, n).config);
        const auto d = resolve_density(c.spectral_densities[0], c.lambda_eff_min, c.lambda_eff_max);
        EXPECT_NEAR(effective_reorganization_energy(d.sd, 0.0, 550.0) / reference, 1.0, 1e-6) << n;
    }
}

TEST(Presets, StructuredVariantsDiffer) {
    const auto cat = preset_catalog();
    auto peaks = [&](const char* n) {
        const auto c = parse_config(find_preset(cat, n).config);
        return resolve_density(c.spectral_densities[0], 0.0, 550.0).sd.peaks();
    };
    const auto b = peaks("structured_sd_b"), c = peaks("structured_sd_c");
    ASSERT_EQ(b.size(), 4u);
    EXPECT_GT(b[1].strength, c[1].strength);
    EXPECT_LT(b[2].strength, c[2].strength);
}

TEST(Run, WritesOutputsAndMetadata) {
    const auto dir = scratch_dir();
    const auto c = parse_config(dimer_config(dir));
    const auto r = run_scenario(c);
    ASSERT_EQ(r.exit_code, exit_ok) << r.message;
    ASSERT_TRUE(fs::exists(r.csv_path));
    ASSERT_TRUE(fs::exists(r.json_path));
    const auto csv = slurp(r.csv_path);
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "time_ps,pop_1,pop_2,trace_dev,herm_dev,min_eig");
    const auto meta = json::parse(slurp(r.json_path));
    EXPECT_EQ(meta["status"], "completed");
    EXPECT_EQ(meta["n_sites"], 2);
    EXPECT_EQ(meta["hamiltonian_hash"].get<std::string>().rfind("fnv1a64:", 0), 0u);
    EXPECT_TRUE(meta["expansions"][0]["certificate"]["passed"].get<bool>());
    EXPECT_EQ(meta["expansions"][0]["sites"].size(), 2u);
    EXPECT_LE(meta["diagnostics"]["max_trace_dev"].get<double>(), 1e-8);
    EXPECT_FALSE(meta["config"].contains("sweep"));
}

TEST(Run, MetadataReproducesRunByteForByte) {
    const auto dir = scratch_dir();
    const auto first = run_scenario(parse_config(dimer_config(dir)));
    ASSERT_EQ(first.exit_code, exit_ok);
    const std::string csv = slurp(first.csv_path);
    auto again = load_config(first.json_path);
    again.output_dir = (dir / "again").string();
    const auto second = run_scenario(again);
    EXPECT_EQ(slurp(second.csv_path), csv);
    json stored = first.metadata["config"];
    stored["output"]["dir"] = again.output_dir;
    EXPECT_EQ(to_json(again).dump(), stored.dump());
}

TEST(Run, CertificateFailureExitCode) {
    const auto dir = scratch_dir();
    auto j = dimer_config(dir);
    j["expansion"] = {{"orders", {1}}, {"max_error", 1e-9}};
    const auto r = run_scenario(parse_config(j));
    EXPECT_EQ(r.exit_code, exit_certificate);
    EXPECT_NE(r.message.find("certificate"), std::string::npos);
    EXPECT_TRUE(fs::exists(r.json_path));
    EXPECT_FALSE(fs::exists(dir / "dimer.csv"));
}

TEST(Run, ExpansionOrderChoiceDoesNotMatter) {
    auto j = dimer_config("unused");
    j["integrator"] = {{"method", "dopri5"}, {"tol", 1e-10}};
    j["expansion"] = {{"orders", {8}}};
    const auto a = run_scenario(parse_config(j), false);
    j["expansion"] = {{"orders", {16}}};
    const auto b = run_scenario(parse_config(j), false);
    ASSERT_EQ(a.exit_code, exit_ok);
    ASSERT_EQ(b.exit_code, exit_ok);
    EXPECT_LT(max_population_deviation(a.trajectory, b.trajectory), 1e-3);
}

TEST(Run, HeomBlockReported) {
    auto j = dimer_config("unused");
    j["spectral_density"] = {{"type", "drude_lorentz"}, {"lambda", 2.0}};
    j["heom"] = {{"enabled", true}, {"depths", {2, 3}}, {"terms", {1}}};
    const auto r = run_scenario(parse_config(j), false);
    ASSERT_EQ(r.exit_code, exit_ok) << r.message;
    ASSERT_TRUE(r.heom);
    EXPECT_EQ(r.metadata["heom"]["rungs"].size(), 2u);
    EXPECT_LT(r.metadata["heom"]["max_population_deviation_vs_zofe"].get<double>(), 0.02);
    EXPECT_NEAR(r.metadata["expansions"][0]["lambda_eff_drude_lorentz"].get<double>(),
                effective_reorganization_energy(SpectralDensity::drude_lorentz(2.0, units::inverse_fs_to_cm(50.0)), 0.0,
                                                550.0),
                1e-9);
}

TEST(Metrics, LocalMaximaAndMetric) {
    EXPECT_EQ(count_local_maxima({0, 1, 0, 2, 0, 3}), 2u);
    EXPECT_EQ(count_local_maxima({1, 2, 3}), 0u);
    Trajectory t;
    ComplexMatrix rho = ComplexMatrix::Identity(3, 3) / 3.0;
    t.record(0.0, rho);
    rho(2, 2) = 0.5;
    rho(0, 0) = 1.0 / 6.0;
    t.record(0.5, rho);
    EXPECT_DOUBLE_EQ(metric_value(t, {3, 0.5}), 0.5);
    EXPECT_THROW(metric_value(t, {3, 0.25}), InvalidArgument);
    EXPECT_EQ((MetricSpec{3, 1.0}).name(), "P3(1ps)");
}

TEST(Sweep, EmptySweepProducesHeaderOnly) {
    const auto dir = scratch_dir();
    auto j = dimer_config(dir);
    j["sweep"] = {{"parameter", "coupling_scale"}, {"values", json::array()}};
    const auto r = run_sweep(parse_config(j));
    EXPECT_EQ(r.exit_code, exit_ok);
    EXPECT_TRUE(r.rows.empty());
    EXPECT_EQ(slurp(dir / "dimer_summary.csv"), "sweep_value,metric_name,metric_value\n");
}

TEST(Sweep, WorkerCountDoesNotChangeResults) {
    const auto dir = scratch_dir();
    auto j = dimer_config(dir / "serial");
    j["sweep"] = {{"parameter", "coupling_scale"}, {"values", {0.5, 1.0, 1.5, 2.0}}, {"metric", {{"site", 2}, {"time", 0.2}}}};
    const auto serial = run_sweep(parse_config(j), true, 1);
    j["output"]["dir"] = (dir / "parallel").string();
    const auto parallel = run_sweep(parse_config(j), true, 4);
    EXPECT_EQ(sweep_summary_csv(serial), sweep_summary_csv(parallel));
    EXPECT_EQ(slurp(dir / "serial" / "dimer_summary.csv"), slurp(dir / "parallel" / "dimer_summary.csv"));
    for (std::size_t i = 0; i < 4; ++i) {
        const auto name = "dimer_p" + std::to_string(i) + ".csv";
        EXPECT_EQ(slurp(dir / "serial" / name), slurp(dir / "parallel" / name)) << name;
    }
}

TEST(Sweep, FailedPointsMarkedAndExitPartial) {
    const auto dir = scratch_dir();
    auto j = dimer_config(dir);
    // Order 1 certifies to about 2e-4 for this bath, so a 1e-5 target rejects it.
    j["expansion"] = {{"max_error", 1e-5}};
    j["sweep"] = {{"parameter", "expansion_order"}, {"values", {1, 16}}, {"metric", {{"site", 1}, {"time", 0.2}}}};
    const auto r = run_sweep(parse_config(j));
    ASSERT_EQ(r.rows.size(), 2u);
    EXPECT_FALSE(r.rows[0].metric_value);
    EXPECT_TRUE(r.rows[1].metric_value);
    EXPECT_EQ(r.exit_code, exit_partial);
    EXPECT_NE(sweep_summary_csv(r).find("1,P1(0.2ps),failed"), std::string::npos) << sweep_summary_csv(r);
}

TEST(Sweep, CouplingScaleMovesTheMetric) {
    auto j = dimer_config("unused");
    j["sweep"] = {{"parameter", "coupling_scale"}, {"values", {0.0, 1.0}}, {"metric", {{"site", 2}, {"time", 0.2}}}};
    const auto r = run_sweep(parse_config(j), false);
    ASSERT_EQ(r.exit_code, exit_ok);
    EXPECT_NEAR(*r.rows[0].metric_value, 0.0, 1e-8);
    EXPECT_GT(*r.rows[1].metric_value, 0.05);
}

#ifdef ZOFE_CLI_PATH
TEST(Cli, PresetsListed) {
    const auto dir = scratch_dir();
    EXPECT_EQ(cli("presets", dir / "log"), 0);
    const auto log = slurp(dir / "log");
    EXPECT_NE(log.find("fig3a"), std::string::npos);
    EXPECT_NE(log.find("structured_sd_c"), std::string::npos);
}

TEST(Cli, ExitCodes) {
    const auto dir = scratch_dir();
    EXPECT_EQ(cli("run --preset nope", dir / "log"), exit_config);
    EXPECT_NE(slurp(dir / "log").find("available"), std::string::npos);
    EXPECT_EQ(cli("frobnicate", dir / "log"), exit_config);
    spit(dir / "bad.json", "{ \"version\": 1, ");
    EXPECT_EQ(cli("validate --config " + (dir / "bad.json").string(), dir / "log"), exit_config);

    auto j = dimer_config(dir / "out");
    spit(dir / "ok.json", j.dump());
    EXPECT_EQ(cli("validate --config " + (dir / "ok.json").string(), dir / "log"), exit_ok);
    EXPECT_EQ(cli("run --config " + (dir / "ok.json").string(), dir / "log"), exit_ok);
    EXPECT_TRUE(fs::exists(dir / "out" / "dimer.csv"));

    j["expansion"] = {{"orders", {1}}, {"max_error", 1e-9}};
    spit(dir / "cert.json", j.dump());
    EXPECT_EQ(cli("run --config " + (dir / "cert.json").string(), dir / "log"), exit_certificate);

    j = dimer_config(dir / "out");
    j["expansion"] = {{"max_error", 1e-5}};
    j["sweep"] = {{"parameter", "expansion_order"}, {"values", {1, 16}}};
    spit(dir / "sweep.json", j.dump());
    EXPECT_EQ(cli("sweep --config " + (dir / "sweep.json").string(), dir / "log"), exit_partial);
    EXPECT_NE(slurp(dir / "log").find("sweep_value,metric_name,metric_value"), std::string::npos);
}

TEST(Cli, OutDirOverridesConfig) {
    const auto dir = scratch_dir();
    spit(dir / "ok.json", dimer_config(dir / "ignored").dump());
    EXPECT_EQ(cli("run --config " + (dir / "ok.json").string() + " --out " + (dir / "chosen").string(), dir / "log"), 0);
    EXPECT_TRUE(fs::exists(dir / "chosen" / "dimer.json"));
    EXPECT_FALSE(fs::exists(dir / "ignored"));
}

TEST(Cli, PresetWithOverlayConfig) {
    const auto dir = scratch_dir();
    spit(dir / "overlay.json", json{{"t_end", 0.05}, {"name", "short"}, {"output", {{"prefix", "short"}}}}.dump());
    EXPECT_EQ(cli("run --preset fig3c --config " + (dir / "overlay.json").string() + " --out " + dir.string(), dir / "log"),
              0)
        << slurp(dir / "log");
    const auto meta = json::parse(slurp(dir / "short.json"));
    EXPECT_DOUBLE_EQ(meta["config"]["t_end"].get<double>(), 0.05);
    EXPECT_DOUBLE_EQ(meta["config"]["temperature"].get<double>(), 300.0);
}
#endif
