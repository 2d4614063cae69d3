#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "zofe/scenario.hpp"

namespace {

using namespace zofe;

// Preset as base, config file fields merged on top when both are given.
ScenarioConfig resolve(const std::string& config_path, const std::string& preset_name) {
    if (preset_name.empty()) return load_config(config_path);
    const auto catalog = preset_catalog();
    json j = find_preset(catalog, preset_name).config;
    std::filesystem::path base = ".";
    if (!config_path.empty()) {
        std::ifstream in(config_path);
        if (!in) throw ConfigError("", "cannot open config file '" + config_path + "'");
        std::stringstream ss;
        ss << in.rdbuf();
        json overlay;
        try {
            overlay = json::parse(ss.str());
        } catch (const json::parse_error& e) {
            throw ConfigError("", config_path + ": " + detail::line_column(ss.str(), e.byte == 0 ? 0 : e.byte - 1) +
                                      ": invalid JSON (" + e.what() + ")");
        }
        j.merge_patch(overlay);
        const std::filesystem::path p(config_path);
        if (p.has_parent_path()) base = p.parent_path();
    }
    return parse_config(j, base);
}

int report_scenario(const ScenarioResult& r) {
    if (!r.csv_path.empty()) std::cout << "wrote " << r.csv_path.string() << "\n";
    if (!r.json_path.empty()) std::cout << "wrote " << r.json_path.string() << "\n";
    if (r.metadata.contains("heom")) {
        const auto& h = r.metadata["heom"];
        std::cout << "heom: converged=" << h["converged"] << " max deviation vs zofe="
                  << h["max_population_deviation_vs_zofe"] << "\n";
    }
    if (r.exit_code != exit_ok) std::cerr << "error: " << r.message << "\n";
    return r.exit_code;
}

template <class F>
int guarded(F&& f) {
    try {
        return f();
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return exit_config;
    } catch (const InvalidArgument& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return exit_config;
    } catch (const std::exception& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return exit_certificate;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"ZOFE exciton transfer scenario runner"};
    app.require_subcommand(1);

    std::string config_path, preset_name, out_dir;
    std::size_t workers = 0;

    auto* run = app.add_subcommand("run", "run one scenario from a config file or a preset");
    run->add_option("--config", config_path, "JSON config (overrides preset fields when --preset is given)");
    run->add_option("--preset", preset_name, "name of a built-in preset");
    run->add_option("--out", out_dir, "output directory");

    app.add_subcommand("presets", "list the built-in presets");

    auto* sweep = app.add_subcommand("sweep", "run every point of a config's sweep block");
    sweep->add_option("--config", config_path, "JSON config with a sweep block");
    sweep->add_option("--preset", preset_name, "name of a built-in preset");
    sweep->add_option("--out", out_dir, "output directory");
    sweep->add_option("--workers", workers, "concurrent sweep points (default from config)");

    auto* validate = app.add_subcommand("validate", "check a config and print it with every default filled in");
    validate->add_option("--config", config_path, "JSON config")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : exit_config;
    }

    if (app.got_subcommand("presets")) {
        for (const auto& p : preset_catalog())
            std::cout << p.name << "  (v" << p.version << ")  " << p.description << "\n";
        return exit_ok;
    }
    if (app.got_subcommand("validate")) {
        return guarded([&] {
            const auto c = load_config(config_path);
            std::cout << to_json(c).dump(2) << "\n";
            return exit_ok;
        });
    }
    const bool is_sweep = app.got_subcommand("sweep");
    if (config_path.empty() && preset_name.empty()) {
        std::cerr << "config error: give --config and/or --preset\n";
        return exit_config;
    }
    return guarded([&] {
        auto c = resolve(config_path, preset_name);
        if (!out_dir.empty()) c.output_dir = out_dir;
        if (!is_sweep) return report_scenario(run_scenario(c));
        if (!c.sweep) throw ConfigError("sweep", "config has no sweep block");
        const auto r = run_sweep(c, true, workers > 0 ? std::optional<std::size_t>(workers) : std::nullopt);
        std::cout << sweep_summary_csv(r);
        for (const auto& row : r.rows)
            if (row.exit_code != exit_ok)
                std::cerr << "point " << format_double(row.value) << " failed: " << row.message << "\n";
        return r.exit_code;
    });
}
