#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "zofe/bathcorr.hpp"
#include "zofe/heom.hpp"
#include "zofe/lorentzian_fit.hpp"
#include "zofe/model.hpp"
#include "zofe/propagator.hpp"
#include "zofe/specden.hpp"
#include "zofe/trajectory.hpp"

namespace zofe {

using json = nlohmann::json;

inline constexpr int config_version = 1;

/// Schema violation at a JSON path such as "spectral_density.lambda".
class ConfigError : public InvalidArgument {
public:
    ConfigError(std::string field, const std::string& message)
        : InvalidArgument((field.empty() ? std::string("config") : field) + ": " + message), field_(std::move(field)) {}
    const std::string& field() const { return field_; }

private:
    std::string field_;
};

/// Process exit codes of the scenario runner.
enum ExitCode : int { exit_ok = 0, exit_config = 2, exit_certificate = 3, exit_partial = 4 };

struct HamiltonianSpec {
    std::string preset;  ///< "fmo_monomer" or empty for explicit matrices
    std::vector<double> energies;
    RealMatrix couplings;  ///< full symmetric matrix, zero diagonal
    double offset = 0.0;
    double coupling_scale = 1.0;
};

struct FitSpec {
    std::size_t peaks = 10;
    double lo = 1.0;
    double hi = 1500.0;
};

struct EnhanceSpec {
    std::size_t peak = 1;  ///< 1-based
    double factor = 1.0;
};

/// Spectral density of one site as configured. Drude-Lorentz and tabulated inputs are
/// fitted with antisymmetrized Lorentzians before the correlation function is expanded.
struct SdSpec {
    std::string type = "drude_lorentz";  ///< drude_lorentz | lorentzians | tabulated | zero
    double lambda = 35.0;
    double gamma = 0.0;  ///< cm^-1; 0 in input means the 50 fs default
    SpectralDensity::Peaks peaks;
    std::string path;
    FitSpec fit;
    SpectralDensity::Peaks extra_peaks;
    std::optional<EnhanceSpec> enhance;
};

struct ExpansionPolicy {
    std::vector<int> orders{4, 6, 8, 12, 16, 24};
    double max_error = 1e-3;
    double t_max = 2.0;
    std::size_t samples = 201;
    double adiabatic_cutoff = 10000.0;  ///< cm^-1, 0 propagates every term
};

struct HeomSpec {
    bool enabled = false;
    std::vector<int> depths{3, 4};
    std::vector<int> terms{1, 1};
    double tol = 1e-7;
    double threshold = 5e-3;
    double max_memory_bytes = 2e9;
};

struct MetricSpec {
    std::size_t site = 3;
    double time = 1.0;
    std::string name() const {
        std::ostringstream s;
        s << "P" << site << "(" << time << "ps)";
        return s.str();
    }
};

struct SweepSpec {
    std::string parameter;  ///< coupling_scale | expansion_order | temperature | enhance_factor
    std::vector<double> values;
    MetricSpec metric;
    std::size_t workers = 1;
    std::size_t max_points = 256;
};

struct ScenarioConfig {
    int version = config_version;
    std::string name = "scenario";
    HamiltonianSpec hamiltonian;
    std::vector<SdSpec> spectral_densities;  ///< one per site
    double lambda_eff_min = 0.0;
    double lambda_eff_max = 550.0;
    double temperature = 300.0;
    std::size_t initial_site = 1;
    double t_end = 1.0;
    IntegratorSettings integrator;
    ExpansionPolicy expansion;
    HeomSpec heom;
    std::optional<SweepSpec> sweep;
    std::string output_dir = "out";
    std::string output_prefix;
};

namespace detail {

inline std::string join_path(const std::string& a, const std::string& b) { return a.empty() ? b : a + "." + b; }

inline const json& require(const json& j, const std::string& key, const std::string& path) {
    if (!j.contains(key)) throw ConfigError(join_path(path, key), "missing required field");
    return j.at(key);
}

inline double get_number(const json& j, const std::string& path) {
    if (!j.is_number()) throw ConfigError(path, "expected a number");
    const double v = j.get<double>();
    if (!std::isfinite(v)) throw ConfigError(path, "must be finite");
    return v;
}

inline double number_or(const json& obj, const std::string& key, double fallback, const std::string& path) {
    return obj.contains(key) ? get_number(obj.at(key), join_path(path, key)) : fallback;
}

inline std::size_t count_or(const json& obj, const std::string& key, std::size_t fallback, const std::string& path,
                            std::size_t min = 0) {
    if (!obj.contains(key)) return fallback;
    const auto& v = obj.at(key);
    if (!v.is_number_integer() || v.get<long long>() < static_cast<long long>(min))
        throw ConfigError(join_path(path, key), "expected an integer >= " + std::to_string(min));
    return v.get<std::size_t>();
}

inline std::string string_or(const json& obj, const std::string& key, const std::string& fallback,
                             const std::string& path) {
    if (!obj.contains(key)) return fallback;
    if (!obj.at(key).is_string()) throw ConfigError(join_path(path, key), "expected a string");
    return obj.at(key).get<std::string>();
}

inline void check_keys(const json& obj, std::initializer_list<const char*> allowed, const std::string& path) {
    if (!obj.is_object()) throw ConfigError(path, "expected an object");
    for (const auto& [k, v] : obj.items()) {
        if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return k == a; }))
            throw ConfigError(join_path(path, k), "unknown field");
    }
}

inline std::vector<double> number_list(const json& j, const std::string& path) {
    if (!j.is_array()) throw ConfigError(path, "expected an array of numbers");
    std::vector<double> out;
    for (std::size_t i = 0; i < j.size(); ++i) out.push_back(get_number(j[i], path + "[" + std::to_string(i) + "]"));
    return out;
}

inline std::vector<int> int_list(const json& j, const std::string& path, int min) {
    if (!j.is_array() || j.empty()) throw ConfigError(path, "expected a non-empty array of integers");
    std::vector<int> out;
    for (std::size_t i = 0; i < j.size(); ++i) {
        if (!j[i].is_number_integer() || j[i].get<long long>() < min)
            throw ConfigError(path + "[" + std::to_string(i) + "]", "expected an integer >= " + std::to_string(min));
        out.push_back(j[i].get<int>());
    }
    return out;
}

inline SpectralDensity::Peaks parse_peaks(const json& j, const std::string& path) {
    if (!j.is_array()) throw ConfigError(path, "expected an array of peaks");
    SpectralDensity::Peaks out;
    for (std::size_t i = 0; i < j.size(); ++i) {
        const std::string p = path + "[" + std::to_string(i) + "]";
        check_keys(j[i], {"strength", "center", "width"}, p);
        AntisymLorentzianPeak peak{get_number(require(j[i], "strength", p), p + ".strength"),
                                   get_number(require(j[i], "center", p), p + ".center"),
                                   get_number(require(j[i], "width", p), p + ".width")};
        try {
            peak.validate();
        } catch (const InvalidArgument& e) {
            throw ConfigError(p, e.what());
        }
        out.push_back(peak);
    }
    return out;
}

inline json peaks_json(const SpectralDensity::Peaks& peaks) {
    json a = json::array();
    for (const auto& p : peaks) a.push_back({{"strength", p.strength}, {"center", p.center}, {"width", p.width}});
    return a;
}

inline SdSpec parse_sd(const json& j, const std::string& path, const std::filesystem::path& base_dir) {
    check_keys(j, {"type", "lambda", "gamma", "peaks", "path", "fit", "extra_peaks", "enhance"}, path);
    SdSpec sd;
    sd.type = string_or(j, "type", "drude_lorentz", path);
    if (sd.type == "drude_lorentz") {
        sd.lambda = number_or(j, "lambda", 35.0, path);
        sd.gamma = number_or(j, "gamma", units::inverse_fs_to_cm(50.0), path);
        if (!(sd.lambda > 0.0)) throw ConfigError(join_path(path, "lambda"), "must be > 0");
        if (!(sd.gamma > 0.0)) throw ConfigError(join_path(path, "gamma"), "must be > 0");
    } else if (sd.type == "lorentzians") {
        sd.peaks = parse_peaks(require(j, "peaks", path), join_path(path, "peaks"));
    } else if (sd.type == "tabulated") {
        const auto p = string_or(j, "path", "", path);
        if (p.empty()) throw ConfigError(join_path(path, "path"), "tabulated density needs a file path");
        const std::filesystem::path fp(p);
        sd.path = (fp.is_absolute() ? fp : base_dir / fp).lexically_normal().string();
    } else if (sd.type != "zero") {
        throw ConfigError(join_path(path, "type"),
                          "unknown type '" + sd.type + "' (expected drude_lorentz, lorentzians, tabulated or zero)");
    }
    if (j.contains("fit")) {
        const auto& f = j.at("fit");
        const auto fp = join_path(path, "fit");
        check_keys(f, {"peaks", "range"}, fp);
        sd.fit.peaks = count_or(f, "peaks", 10, fp, 1);
        if (f.contains("range")) {
            const auto r = number_list(f.at("range"), join_path(fp, "range"));
            if (r.size() != 2 || !(r[0] > 0.0) || !(r[1] > r[0]))
                throw ConfigError(join_path(fp, "range"), "expected [lo, hi] with 0 < lo < hi");
            sd.fit.lo = r[0];
            sd.fit.hi = r[1];
        }
    }
    if (j.contains("extra_peaks")) sd.extra_peaks = parse_peaks(j.at("extra_peaks"), join_path(path, "extra_peaks"));
    if (j.contains("enhance")) {
        const auto& e = j.at("enhance");
        const auto ep = join_path(path, "enhance");
        check_keys(e, {"peak", "factor"}, ep);
        EnhanceSpec en;
        en.peak = count_or(e, "peak", 1, ep, 1);
        en.factor = get_number(require(e, "factor", ep), join_path(ep, "factor"));
        if (!(en.factor >= 0.0)) throw ConfigError(join_path(ep, "factor"), "must be >= 0");
        if (sd.type == "zero") throw ConfigError(ep, "cannot enhance a zero density");
        sd.enhance = en;
    }
    return sd;
}

inline json sd_json(const SdSpec& sd) {
    json j{{"type", sd.type}};
    if (sd.type == "drude_lorentz") {
        j["lambda"] = sd.lambda;
        j["gamma"] = sd.gamma;
    } else if (sd.type == "lorentzians") {
        j["peaks"] = peaks_json(sd.peaks);
    } else if (sd.type == "tabulated") {
        j["path"] = sd.path;
    }
    j["fit"] = {{"peaks", sd.fit.peaks}, {"range", {sd.fit.lo, sd.fit.hi}}};
    j["extra_peaks"] = peaks_json(sd.extra_peaks);
    if (sd.enhance) j["enhance"] = {{"peak", sd.enhance->peak}, {"factor", sd.enhance->factor}};
    return j;
}

/// Line and column of a byte offset, for JSON syntax errors.
inline std::string line_column(const std::string& text, std::size_t byte) {
    std::size_t line = 1, col = 1;
    for (std::size_t i = 0; i < std::min(byte, text.size()); ++i) {
        if (text[i] == '\n') {
            ++line;
            col = 1;
        } else {
            ++col;
        }
    }
    return "line " + std::to_string(line) + ", column " + std::to_string(col);
}

}  // namespace detail

inline ExcitonHamiltonian build_hamiltonian(const HamiltonianSpec& spec) {
    ExcitonHamiltonian h = spec.preset == "fmo_monomer"
                               ? fmo_monomer_hamiltonian()
                               : [&] {
                                     RealMatrix m = spec.couplings;
                                     for (std::size_t i = 0; i < spec.energies.size(); ++i)
                                         m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i)) = spec.energies[i];
                                     return ExcitonHamiltonian::from_matrix(m, spec.offset);
                                 }();
    return spec.coupling_scale == 1.0 ? h : h.with_scaled_couplings(spec.coupling_scale);
}

/// Validates a parsed JSON config and fills in every default. Relative tabulated
/// paths resolve against `base_dir`.
inline ScenarioConfig parse_config(const json& j, const std::filesystem::path& base_dir = ".") {
    using namespace detail;
    check_keys(j,
               {"version", "name", "hamiltonian", "spectral_density", "lambda_eff_window", "temperature", "initial_site",
                "t_end", "sample_interval", "integrator", "expansion", "heom", "sweep", "output"},
               "");
    ScenarioConfig c;
    if (!j.contains("version") || !j.at("version").is_number_integer())
        throw ConfigError("version", "missing or not an integer");
    c.version = j.at("version").get<int>();
    if (c.version != config_version)
        throw ConfigError("version", "unsupported version " + std::to_string(c.version) + " (expected " +
                                         std::to_string(config_version) + ")");
    c.name = string_or(j, "name", "scenario", "");
    if (c.name.empty()) throw ConfigError("name", "must not be empty");

    // Hamiltonian
    const auto& hj = require(j, "hamiltonian", "");
    check_keys(hj, {"preset", "energies", "couplings", "offset", "coupling_scale"}, "hamiltonian");
    c.hamiltonian.preset = string_or(hj, "preset", "", "hamiltonian");
    c.hamiltonian.coupling_scale = number_or(hj, "coupling_scale", 1.0, "hamiltonian");
    if (!(c.hamiltonian.coupling_scale >= 0.0)) throw ConfigError("hamiltonian.coupling_scale", "must be >= 0");
    if (!c.hamiltonian.preset.empty()) {
        if (c.hamiltonian.preset != "fmo_monomer")
            throw ConfigError("hamiltonian.preset", "unknown hamiltonian '" + c.hamiltonian.preset +
                                                        "' (available: fmo_monomer)");
        if (hj.contains("energies") || hj.contains("couplings"))
            throw ConfigError("hamiltonian", "give either a preset or explicit energies/couplings, not both");
        const auto h = fmo_monomer_hamiltonian();
        c.hamiltonian.energies.assign(h.energies().data(), h.energies().data() + h.energies().size());
        c.hamiltonian.couplings = h.couplings();
        c.hamiltonian.offset = h.offset();
    } else {
        c.hamiltonian.energies = number_list(require(hj, "energies", "hamiltonian"), "hamiltonian.energies");
        const auto n = c.hamiltonian.energies.size();
        if (n == 0) throw ConfigError("hamiltonian.energies", "need at least one site");
        const auto& cj = require(hj, "couplings", "hamiltonian");
        if (!cj.is_array() || cj.size() != n)
            throw ConfigError("hamiltonian.couplings", "expected a " + std::to_string(n) + "x" + std::to_string(n) +
                                                           " matrix");
        c.hamiltonian.couplings = RealMatrix::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
        for (std::size_t r = 0; r < n; ++r) {
            const auto row = number_list(cj[r], "hamiltonian.couplings[" + std::to_string(r) + "]");
            if (row.size() != n)
                throw ConfigError("hamiltonian.couplings[" + std::to_string(r) + "]",
                                  "expected " + std::to_string(n) + " entries");
            for (std::size_t k = 0; k < n; ++k)
                c.hamiltonian.couplings(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(k)) = row[k];
        }
        c.hamiltonian.offset = number_or(hj, "offset", 0.0, "hamiltonian");
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t k = 0; k < n; ++k) {
                const double a = c.hamiltonian.couplings(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(k));
                const double b = c.hamiltonian.couplings(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(r));
                if (r == k && a != 0.0)
                    throw ConfigError("hamiltonian.couplings", "diagonal must be zero (site energies go in 'energies')");
                if (a != b) throw ConfigError("hamiltonian.couplings", "matrix is not symmetric");
            }
        c.hamiltonian.couplings.diagonal().setZero();
    }
    const std::size_t n_sites = c.hamiltonian.energies.size();

    // Spectral densities
    const json sdj = j.contains("spectral_density") ? j.at("spectral_density") : json::object();
    if (sdj.is_array()) {
        if (sdj.size() != n_sites)
            throw ConfigError("spectral_density", "expected one entry per site (" + std::to_string(n_sites) + ")");
        for (std::size_t s = 0; s < n_sites; ++s)
            c.spectral_densities.push_back(parse_sd(sdj[s], "spectral_density[" + std::to_string(s) + "]", base_dir));
    } else {
        c.spectral_densities.assign(n_sites, parse_sd(sdj, "spectral_density", base_dir));
    }
    if (j.contains("lambda_eff_window")) {
        const auto w = number_list(j.at("lambda_eff_window"), "lambda_eff_window");
        if (w.size() != 2 || !(w[0] >= 0.0) || !(w[1] > w[0]))
            throw ConfigError("lambda_eff_window", "expected [e_min, e_max] with 0 <= e_min < e_max");
        c.lambda_eff_min = w[0];
        c.lambda_eff_max = w[1];
    }

    c.temperature = get_number(require(j, "temperature", ""), "temperature");
    if (!(c.temperature >= 0.0)) throw ConfigError("temperature", "must be >= 0 K");
    c.initial_site = count_or(j, "initial_site", 1, "", 1);
    if (c.initial_site > n_sites)
        throw ConfigError("initial_site", "must be in 1.." + std::to_string(n_sites));
    c.t_end = number_or(j, "t_end", 1.0, "");
    if (!(c.t_end > 0.0)) throw ConfigError("t_end", "must be > 0");

    c.integrator.sample_interval = number_or(j, "sample_interval", 0.002, "");
    if (!(c.integrator.sample_interval > 0.0)) throw ConfigError("sample_interval", "must be > 0");
    if (j.contains("integrator")) {
        const auto& ij = j.at("integrator");
        check_keys(ij, {"method", "tol", "fixed_step"}, "integrator");
        try {
            c.integrator.method = integrator_method_from_string(string_or(ij, "method", "dopri5", "integrator"));
        } catch (const InvalidArgument& e) {
            throw ConfigError("integrator.method", e.what());
        }
        c.integrator.tol = number_or(ij, "tol", 1e-8, "integrator");
        c.integrator.fixed_step = number_or(ij, "fixed_step", 0.0002, "integrator");
    }
    if (!(c.integrator.tol > 0.0)) throw ConfigError("integrator.tol", "must be > 0");
    if (!(c.integrator.fixed_step > 0.0)) throw ConfigError("integrator.fixed_step", "must be > 0");

    if (j.contains("expansion")) {
        const auto& ej = j.at("expansion");
        check_keys(ej, {"orders", "max_error", "t_max", "samples", "adiabatic_cutoff"}, "expansion");
        if (ej.contains("orders")) c.expansion.orders = int_list(ej.at("orders"), "expansion.orders", 1);
        c.expansion.max_error = number_or(ej, "max_error", 1e-3, "expansion");
        c.expansion.t_max = number_or(ej, "t_max", 2.0, "expansion");
        c.expansion.samples = count_or(ej, "samples", 201, "expansion", 200);
        c.expansion.adiabatic_cutoff = number_or(ej, "adiabatic_cutoff", 10000.0, "expansion");
        if (!(c.expansion.max_error > 0.0)) throw ConfigError("expansion.max_error", "must be > 0");
        if (!(c.expansion.t_max > 0.0)) throw ConfigError("expansion.t_max", "must be > 0");
        if (!(c.expansion.adiabatic_cutoff >= 0.0)) throw ConfigError("expansion.adiabatic_cutoff", "must be >= 0");
    }

    if (j.contains("heom")) {
        const auto& hj2 = j.at("heom");
        check_keys(hj2, {"enabled", "depths", "terms", "tol", "threshold", "max_memory_bytes"}, "heom");
        if (hj2.contains("enabled")) {
            if (!hj2.at("enabled").is_boolean()) throw ConfigError("heom.enabled", "expected true or false");
            c.heom.enabled = hj2.at("enabled").get<bool>();
        }
        if (hj2.contains("depths")) c.heom.depths = int_list(hj2.at("depths"), "heom.depths", 1);
        if (hj2.contains("terms")) c.heom.terms = int_list(hj2.at("terms"), "heom.terms", 0);
        c.heom.tol = number_or(hj2, "tol", 1e-7, "heom");
        c.heom.threshold = number_or(hj2, "threshold", 5e-3, "heom");
        c.heom.max_memory_bytes = number_or(hj2, "max_memory_bytes", 2e9, "heom");
        if (!(c.heom.tol > 0.0)) throw ConfigError("heom.tol", "must be > 0");
    }
    if (c.heom.enabled) {
        if (c.temperature <= 0.0) throw ConfigError("heom.enabled", "the hierarchy needs temperature > 0");
        for (std::size_t s = 0; s < n_sites; ++s) {
            const auto& sd = c.spectral_densities[s];
            if (sd.type != "drude_lorentz" || !sd.extra_peaks.empty() || sd.enhance)
                throw ConfigError("heom.enabled", "the hierarchy supports plain drude_lorentz densities only");
            if (sd.lambda != c.spectral_densities[0].lambda || sd.gamma != c.spectral_densities[0].gamma)
                throw ConfigError("heom.enabled", "the hierarchy needs the same density on every site");
        }
    }

    if (j.contains("sweep")) {
        const auto& sj = j.at("sweep");
        check_keys(sj, {"parameter", "values", "metric", "workers", "max_points"}, "sweep");
        SweepSpec sw;
        sw.parameter = string_or(sj, "parameter", "", "sweep");
        static const char* params[] = {"coupling_scale", "expansion_order", "temperature", "enhance_factor"};
        if (std::none_of(std::begin(params), std::end(params), [&](const char* p) { return sw.parameter == p; }))
            throw ConfigError("sweep.parameter", "unknown parameter '" + sw.parameter +
                                                     "' (expected coupling_scale, expansion_order, temperature or "
                                                     "enhance_factor)");
        sw.values = sj.contains("values") ? number_list(sj.at("values"), "sweep.values") : std::vector<double>{};
        sw.workers = count_or(sj, "workers", 1, "sweep", 1);
        sw.max_points = count_or(sj, "max_points", 256, "sweep", 0);
        if (sw.values.size() > sw.max_points)
            throw ConfigError("sweep.values", std::to_string(sw.values.size()) + " points exceed max_points " +
                                                  std::to_string(sw.max_points));
        // Site 3 by default, or the last site of smaller systems.
        const std::size_t default_site = std::min<std::size_t>(3, n_sites);
        if (sj.contains("metric")) {
            const auto& mj = sj.at("metric");
            check_keys(mj, {"site", "time"}, "sweep.metric");
            sw.metric.site = count_or(mj, "site", default_site, "sweep.metric", 1);
            sw.metric.time = number_or(mj, "time", c.t_end, "sweep.metric");
        } else {
            sw.metric.site = default_site;
            sw.metric.time = c.t_end;
        }
        if (sw.metric.site > n_sites) throw ConfigError("sweep.metric.site", "site out of range");
        if (!(sw.metric.time >= 0.0) || sw.metric.time > c.t_end)
            throw ConfigError("sweep.metric.time", "must lie in [0, t_end]");
        if (sw.parameter == "enhance_factor" &&
            std::none_of(c.spectral_densities.begin(), c.spectral_densities.end(), [](const auto& s) { return s.enhance.has_value(); }))
            throw ConfigError("sweep.parameter", "enhance_factor sweep needs an 'enhance' block");
        for (std::size_t i = 0; i < sw.values.size(); ++i) {
            const double v = sw.values[i];
            const std::string p = "sweep.values[" + std::to_string(i) + "]";
            if (sw.parameter == "expansion_order" && (v < 1 || v != std::floor(v)))
                throw ConfigError(p, "expansion order must be a positive integer");
            if (v < 0.0) throw ConfigError(p, "must be >= 0");
        }
        c.sweep = sw;
    }

    if (j.contains("output")) {
        const auto& oj = j.at("output");
        check_keys(oj, {"dir", "prefix"}, "output");
        c.output_dir = string_or(oj, "dir", "out", "output");
        c.output_prefix = string_or(oj, "prefix", c.name, "output");
    }
    if (c.output_prefix.empty()) c.output_prefix = c.name;
    return c;
}

/// Full config with every default explicit; parse_config(to_json(c)) reproduces c.
inline json to_json(const ScenarioConfig& c) {
    json j;
    j["version"] = c.version;
    j["name"] = c.name;
    json h;
    if (!c.hamiltonian.preset.empty()) {
        h["preset"] = c.hamiltonian.preset;
    } else {
        h["energies"] = c.hamiltonian.energies;
        json rows = json::array();
        for (Eigen::Index r = 0; r < c.hamiltonian.couplings.rows(); ++r) {
            json row = json::array();
            for (Eigen::Index k = 0; k < c.hamiltonian.couplings.cols(); ++k) row.push_back(c.hamiltonian.couplings(r, k));
            rows.push_back(row);
        }
        h["couplings"] = rows;
        h["offset"] = c.hamiltonian.offset;
    }
    h["coupling_scale"] = c.hamiltonian.coupling_scale;
    j["hamiltonian"] = h;
    json sds = json::array();
    for (const auto& sd : c.spectral_densities) sds.push_back(detail::sd_json(sd));
    j["spectral_density"] = sds;
    j["lambda_eff_window"] = {c.lambda_eff_min, c.lambda_eff_max};
    j["temperature"] = c.temperature;
    j["initial_site"] = c.initial_site;
    j["t_end"] = c.t_end;
    j["sample_interval"] = c.integrator.sample_interval;
    j["integrator"] = {{"method", to_string(c.integrator.method)},
                       {"tol", c.integrator.tol},
                       {"fixed_step", c.integrator.fixed_step}};
    j["expansion"] = {{"orders", c.expansion.orders},
                      {"max_error", c.expansion.max_error},
                      {"t_max", c.expansion.t_max},
                      {"samples", c.expansion.samples},
                      {"adiabatic_cutoff", c.expansion.adiabatic_cutoff}};
    j["heom"] = {{"enabled", c.heom.enabled},     {"depths", c.heom.depths},
                 {"terms", c.heom.terms},         {"tol", c.heom.tol},
                 {"threshold", c.heom.threshold}, {"max_memory_bytes", c.heom.max_memory_bytes}};
    if (c.sweep) {
        j["sweep"] = {{"parameter", c.sweep->parameter},
                      {"values", c.sweep->values},
                      {"metric", {{"site", c.sweep->metric.site}, {"time", c.sweep->metric.time}}},
                      {"workers", c.sweep->workers},
                      {"max_points", c.sweep->max_points}};
    }
    j["output"] = {{"dir", c.output_dir}, {"prefix", c.output_prefix}};
    return j;
}

/// Reads and validates a config file. Syntax errors report line and column.
inline ScenarioConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("", "cannot open config file '" + path.string() + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    const std::string text = ss.str();
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError("", path.string() + ": " + detail::line_column(text, e.byte == 0 ? 0 : e.byte - 1) +
                                  ": invalid JSON (" + e.what() + ")");
    }
    // A run's metadata file carries the resolved config under "config".
    if (j.is_object() && !j.contains("version") && j.contains("config")) j = j.at("config");
    return parse_config(j, path.has_parent_path() ? path.parent_path() : std::filesystem::path("."));
}

/// FNV-1a 64-bit hash of the Hamiltonian's full-precision text form.
inline std::string hamiltonian_hash(const ExcitonHamiltonian& h) {
    std::string text;
    const RealMatrix m = h.matrix();
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) text += format_double(m(r, c)) + ",";
    text += format_double(h.offset());
    std::uint64_t x = 0xcbf29ce484222325ULL;
    for (unsigned char ch : text) {
        x ^= ch;
        x *= 0x100000001b3ULL;
    }
    char buf[32];
    std::snprintf(buf, sizeof buf, "fnv1a64:%016llx", static_cast<unsigned long long>(x));
    return buf;
}

/// The Lorentzian-sum density a site's spec resolves to, with fit diagnostics.
struct ResolvedDensity {
    SpectralDensity sd;
    std::optional<LorentzianFit> fit;
};

inline ResolvedDensity resolve_density(const SdSpec& spec, double e_min, double e_max) {
    ResolvedDensity out;
    LorentzianFitOptions opt;
    if (spec.type == "drude_lorentz") {
        out.fit = fit_lorentzians(SpectralDensity::drude_lorentz(spec.lambda, spec.gamma), spec.fit.peaks, spec.fit.lo,
                                  spec.fit.hi, opt);
        out.sd = SpectralDensity::lorentzians(out.fit->peaks);
    } else if (spec.type == "tabulated") {
        const auto table = TabulatedDensity::load(spec.path);
        const double lo = std::max(spec.fit.lo, table.min_frequency());
        const double hi = std::min(spec.fit.hi, table.max_frequency());
        if (!(hi > lo)) throw InvalidArgument("tabulated density does not cover the fit range");
        out.fit = fit_lorentzians(table, spec.fit.peaks, lo, hi, opt);
        out.sd = SpectralDensity::lorentzians(out.fit->peaks);
    } else if (spec.type == "lorentzians") {
        out.sd = SpectralDensity::lorentzians(spec.peaks);
    } else {
        out.sd = SpectralDensity::zero();
    }
    if (spec.enhance) {
        if (spec.enhance->peak > out.sd.peaks().size())
            throw ConfigError("spectral_density.enhance.peak",
                              "peak " + std::to_string(spec.enhance->peak) + " does not exist (density has " +
                                  std::to_string(out.sd.peaks().size()) + " peaks)");
        out.sd = SpectralDensity::lorentzians(
            enhance_peak_constrained(out.sd.peaks(), spec.enhance->peak - 1, spec.enhance->factor, e_min, e_max));
    }
    if (!spec.extra_peaks.empty()) out.sd = out.sd.with_peaks(spec.extra_peaks);
    return out;
}

struct ScenarioResult {
    int exit_code = exit_ok;
    std::string message;
    Trajectory trajectory;
    std::optional<Trajectory> heom;
    json metadata;
    std::filesystem::path csv_path, json_path;
};

/// Population of `metric.site` at the sample nearest `metric.time`.
inline double metric_value(const Trajectory& t, const MetricSpec& metric) {
    if (t.size() == 0) throw InvalidArgument("empty trajectory");
    std::size_t best = 0;
    for (std::size_t i = 1; i < t.size(); ++i)
        if (std::abs(t.times[i] - metric.time) < std::abs(t.times[best] - metric.time)) best = i;
    if (std::abs(t.times[best] - metric.time) > 1e-9) throw InvalidArgument("metric time was not reached");
    return t.populations[best].at(metric.site - 1);
}

/// Number of strict local maxima of a series.
inline std::size_t count_local_maxima(const std::vector<double>& v) {
    std::size_t n = 0;
    for (std::size_t i = 1; i + 1 < v.size(); ++i)
        if (v[i] > v[i - 1] && v[i] >= v[i + 1]) ++n;
    return n;
}

/// Runs one scenario (ignoring any sweep block) and writes <prefix>.csv and
/// <prefix>.json (plus <prefix>_heom.csv when the hierarchy is enabled).
inline ScenarioResult run_scenario(const ScenarioConfig& c, bool write_outputs = true) {
    const auto started = std::chrono::steady_clock::now();
    ScenarioResult res;
    json meta;
    meta["config"] = to_json(c);
    meta["config"].erase("sweep");
    const auto h = build_hamiltonian(c.hamiltonian);
    meta["hamiltonian_hash"] = hamiltonian_hash(h);
    meta["n_sites"] = h.n_sites();
    meta["lambda_eff_drude_lorentz_reference"] = effective_reorganization_energy(
        SpectralDensity::drude_lorentz(35.0, units::inverse_fs_to_cm(50.0)), c.lambda_eff_min, c.lambda_eff_max);
    const Temperature temp(c.temperature);

    // Distinct site densities share one expansion.
    std::map<std::string, std::shared_ptr<const ExponentialExpansion>> cache;
    std::vector<std::shared_ptr<const ExponentialExpansion>> per_site;
    json expansions = json::array();
    bool certificate_failed = false;
    std::string failure;
    for (std::size_t s = 0; s < h.n_sites(); ++s) {
        const std::string key = detail::sd_json(c.spectral_densities[s]).dump();
        if (auto it = cache.find(key); it != cache.end()) {
            per_site.push_back(it->second);
            for (auto& e : expansions)
                if (e["key"] == key) e["sites"].push_back(s + 1);
            continue;
        }
        const auto dens = resolve_density(c.spectral_densities[s], c.lambda_eff_min, c.lambda_eff_max);
        auto e = certified_expansion(dens.sd, temp, c.expansion.orders, c.expansion.t_max, c.expansion.max_error,
                                     c.expansion.samples);
        json ej;
        ej["key"] = key;
        ej["sites"] = json::array({s + 1});
        ej["order"] = e.order();
        ej["terms"] = e.size();
        ej["lambda_eff"] = effective_reorganization_energy(dens.sd, c.lambda_eff_min, c.lambda_eff_max);
        if (c.spectral_densities[s].type == "drude_lorentz")
            ej["lambda_eff_drude_lorentz"] = effective_reorganization_energy(
                SpectralDensity::drude_lorentz(c.spectral_densities[s].lambda, c.spectral_densities[s].gamma),
                c.lambda_eff_min, c.lambda_eff_max);
        if (!dens.sd.is_zero()) ej["reorganization_energy"] = reorganization_energy(dens.sd);
        ej["peaks"] = detail::peaks_json(dens.sd.peaks());
        if (dens.fit)
            ej["fit"] = {{"rms_relative_error", dens.fit->residual},
                         {"max_relative_error", dens.fit->max_relative_error},
                         {"converged", dens.fit->converged}};
        const auto& cert = *e.certificate();
        ej["certificate"] = {{"max_error", cert.max_error},
                             {"t_max", cert.t_max},
                             {"samples", cert.samples},
                             {"pruned_terms", cert.pruned_terms},
                             {"threshold", c.expansion.max_error},
                             {"passed", cert.max_error <= c.expansion.max_error}};
        ej["warnings"] = e.warnings();
        if (!(cert.max_error <= c.expansion.max_error)) {
            certificate_failed = true;
            failure = "expansion for site " + std::to_string(s + 1) + " failed its certificate (error " +
                      format_double(cert.max_error) + ")";
        }
        expansions.push_back(ej);
        auto shared = std::make_shared<const ExponentialExpansion>(std::move(e));
        cache[key] = shared;
        per_site.push_back(shared);
    }
    for (auto& e : expansions) e.erase("key");
    meta["expansions"] = expansions;
    if (certificate_failed) {
        res.exit_code = exit_certificate;
        res.message = failure;
        meta["status"] = "certificate_failed";
        meta["message"] = failure;
        res.metadata = meta;
        if (write_outputs) {
            res.json_path = std::filesystem::path(c.output_dir) / (c.output_prefix + ".json");
            write_file_atomic(res.json_path, meta.dump(2) + "\n");
        }
        return res;
    }

    PropagatorOptions popt;
    popt.max_expansion_error = c.expansion.max_error;
    popt.adiabatic_cutoff = c.expansion.adiabatic_cutoff;
    auto state = init_propagator(h, per_site, initial_site_state(h, c.initial_site), popt);
    res.trajectory = propagate(state, c.t_end, c.integrator);
    const auto& tr = res.trajectory;
    meta["integrator"] = {{"method", to_string(c.integrator.method)},
                          {"tol", c.integrator.tol},
                          {"sample_interval", c.integrator.sample_interval},
                          {"fixed_step", c.integrator.fixed_step},
                          {"accepted_steps", tr.stats.accepted},
                          {"rejected_steps", tr.stats.rejected},
                          {"rhs_evaluations", tr.stats.rhs_evaluations},
                          {"propagated_terms", state.model->n_terms()},
                          {"eliminated_terms", state.model->eliminated_terms()}};
    meta["status"] = to_string(tr.status);
    meta["diagnostics"] = {{"max_trace_dev", tr.max_trace_dev()},
                           {"max_herm_dev", tr.max_herm_dev()},
                           {"worst_min_eig", tr.worst_min_eig()}};
    if (!tr.complete()) {
        res.exit_code = exit_partial;
        res.message = "propagation stopped early (" + to_string(tr.status) + ") at t = " +
                      format_double(tr.times.empty() ? 0.0 : tr.times.back()) + " ps";
        meta["message"] = res.message;
    }

    if (c.heom.enabled && res.exit_code == exit_ok) {
        HeomSettings hs;
        hs.max_memory_bytes = c.heom.max_memory_bytes;
        IntegratorSettings is = c.integrator;
        is.method = IntegratorMethod::DormandPrince;
        is.tol = c.heom.tol;
        const DrudeLorentz dl{c.spectral_densities[0].lambda, c.spectral_densities[0].gamma};
        auto [ht, report] = heom_convergence_ladder(h, dl, temp, c.heom.depths, c.heom.terms,
                                                    initial_site_state(h, c.initial_site), c.t_end, is,
                                                    c.heom.threshold, hs);
        json rungs = json::array();
        for (const auto& r : report.rungs)
            rungs.push_back({{"depth", r.depth}, {"matsubara_terms", r.matsubara_terms}, {"difference", r.difference}});
        std::vector<double> z1, h1;
        for (std::size_t i = 0; i < tr.size(); ++i)
            if (tr.times[i] <= 0.6 + 1e-12) {
                z1.push_back(tr.populations[i][c.initial_site - 1]);
                h1.push_back(ht.populations[i][c.initial_site - 1]);
            }
        meta["heom"] = {{"rungs", rungs},
                        {"converged", report.converged},
                        {"threshold", report.threshold},
                        {"max_population_deviation_vs_zofe", max_population_deviation(tr, ht)},
                        {"initial_site_maxima_0_6ps", {{"zofe", count_local_maxima(z1)}, {"heom", count_local_maxima(h1)}}},
                        {"diagnostics",
                         {{"max_trace_dev", ht.max_trace_dev()},
                          {"max_herm_dev", ht.max_herm_dev()},
                          {"worst_min_eig", ht.worst_min_eig()}}}};
        res.heom = std::move(ht);
    }
    meta["runtime_s"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    res.metadata = meta;
    if (write_outputs) {
        const std::filesystem::path dir(c.output_dir);
        res.csv_path = dir / (c.output_prefix + ".csv");
        res.json_path = dir / (c.output_prefix + ".json");
        write_file_atomic(res.csv_path, trajectory_csv(tr));
        if (res.heom) write_file_atomic(dir / (c.output_prefix + "_heom.csv"), trajectory_csv(*res.heom));
        write_file_atomic(res.json_path, meta.dump(2) + "\n");
    }
    return res;
}

/// Config for one sweep point: the swept parameter set to `value`, output prefix
/// suffixed with the point index, sweep block removed.
inline ScenarioConfig sweep_point_config(const ScenarioConfig& c, std::size_t index) {
    if (!c.sweep) throw InvalidArgument("config has no sweep block");
    ScenarioConfig p = c;
    p.sweep.reset();
    const double v = c.sweep->values.at(index);
    const auto& param = c.sweep->parameter;
    if (param == "coupling_scale") {
        p.hamiltonian.coupling_scale = v;
    } else if (param == "expansion_order") {
        p.expansion.orders = {static_cast<int>(v)};
    } else if (param == "temperature") {
        p.temperature = v;
    } else if (param == "enhance_factor") {
        for (auto& sd : p.spectral_densities)
            if (sd.enhance) sd.enhance->factor = v;
    }
    p.output_prefix = c.output_prefix + "_p" + std::to_string(index);
    return p;
}

struct SweepRow {
    double value = 0.0;
    std::string metric;
    std::optional<double> metric_value;  ///< empty for a failed point
    int exit_code = exit_ok;
    std::string message;
};

struct SweepResult {
    std::vector<SweepRow> rows;
    int exit_code = exit_ok;
};

/// summary CSV: sweep_value,metric_name,metric_value ("failed" for failed points).
inline std::string sweep_summary_csv(const SweepResult& r) {
    std::string out = "sweep_value,metric_name,metric_value\n";
    for (const auto& row : r.rows)
        out += format_double(row.value) + "," + row.metric + "," +
               (row.metric_value ? format_double(*row.metric_value) : std::string("failed")) + "\n";
    return out;
}

/// Runs every sweep point (up to `workers` at a time) and writes <prefix>_summary.csv.
/// Rows are in input order whatever the scheduling.
inline SweepResult run_sweep(const ScenarioConfig& c, bool write_outputs = true,
                             std::optional<std::size_t> workers = std::nullopt) {
    if (!c.sweep) throw InvalidArgument("config has no sweep block");
    const auto& sw = *c.sweep;
    SweepResult result;
    result.rows.resize(sw.values.size());
    std::atomic<std::size_t> next{0};
    auto work = [&] {
        for (std::size_t i = next++; i < sw.values.size(); i = next++) {
            auto& row = result.rows[i];
            row.value = sw.values[i];
            row.metric = sw.metric.name();
            try {
                const auto point = run_scenario(sweep_point_config(c, i), write_outputs);
                row.exit_code = point.exit_code;
                row.message = point.message;
                if (point.exit_code == exit_ok) row.metric_value = metric_value(point.trajectory, sw.metric);
            } catch (const ConfigError& e) {
                row.exit_code = exit_config;
                row.message = e.what();
            } catch (const std::exception& e) {
                row.exit_code = exit_certificate;
                row.message = e.what();
            }
        }
    };
    const std::size_t n_workers = std::max<std::size_t>(1, std::min(workers.value_or(sw.workers), sw.values.size()));
    if (n_workers <= 1) {
        work();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t k = 0; k < n_workers; ++k) pool.emplace_back(work);
        for (auto& t : pool) t.join();
    }
    for (const auto& row : result.rows)
        if (row.exit_code != exit_ok) result.exit_code = exit_partial;
    if (write_outputs)
        write_file_atomic(std::filesystem::path(c.output_dir) / (c.output_prefix + "_summary.csv"),
                          sweep_summary_csv(result));
    return result;
}

// ---------------------------------------------------------------------------
// Presets
// ---------------------------------------------------------------------------

struct ScenarioPreset {
    std::string name;
    int version = 1;
    std::string description;
    json config;  ///< complete, parseable config
};

namespace detail {

inline json fmo_base(const std::string& name, double temperature, std::size_t site) {
    return json{{"version", config_version},
                {"name", name},
                {"hamiltonian", {{"preset", "fmo_monomer"}}},
                {"spectral_density", {{"type", "drude_lorentz"}, {"lambda", 35.0}, {"gamma", units::inverse_fs_to_cm(50.0)}}},
                {"temperature", temperature},
                {"initial_site", site},
                {"t_end", 1.0}};
}

/// Width (cm^-1) of each structured peak.
inline constexpr double structured_peak_width = 60.0;

/// Four equal-share peaks whose effective reorganization energy over [0, 550] equals
/// that of the Drude-Lorentz density.
inline SpectralDensity::Peaks structured_base_peaks() {
    const double target = effective_reorganization_energy(
        SpectralDensity::drude_lorentz(35.0, units::inverse_fs_to_cm(50.0)), 0.0, 550.0);
    return equal_share_peaks({70.0, 180.0, 300.0, 440.0}, structured_peak_width, target, 0.0, 550.0);
}

/// Strength giving a single peak the reorganization energy `lambda`.
inline double peak_strength_for(double lambda, double center, double width) {
    const double unit = reorganization_energy(SpectralDensity::lorentzians({{1.0, center, width}}));
    return lambda / unit;
}

}  // namespace detail

/// Enhancement factor applied to the selected peak in the structured presets; presets
/// b, c, d enhance the peaks at 180, 300 and 440 cm^-1 in turn.
inline constexpr double structured_enhancement = 2.0;

inline std::vector<ScenarioPreset> preset_catalog() {
    using detail::fmo_base;
    std::vector<ScenarioPreset> out;
    out.push_back({"fig3a", 1, "FMO monomer, Drude-Lorentz bath, 77 K, excitation on BChl 1", fmo_base("fig3a", 77.0, 1)});
    out.push_back({"fig3b", 1, "FMO monomer, Drude-Lorentz bath, 77 K, excitation on BChl 6", fmo_base("fig3b", 77.0, 6)});
    out.push_back({"fig3c", 1, "FMO monomer, Drude-Lorentz bath, 300 K, excitation on BChl 1", fmo_base("fig3c", 300.0, 1)});
    out.push_back({"fig3d", 1, "FMO monomer, Drude-Lorentz bath, 300 K, excitation on BChl 6", fmo_base("fig3d", 300.0, 6)});

    const json high_peak = json::array(
        {{{"strength", detail::peak_strength_for(35.0, 1600.0, 100.0)}, {"center", 1600.0}, {"width", 100.0}}});
    for (const auto& [name, t] : {std::pair<const char*, double>{"high_energy_peak", 77.0}, {"high_energy_peak_300", 300.0}}) {
        auto j = fmo_base(name, t, 1);
        j["spectral_density"]["extra_peaks"] = high_peak;
        out.push_back({name, 1,
                       "as fig3" + std::string(t < 100 ? "a" : "c") +
                           " plus a 1600 cm^-1 peak (width 100) adding 35 cm^-1 of reorganization energy",
                       j});
    }

    const auto base_peaks = detail::structured_base_peaks();
    const char* letters[] = {"b", "c", "d"};
    for (std::size_t k = 0; k < 3; ++k) {
        for (const auto& [suffix, t] : {std::pair<const char*, double>{"", 77.0}, {"_300", 300.0}}) {
            const std::string name = std::string("structured_sd_") + letters[k] + suffix;
            auto j = fmo_base(name, t, 1);
            j["spectral_density"] = {{"type", "lorentzians"},
                                     {"peaks", detail::peaks_json(base_peaks)},
                                     {"enhance", {{"peak", k + 2}, {"factor", structured_enhancement}}}};
            out.push_back({name, 1,
                           "four-peak density (70, 180, 300, 440 cm^-1) with peak " + std::to_string(k + 2) +
                               " enhanced, effective reorganization energy over [0, 550] held at the Drude-Lorentz "
                               "value, " + (t < 100 ? "77 K" : "300 K"),
                           j});
        }
    }

    auto scale = fmo_base("coupling_scale_125", 77.0, 1);
    scale["hamiltonian"]["coupling_scale"] = 1.25;
    out.push_back({"coupling_scale_125", 1, "as fig3a with every inter-site coupling scaled by 1.25", scale});

    auto sweep = fmo_base("coupling_scale_sweep", 77.0, 1);
    sweep["sweep"] = {{"parameter", "coupling_scale"}, {"values", {1.0, 1.25}}, {"metric", {{"site", 3}, {"time", 1.0}}}};
    out.push_back({"coupling_scale_sweep", 1, "fig3a at coupling scales 1.0 and 1.25, metric P3(1 ps)", sweep});

    auto cross = fmo_base("heom_crosscheck", 300.0, 1);
    cross["heom"] = {{"enabled", true}, {"depths", {3, 4}}, {"terms", {1, 1}}};
    out.push_back({"heom_crosscheck", 1, "fig3c propagated with ZOFE and with the hierarchy (depth ladder 3, 4)", cross});
    return out;
}

inline const ScenarioPreset& find_preset(const std::vector<ScenarioPreset>& catalog, const std::string& name) {
    for (const auto& p : catalog)
        if (p.name == name) return p;
    std::string names;
    for (const auto& p : catalog) names += (names.empty() ? "" : ", ") + p.name;
    throw ConfigError("preset", "unknown preset '" + name + "' (available: " + names + ")");
}

}  // namespace zofe
