// Acceptance run: evaluates the ten criteria and prints one PASS/FAIL line each.
//
// Exit status is 0 when every criterion passes. With --expect-fail a,b,... the listed
// criteria are allowed to fail (they still print FAIL); the status is then 0 only if
// exactly those criteria fail, so the list cannot go stale silently.

#include <chrono>
#include <cstdio>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>

#include "zofe/discrete_bath.hpp"
#include "zofe/heom.hpp"
#include "zofe/scenario.hpp"

using namespace zofe;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

ScenarioConfig preset_config(const std::string& name) {
    auto c = parse_config(find_preset(preset_catalog(), name).config);
    c.heom.enabled = false;
    return c;
}

// ZOFE runs of every preset (sweep presets expanded into their points), shared by
// several criteria.
std::map<std::string, ScenarioResult>& preset_runs() {
    static std::map<std::string, ScenarioResult> runs = [] {
        std::map<std::string, ScenarioResult> out;
        for (const auto& p : preset_catalog()) {
            auto c = preset_config(p.name);
            if (c.sweep) {
                for (std::size_t i = 0; i < c.sweep->values.size(); ++i) {
                    auto point = sweep_point_config(c, i);
                    out[point.output_prefix] = run_scenario(point, false);
                }
            } else {
                out[p.name] = run_scenario(c, false);
            }
        }
        return out;
    }();
    return runs;
}

Outcome c1_invariants() {
    double trace = 0.0, herm = 0.0;
    std::string bad;
    for (const auto& [name, r] : preset_runs()) {
        if (r.exit_code != exit_ok || !r.trajectory.complete()) bad += " " + name;
        trace = std::max(trace, r.trajectory.max_trace_dev());
        herm = std::max(herm, r.trajectory.max_herm_dev());
    }
    std::string d = std::to_string(preset_runs().size()) + " runs, max trace dev " + fmt("%.2e", trace) +
                    ", max herm dev " + fmt("%.2e", herm);
    if (!bad.empty()) d += ", incomplete:" + bad;
    return {bad.empty() && trace <= 1e-8 && herm <= 1e-10, d};
}

Outcome c2_lambda_eff() {
    const double v =
        effective_reorganization_energy(SpectralDensity::drude_lorentz(35.0, units::inverse_fs_to_cm(50.0)), 0.0, 550.0);
    return {std::abs(v - 31.0) <= 0.5, "lambda_eff = " + fmt("%.4f", v) + " cm^-1 (target 31 +- 0.5)"};
}

Outcome c3_fit() {
    const auto t0 = Clock::now();
    const auto fit = fit_lorentzians(SpectralDensity::drude_lorentz(35.0, units::inverse_fs_to_cm(50.0)), 10, 1.0, 1500.0);
    const double t = seconds_since(t0);
    return {fit.max_relative_error <= 0.02 && t < 30.0,
            "max relative error " + fmt("%.4f", fit.max_relative_error) + " (<= 0.02), " + fmt("%.2f", t) + " s (< 30 s)"};
}

Outcome c4_certificates() {
    double worst = 0.0;
    std::size_t checked = 0;
    std::set<std::string> seen;
    for (const auto& p : preset_catalog()) {
        const auto c = preset_config(p.name);
        for (const auto& spec : c.spectral_densities) {
            const std::string key = detail::sd_json(spec).dump();
            if (!seen.insert(key).second) continue;
            const auto sd = resolve_density(spec, c.lambda_eff_min, c.lambda_eff_max).sd;
            for (double T : {77.0, 300.0}) {
                const auto e = certified_expansion(sd, Temperature(T), c.expansion.orders, 2.0, 1e-3, 201);
                worst = std::max(worst, e.certificate()->max_error);
                ++checked;
            }
        }
    }
    return {worst <= 1e-3, std::to_string(checked) + " expansions, worst error " + fmt("%.2e", worst) +
                               " |alpha(0)| over [0, 2 ps] (<= 1e-3)"};
}

Outcome c5_heom() {
    bool pass = true;
    std::ostringstream d;
    for (const char* name : {"fig3a", "fig3b", "fig3c", "fig3d"}) {
        const auto c = preset_config(name);
        const auto& zofe = preset_runs().at(name).trajectory;
        const auto h = build_hamiltonian(c.hamiltonian);
        IntegratorSettings is;
        is.tol = 1e-7;
        const DrudeLorentz dl{c.spectral_densities[0].lambda, c.spectral_densities[0].gamma};
        const auto [heom, report] = heom_convergence_ladder(h, dl, Temperature(c.temperature), {3, 4}, {1},
                                                            initial_site_state(h, c.initial_site), c.t_end, is);
        const double dev = max_population_deviation(zofe, heom);
        const bool cold = c.temperature < 100.0;
        bool ok = report.converged && dev <= (cold ? 0.10 : 0.05);
        d << name << ": dev " << fmt("%.3f", dev) << (cold ? " (<= 0.10)" : " (<= 0.05)");
        if (cold) {
            std::vector<double> zp, hp;
            for (std::size_t i = 0; i < zofe.size() && zofe.times[i] <= 0.6 + 1e-12; ++i) {
                zp.push_back(zofe.populations[i][0]);
                hp.push_back(heom.populations[i][0]);
            }
            const auto zm = count_local_maxima(zp), hm = count_local_maxima(hp);
            ok = ok && zm == hm;
            d << ", P1 maxima " << zm << "/" << hm;
        }
        d << ", heom D3->D4 " << fmt("%.1e", report.last_difference()) << "; ";
        pass = pass && ok;
    }
    return {pass, d.str()};
}

Outcome c6_exact() {
    // Dimer with a weak narrow peak, four explicit modes per site, bath vacuum.
    RealMatrix m(2, 2);
    m << 100.0, 100.0, 100.0, 0.0;
    const auto h = ExcitonHamiltonian::from_matrix(m);
    const double unit = reorganization_energy(SpectralDensity::lorentzians({{1.0, 200.0, 40.0}}));
    const auto sd = SpectralDensity::lorentzians({{1.0 / unit, 200.0, 40.0}});
    const auto modes = discretize_sd(sd, 4, 100.0, 300.0, 4);
    DiscretizedBathModel bath;
    bath.modes = {modes, modes};
    const auto t0 = Clock::now();
    const auto exact = discretized_bath_propagate(h, bath, initial_site_state(h, 1), 0.5);
    const double t_exact = seconds_since(t0);
    PropagatorOptions opt;
    opt.require_certificate = false;
    const auto t1 = Clock::now();
    auto st = init_propagator(h, shared_expansion(2, discrete_mode_expansion(modes)), initial_site_state(h, 1), opt);
    const auto zofe = propagate(st, 0.5);
    const double t_zofe = seconds_since(t1);
    const double dev = max_population_deviation(exact, zofe);
    return {zofe.complete() && dev <= 0.02 && t_exact + t_zofe < 60.0,
            "8 modes, dev " + fmt("%.2e", dev) + " (<= 0.02), exact " + fmt("%.1f", t_exact) + " s + zofe " +
                fmt("%.2f", t_zofe) + " s (< 60 s)"};
}

Outcome c7_high_peak() {
    const double cold = max_population_deviation(preset_runs().at("fig3a").trajectory,
                                                 preset_runs().at("high_energy_peak").trajectory);
    const double warm = max_population_deviation(preset_runs().at("fig3c").trajectory,
                                                 preset_runs().at("high_energy_peak_300").trajectory);
    return {cold <= 1e-2 && warm <= 1e-2,
            "max population change 77 K " + fmt("%.4f", cold) + ", 300 K " + fmt("%.4f", warm) + " (<= 0.01)"};
}

Outcome c8_structured() {
    const MetricSpec p3{3, 1.0};
    auto spread = [&](const std::string& suffix, double& mean) {
        double lo = 1.0, hi = 0.0, sum = 0.0;
        for (const char* k : {"b", "c", "d"}) {
            const double v = metric_value(preset_runs().at(std::string("structured_sd_") + k + suffix).trajectory, p3);
            lo = std::min(lo, v);
            hi = std::max(hi, v);
            sum += v;
        }
        mean = sum / 3.0;
        return hi - lo;
    };
    double m77 = 0.0, m300 = 0.0;
    const double s77 = spread("", m77), s300 = spread("_300", m300);
    const double ratio = s77 / s300, rel = s77 / m77;
    return {ratio >= 3.0 && rel > 0.10, "P3(1ps) spread 77 K " + fmt("%.4f", s77) + ", 300 K " + fmt("%.4f", s300) +
                                            ", ratio " + fmt("%.2f", ratio) + " (>= 3), 77 K relative " +
                                            fmt("%.3f", rel) + " (> 0.10)"};
}

Outcome c9_performance() {
    const auto t0 = Clock::now();
    const auto r = run_scenario(preset_config("fig3a"), false);
    const double t = seconds_since(t0);
    return {r.exit_code == exit_ok && t <= 60.0,
            "fig3a " + fmt("%.2f", t) + " s wall (<= 60 s; target 5 s " + (t <= 5.0 ? "met" : "missed") + ")"};
}

Outcome c10_degenerate() {
    std::ostringstream d;
    bool pass = true;
    const auto fmo = fmo_monomer_hamiltonian();
    const auto bath = certified_expansion(
        resolve_density(preset_config("fig3a").spectral_densities[0], 0.0, 550.0).sd, Temperature(77.0), {4, 6, 8, 12, 16, 24});

    // Couplings off: populations frozen.
    {
        const auto h = fmo.with_scaled_couplings(0.0);
        ComplexMatrix rho = ComplexMatrix::Zero(7, 7);
        for (int k = 0; k < 7; ++k) rho(k, k) = (k + 1) / 28.0;
        rho(0, 1) = rho(1, 0) = 0.02;
        auto st = init_propagator(h, shared_expansion(7, bath), DensityMatrix(rho));
        const auto tr = propagate(st, 1.0);
        double drift = 0.0;
        for (const auto& p : tr.populations)
            for (int k = 0; k < 7; ++k) drift = std::max(drift, std::abs(p[k] - rho(k, k).real()));
        pass = pass && tr.complete() && drift <= 1e-8;
        d << "V=0 drift " << fmt("%.1e", drift) << " (<= 1e-8); ";
    }
    // No bath: unitary.
    {
        IntegratorSettings s;
        s.tol = 1e-8;
        const auto rho0 = initial_site_state(fmo, 1);
        auto st = init_propagator(fmo, shared_expansion(7, certified_expansion(SpectralDensity::zero(), Temperature(77.0), {4})),
                                  rho0);
        const auto tr = propagate(st, 1.0, s, true);
        const Eigen::SelfAdjointEigenSolver<RealMatrix> es(fmo.matrix());
        double worst = 0.0;
        for (std::size_t i = 0; i < tr.size(); ++i) {
            ComplexVector phase(7);
            for (int k = 0; k < 7; ++k)
                phase(k) = std::polar(1.0, -es.eigenvalues()(k) * units::cm_to_rad_per_ps * tr.times[i]);
            const ComplexMatrix v = es.eigenvectors().cast<Complex>();
            const ComplexMatrix u = v * phase.asDiagonal() * v.adjoint();
            worst = std::max(worst, (tr.coherences[i] - u * rho0.matrix() * u.adjoint()).cwiseAbs().maxCoeff());
        }
        pass = pass && tr.complete() && worst <= 10.0 * s.tol;
        d << "zero bath error " << fmt("%.1e", worst) << " (<= " << fmt("%.0e", 10.0 * s.tol) << "); ";
    }
    // One site: nothing to transfer to.
    {
        const double e[] = {410.0};
        const auto h = ExcitonHamiltonian::build(e, std::span<const double>{});
        auto st = init_propagator(h, shared_expansion(1, bath), initial_site_state(h, 1));
        const auto tr = propagate(st, 1.0);
        double drift = 0.0;
        for (const auto& p : tr.populations) drift = std::max(drift, std::abs(p[0] - 1.0));
        pass = pass && tr.complete() && drift <= 1e-8;
        d << "single site drift " << fmt("%.1e", drift);
    }
    return {pass, d.str()};
}

}  // namespace

int main(int argc, char** argv) {
    std::set<int> expected_fail;
    for (int i = 1; i < argc; ++i) {
        const std::string a = argv[i];
        if (a == "--expect-fail" && i + 1 < argc) {
            std::stringstream ss(argv[++i]);
            for (std::string item; std::getline(ss, item, ',');) expected_fail.insert(std::stoi(item));
        } else {
            std::fprintf(stderr, "usage: %s [--expect-fail N[,N...]]\n", argv[0]);
            return 2;
        }
    }

    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"analytic invariants over all presets", c1_invariants},
        {"effective reorganization energy", c2_lambda_eff},
        {"10-peak Lorentzian fit", c3_fit},
        {"expansion certificates at 77 K and 300 K", c4_certificates},
        {"ZOFE vs HEOM on fig3a-d", c5_heom},
        {"ZOFE vs exact discretized bath", c6_exact},
        {"1600 cm^-1 peak irrelevance", c7_high_peak},
        {"structured density sensitivity", c8_structured},
        {"fig3 preset runtime", c9_performance},
        {"degenerate inputs", c10_degenerate},
    };

    int passed = 0;
    std::set<int> failed;
    for (std::size_t k = 0; k < criteria.size(); ++k) {
        const int id = static_cast<int>(k) + 1;
        const auto t0 = Clock::now();
        Outcome o;
        try {
            o = criteria[k].second();
        } catch (const std::exception& e) {
            o = {false, std::string("error: ") + e.what()};
        }
        std::printf("[%s] %2d %s: %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", id, criteria[k].first.c_str(),
                    o.detail.c_str(), seconds_since(t0));
        std::fflush(stdout);
        if (o.pass)
            ++passed;
        else
            failed.insert(id);
    }
    std::printf("%d/%zu criteria passed\n", passed, criteria.size());
    if (failed == expected_fail) {
        if (!failed.empty()) std::printf("failures match the documented expected set\n");
        return 0;
    }
    for (int id : failed)
        if (!expected_fail.count(id)) std::printf("unexpected failure: criterion %d\n", id);
    for (int id : expected_fail)
        if (!failed.count(id)) std::printf("criterion %d passed but is listed as expected to fail\n", id);
    return 1;
}
