#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "zofe/integrator.hpp"
#include "zofe/model.hpp"
#include "zofe/specden.hpp"
#include "zofe/trajectory.hpp"

namespace zofe {

/// Hierarchy truncation for a Drude-Lorentz bath on every site.
struct HeomSettings {
    int depth = 4;                     ///< maximum total occupation D
    int matsubara_terms = 1;           ///< K explicit Matsubara terms per site
    bool terminator = true;            ///< Markovian treatment of the Matsubara remainder
    double max_memory_bytes = 2.0e9;   ///< estimated integrator working set
};

/// One exponential of the Drude-Lorentz correlation, c exp(-nu tau); c in cm^-2, nu in cm^-1.
struct HeomTerm {
    Complex c;
    double nu;
};

/// Drude-Lorentz correlation terms: the Drude pole plus K Matsubara terms.
inline std::vector<HeomTerm> drude_matsubara_terms(const DrudeLorentz& dl, const Temperature& temp, int k_terms) {
    if (temp.is_zero()) throw InvalidArgument("hierarchy needs a temperature > 0");
    if (k_terms < 0) throw InvalidArgument("matsubara term count must be >= 0");
    const double kT = temp.kT(), lam = dl.lambda, g = dl.gamma;
    std::vector<HeomTerm> terms;
    terms.push_back({Complex(lam * g / std::tan(g / (2.0 * kT)), -lam * g), g});
    for (int k = 1; k <= k_terms; ++k) {
        const double nu = 2.0 * units::pi * k * kT;
        terms.push_back({Complex(4.0 * lam * g * kT * nu / (nu * nu - g * g), 0.0), nu});
    }
    return terms;
}

/// Coefficient of -[Q, [Q, rho]] replacing the Matsubara terms beyond the first K (cm^-1).
inline double matsubara_remainder(const DrudeLorentz& dl, const Temperature& temp, int k_terms) {
    const double kT = temp.kT(), lam = dl.lambda, g = dl.gamma;
    double r = 2.0 * lam * kT / g - lam / std::tan(g / (2.0 * kT));
    for (const auto& t : drude_matsubara_terms(dl, temp, k_terms))
        if (t.nu != g) r -= t.c.real() / t.nu;
    return r;
}

/// Occupation vectors with total at most `depth` over `modes` modes, depth-ordered,
/// with raise/lower neighbour tables (-1 outside the truncated set).
struct HierarchyIndex {
    std::size_t modes = 0;
    int depth = 0;
    std::vector<std::vector<std::uint8_t>> vectors;
    std::vector<std::int64_t> raise;  ///< [ado * modes + m]
    std::vector<std::int64_t> lower;

    std::size_t size() const { return vectors.size(); }

    /// Number of vectors without building them: C(modes + depth, depth).
    static double count(std::size_t modes, int depth) {
        double c = 1.0;
        for (int k = 1; k <= depth; ++k) c = c * static_cast<double>(modes + static_cast<std::size_t>(k)) / k;
        return c;
    }

    static HierarchyIndex build(std::size_t modes, int depth) {
        if (depth < 1) throw InvalidArgument("hierarchy depth must be >= 1");
        if (depth > 255) throw InvalidArgument("hierarchy depth too large");
        HierarchyIndex h;
        h.modes = modes;
        h.depth = depth;
        std::map<std::vector<std::uint8_t>, std::int64_t> lookup;
        std::vector<std::uint8_t> v(modes, 0);
        h.vectors.push_back(v);
        lookup[v] = 0;
        // Layer d + 1 from layer d by raising each mode at or after the last occupied one.
        std::size_t begin = 0;
        for (int d = 0; d < depth; ++d) {
            const std::size_t end = h.vectors.size();
            for (std::size_t i = begin; i < end; ++i) {
                std::size_t last = 0;
                for (std::size_t m = 0; m < modes; ++m)
                    if (h.vectors[i][m] > 0) last = m;
                for (std::size_t m = last; m < modes; ++m) {
                    auto w = h.vectors[i];
                    ++w[m];
                    lookup[w] = static_cast<std::int64_t>(h.vectors.size());
                    h.vectors.push_back(std::move(w));
                }
            }
            begin = end;
        }
        h.raise.assign(h.vectors.size() * modes, -1);
        h.lower.assign(h.vectors.size() * modes, -1);
        for (std::size_t i = 0; i < h.vectors.size(); ++i)
            for (std::size_t m = 0; m < modes; ++m) {
                auto w = h.vectors[i];
                if (w[m] > 0) {
                    --w[m];
                    h.lower[i * modes + m] = lookup.at(w);
                    ++w[m];
                }
                ++w[m];
                if (auto it = lookup.find(w); it != lookup.end()) h.raise[i * modes + m] = it->second;
            }
        return h;
    }
};

/// Hierarchy equations of motion for identical, independent Drude-Lorentz baths on
/// every site, with scaled auxiliary density operators.
///
/// Layout mirrors the ZOFE state: element (r, c) of ADO i at r + n i + n N c, so the
/// Hamiltonian commutator of all ADOs is two matrix products.
class HeomModel {
public:
    HeomModel(const ExcitonHamiltonian& h, const DrudeLorentz& dl, const Temperature& temp, const HeomSettings& s)
        : n_(static_cast<Eigen::Index>(h.n_sites())) {
        dl.validate();
        if (s.depth < 1) throw InvalidArgument("hierarchy depth must be >= 1");
        const double w = units::cm_to_rad_per_ps;
        for (const auto& t : drude_matsubara_terms(dl, temp, s.matsubara_terms)) {
            c_.push_back(t.c * w * w);
            nu_.push_back(t.nu * w);
        }
        delta_ = s.terminator ? matsubara_remainder(dl, temp, s.matsubara_terms) * w : 0.0;
        const std::size_t modes = static_cast<std::size_t>(n_) * c_.size();
        const double ados = HierarchyIndex::count(modes, s.depth);
        const double bytes = ados * static_cast<double>(n_ * n_) * sizeof(Complex) * 12.0;
        if (bytes > s.max_memory_bytes)
            throw InvalidArgument("hierarchy with " + format_double(ados) + " ADOs needs ~" + format_double(bytes) +
                                  " bytes, above the cap of " + format_double(s.max_memory_bytes));
        index_ = HierarchyIndex::build(modes, s.depth);
        hamiltonian_ = h.matrix().cast<Complex>() * w;
        damping_.resize(static_cast<Eigen::Index>(index_.size()));
        for (std::size_t i = 0; i < index_.size(); ++i) {
            double d = 0.0;
            for (std::size_t m = 0; m < modes; ++m) d += index_.vectors[i][m] * nu_[m % c_.size()];
            damping_(static_cast<Eigen::Index>(i)) = d;
        }
        const Complex mi(0.0, -1.0);
        raise_coef_.assign(index_.size() * modes, 0.0);
        lower_left_.assign(index_.size() * modes, 0.0);
        lower_right_.assign(index_.size() * modes, 0.0);
        for (std::size_t i = 0; i < index_.size(); ++i)
            for (std::size_t m = 0; m < modes; ++m) {
                const Complex ck = c_[m % c_.size()];
                const double occ = index_.vectors[i][m], ac = std::abs(ck);
                raise_coef_[i * modes + m] = mi * std::sqrt((occ + 1.0) * ac);
                if (occ > 0) {
                    lower_left_[i * modes + m] = mi * std::sqrt(occ / ac) * ck;
                    lower_right_[i * modes + m] = mi * std::sqrt(occ / ac) * std::conj(ck);
                }
            }
    }

    const HierarchyIndex& index() const { return index_; }
    Eigen::Index n_sites() const { return n_; }
    Eigen::Index state_size() const { return n_ * n_ * static_cast<Eigen::Index>(index_.size()); }

    Eigen::VectorXcd initial_state(const DensityMatrix& rho0) const {
        if (rho0.dim() != static_cast<std::size_t>(n_)) throw InvalidArgument("initial state does not match the hamiltonian");
        Eigen::VectorXcd y = Eigen::VectorXcd::Zero(state_size());
        const Eigen::Index big = n_ * static_cast<Eigen::Index>(index_.size());
        for (Eigen::Index c = 0; c < n_; ++c) y.segment(big * c, n_) = rho0.matrix().col(c);
        return y;
    }

    ComplexMatrix system_rho(const Eigen::VectorXcd& y) const {
        const Eigen::Index big = n_ * static_cast<Eigen::Index>(index_.size());
        ComplexMatrix r(n_, n_);
        for (Eigen::Index c = 0; c < n_; ++c) r.col(c) = y.segment(big * c, n_);
        return r;
    }

    void derivative(const Eigen::VectorXcd& y, Eigen::VectorXcd& dy) const {
        const Eigen::Index n = n_, na = static_cast<Eigen::Index>(index_.size()), big = n * na;
        const std::size_t nk = c_.size(), modes = index_.modes;
        dy.resize(y.size());
        Eigen::Map<const ComplexMatrix> wide(y.data(), n, big), tall(y.data(), big, n);
        Eigen::Map<ComplexMatrix> dwide(dy.data(), n, big), dtall(dy.data(), big, n);
        const Complex mi(0.0, -1.0);
        dwide.noalias() = (mi * hamiltonian_) * wide;
        dtall.noalias() -= tall * (mi * hamiltonian_);

        const Complex* x = y.data();
        Complex* d = dy.data();
        // Plane by plane (fixed column c) keeps the neighbour accesses within n N elements.
        for (Eigen::Index c = 0; c < n; ++c) {
            const Complex* xc = x + big * c;
            Complex* dc = d + big * c;
            for (Eigen::Index i = 0; i < na; ++i) {
                // -sum(n nu) rho - delta sum_s [P_s, [P_s, rho]]
                for (Eigen::Index r = 0; r < n; ++r)
                    dc[r + n * i] -= (damping_(i) + (r == c ? 0.0 : 2.0 * delta_)) * xc[r + n * i];
                for (std::size_t m = 0; m < modes; ++m) {
                    const std::size_t link = static_cast<std::size_t>(i) * modes + m;
                    const auto s = static_cast<Eigen::Index>(m / nk);
                    // -i sqrt((n+1)|c|) [P_s, rho_up]
                    if (const auto up = index_.raise[link]; up >= 0) {
                        const Complex f = raise_coef_[link];
                        dc[s + n * i] += f * xc[s + n * up];
                        if (c == s)
                            for (Eigen::Index r = 0; r < n; ++r) dc[r + n * i] -= f * xc[r + n * up];
                    }
                    // -i sqrt(n/|c|) (c P_s rho_down - c* rho_down P_s)
                    if (const auto down = index_.lower[link]; down >= 0) {
                        dc[s + n * i] += lower_left_[link] * xc[s + n * down];
                        if (c == s)
                            for (Eigen::Index r = 0; r < n; ++r) dc[r + n * i] -= lower_right_[link] * xc[r + n * down];
                    }
                }
            }
        }
    }

private:
    Eigen::Index n_;
    std::vector<Complex> c_;   // ps^-2
    std::vector<double> nu_;   // ps^-1
    double delta_ = 0.0;       // ps^-1
    HierarchyIndex index_;
    ComplexMatrix hamiltonian_;
    std::vector<Complex> raise_coef_, lower_left_, lower_right_;  // per (ado, mode) link
    Eigen::VectorXd damping_;
};

/// System trajectory from the hierarchy; same diagnostics and CSV contract as ZOFE.
inline Trajectory heom_propagate(const ExcitonHamiltonian& h, const DrudeLorentz& dl, const Temperature& temp,
                                 const HeomSettings& hs, const DensityMatrix& rho0, double t_end,
                                 const IntegratorSettings& settings = {}, bool keep_rho = false) {
    if (!(t_end > 0.0)) throw InvalidArgument("t_end must be > 0");
    const HeomModel model(h, dl, temp, hs);
    Eigen::VectorXcd y = model.initial_state(rho0);
    Trajectory traj;
    auto f = [&](double, const Eigen::VectorXcd& v, Eigen::VectorXcd& dv) { model.derivative(v, dv); };
    auto observe = [&](double t, const Eigen::VectorXcd& v) {
        traj.record(t, model.system_rho(v), keep_rho);
        return true;
    };
    if (integrate(f, y, 0.0, t_end, settings, observe, &traj.stats) == IntegrationStatus::StepUnderflow)
        traj.status = TrajectoryStatus::StepUnderflow;
    return traj;
}

struct ConvergenceRung {
    int depth = 0;
    int matsubara_terms = 0;
    double difference = 0.0;  ///< max population difference to the previous rung (0 for the first)
};

struct ConvergenceReport {
    std::vector<ConvergenceRung> rungs;
    double threshold = 5e-3;
    bool converged = false;
    double last_difference() const { return rungs.size() < 2 ? 0.0 : rungs.back().difference; }
};

/// Runs (depth, K) rungs in order; rung r uses depths[min(r, |depths|-1)] and likewise for
/// terms, over max(|depths|, |terms|) rungs. Converged when the last two rungs differ by
/// at most `threshold` in every population at every sample.
inline std::pair<Trajectory, ConvergenceReport> heom_convergence_ladder(
    const ExcitonHamiltonian& h, const DrudeLorentz& dl, const Temperature& temp, const std::vector<int>& depths,
    const std::vector<int>& terms, const DensityMatrix& rho0, double t_end, const IntegratorSettings& settings = {},
    double threshold = 5e-3, HeomSettings base = {}) {
    if (depths.empty() || terms.empty()) throw InvalidArgument("ladder needs at least one depth and one term count");
    const std::size_t rungs = std::max(depths.size(), terms.size());
    if (rungs < 2) throw InvalidArgument("ladder needs at least two rungs");
    ConvergenceReport report;
    report.threshold = threshold;
    Trajectory prev;
    for (std::size_t r = 0; r < rungs; ++r) {
        base.depth = depths[std::min(r, depths.size() - 1)];
        base.matsubara_terms = terms[std::min(r, terms.size() - 1)];
        auto traj = heom_propagate(h, dl, temp, base, rho0, t_end, settings);
        ConvergenceRung rung{base.depth, base.matsubara_terms, 0.0};
        if (r > 0) rung.difference = max_population_deviation(prev, traj);
        report.rungs.push_back(rung);
        prev = std::move(traj);
    }
    report.converged = prev.complete() && report.last_difference() <= threshold;
    return {std::move(prev), report};
}

}  // namespace zofe
