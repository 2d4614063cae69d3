#pragma once

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "zofe/bathcorr.hpp"
#include "zofe/integrator.hpp"
#include "zofe/model.hpp"
#include "zofe/trajectory.hpp"

namespace zofe {

/// Immutable ZOFE equations of motion for one Hamiltonian and per-site bath expansions.
///
/// Internal units: time in ps, energies as angular frequencies in rad/ps, expansion
/// prefactors in ps^-2, auxiliary operators in ps^-1.
///
/// Flat state layout (length n^2 (1 + T), T = total number of expansion terms):
///   [0, n^2)         rho, column-major
///   [n^2, n^2(1+T))  auxiliary operators; element (r, c) of term j at
///                    n^2 + r + n j + n T c.
/// With this interleaving the aux block reads as an n x nT matrix [.. X_j ..] with
/// columns (j, c) and as an nT x n matrix with rows (r, j), so both G X_j and X_j G
/// for all terms are single matrix products. Terms are ordered by site, then by the
/// term order of that site's expansion.
class ZofeModel {
public:
    ZofeModel(const ExcitonHamiltonian& h, std::vector<std::shared_ptr<const ExponentialExpansion>> expansions,
              double adiabatic_cutoff = 0.0)
        : n_(static_cast<Eigen::Index>(h.n_sites())), expansions_(std::move(expansions)) {
        if (!(adiabatic_cutoff >= 0.0)) throw InvalidArgument("adiabatic cutoff must be >= 0");
        if (expansions_.size() != h.n_sites())
            throw InvalidArgument("need one expansion per site (" + std::to_string(h.n_sites()) + "), got " +
                                  std::to_string(expansions_.size()));
        hamiltonian_ = h.matrix().cast<Complex>() * units::cm_to_rad_per_ps;
        const double w2 = units::cm_to_rad_per_ps * units::cm_to_rad_per_ps;
        static_ = ComplexVector::Zero(n_);
        for (std::size_t site = 0; site < expansions_.size(); ++site) {
            if (!expansions_[site]) throw InvalidArgument("null expansion for site " + std::to_string(site + 1));
            auto& index = term_index_.emplace_back();
            for (const auto& t : expansions_[site]->terms()) {
                index.push_back(-1);
                if (adiabatic_cutoff > 0.0 && std::abs(t.frequency) > adiabatic_cutoff) {
                    // Stationary value of dX/dt = iW X - p P with [G, X] neglected.
                    static_(static_cast<Eigen::Index>(site)) +=
                        t.prefactor * w2 / (Complex(0.0, 1.0) * t.frequency * units::cm_to_rad_per_ps);
                    ++eliminated_;
                    continue;
                }
                index.back() = static_cast<Eigen::Index>(prefactor_.size());
                prefactor_.push_back(t.prefactor * w2);
                i_frequency_.push_back(Complex(0.0, 1.0) * t.frequency * units::cm_to_rad_per_ps);
                site_.push_back(static_cast<Eigen::Index>(site));
            }
        }
    }

    Eigen::Index n_sites() const { return n_; }
    /// Terms propagated as auxiliary operators.
    Eigen::Index n_terms() const { return static_cast<Eigen::Index>(prefactor_.size()); }
    /// Terms replaced by their stationary value because |W| exceeded the adiabatic cutoff.
    std::size_t eliminated_terms() const { return eliminated_; }
    /// Diagonal element (n, n) of the stationary part of Obar_n, ps^-1.
    const ComplexVector& stationary_part() const { return static_; }
    Eigen::Index state_size() const { return n_ * n_ * (1 + n_terms()); }
    const ComplexMatrix& hamiltonian() const { return hamiltonian_; }  ///< rad/ps
    const std::vector<std::shared_ptr<const ExponentialExpansion>>& expansions() const { return expansions_; }

    using Block = Eigen::Map<ComplexMatrix, 0, Eigen::OuterStride<>>;
    using ConstBlock = Eigen::Map<const ComplexMatrix, 0, Eigen::OuterStride<>>;

    Eigen::Map<const ComplexMatrix> rho(const Eigen::VectorXcd& y) const { return {y.data(), n_, n_}; }
    ConstBlock aux(const Eigen::VectorXcd& y, Eigen::Index term) const {
        return {y.data() + n_ * n_ + n_ * term, n_, n_, Eigen::OuterStride<>(n_ * n_terms())};
    }
    Block aux(Eigen::VectorXcd& y, Eigen::Index term) const {
        return {y.data() + n_ * n_ + n_ * term, n_, n_, Eigen::OuterStride<>(n_ * n_terms())};
    }
    Eigen::Index term_site(Eigen::Index term) const { return site_[static_cast<std::size_t>(term)]; }
    /// Propagated index of term `term` of site `site` (0-based), or -1 if eliminated.
    Eigen::Index term_index(std::size_t site, std::size_t term) const { return term_index_.at(site).at(term); }

    /// Time derivative of the joint (rho, aux) state.
    ///
    /// d rho/dt   = -i[H, rho] - sum_n [P_n, rho Obar_n^+] - sum_n [Obar_n rho, P_n]
    /// d X_nj/dt  = [G, X_nj] + i W_nj X_nj - p_nj P_n,   G = sum_m P_m Obar_m - i H
    /// with Obar_n = sum_j X_nj and P_n the site projectors.
    void derivative(const Eigen::VectorXcd& y, Eigen::VectorXcd& dy) const {
        const Eigen::Index n = n_, nt = n_terms();
        dy.resize(y.size());
        const auto r = rho(y);

        ComplexMatrix obar = ComplexMatrix::Zero(n, n * n);  // column block per site
        for (Eigen::Index j = 0; j < nt; ++j) obar.middleCols(n * site_[j], n) += aux(y, j);
        for (Eigen::Index s = 0; s < n; ++s) obar(s, n * s + s) += static_(s);

        ComplexMatrix g = Complex(0.0, -1.0) * hamiltonian_;
        for (Eigen::Index m = 0; m < n; ++m) g.row(m) += obar.block(m, n * m, 1, n);

        Eigen::Map<ComplexMatrix> dr(dy.data(), n, n);
        dr.noalias() = Complex(0.0, -1.0) * (hamiltonian_ * r - r * hamiltonian_);
        for (Eigen::Index s = 0; s < n; ++s) {
            const auto o = obar.middleCols(n * s, n);
            // X = rho O^+ and Y = O rho; only row s and column s enter the commutators with P_s.
            const Eigen::RowVectorXcd x_row = r.row(s) * o.adjoint();
            const Eigen::VectorXcd x_col = r * o.row(s).adjoint();
            const Eigen::RowVectorXcd y_row = o.row(s) * r;
            const Eigen::VectorXcd y_col = o * r.col(s);
            // -[P_s, X] - [Y, P_s]
            dr.row(s) += -x_row + y_row;
            dr.col(s) += x_col - y_col;
        }

        if (nt == 0) return;
        const Complex* xa = y.data() + n * n;
        Complex* da = dy.data() + n * n;
        Eigen::Map<const ComplexMatrix> wide(xa, n, n * nt);
        Eigen::Map<const ComplexMatrix> tall(xa, n * nt, n);
        Eigen::Map<ComplexMatrix> dwide(da, n, n * nt);
        Eigen::Map<ComplexMatrix> dtall(da, n * nt, n);
        dwide.noalias() = g * wide;
        dtall.noalias() -= tall * g;
        for (Eigen::Index c = 0; c < n; ++c)
            for (Eigen::Index j = 0; j < nt; ++j) {
                const Eigen::Index off = n * j + n * nt * c;
                const Complex w = i_frequency_[static_cast<std::size_t>(j)];
                for (Eigen::Index rr = 0; rr < n; ++rr) da[off + rr] += w * xa[off + rr];
            }
        for (Eigen::Index j = 0; j < nt; ++j) {
            const Eigen::Index s = site_[static_cast<std::size_t>(j)];
            da[s + n * j + n * nt * s] -= prefactor_[static_cast<std::size_t>(j)];
        }
    }

private:
    Eigen::Index n_;
    ComplexMatrix hamiltonian_;
    std::vector<std::shared_ptr<const ExponentialExpansion>> expansions_;
    std::vector<Complex> prefactor_;
    std::vector<Complex> i_frequency_;
    std::vector<Eigen::Index> site_;
    std::vector<std::vector<Eigen::Index>> term_index_;
    ComplexVector static_;
    std::size_t eliminated_ = 0;
};

/// rho plus all auxiliary operators at one time.
struct PropagatorState {
    std::shared_ptr<const ZofeModel> model;
    double time = 0.0;
    Eigen::VectorXcd data;

    ComplexMatrix rho() const { return model->rho(data); }
    /// Auxiliary operator of expansion term `term` on `site` (both 0-based); eliminated
    /// terms report their stationary value.
    ComplexMatrix aux(std::size_t site, std::size_t term) const {
        if (site >= model->expansions().size() || term >= model->expansions()[site]->size())
            throw InvalidArgument("aux index out of range");
        const Eigen::Index j = model->term_index(site, term);
        if (j >= 0) return model->aux(data, j);
        const auto& t = model->expansions()[site]->terms()[term];
        const auto n = model->n_sites();
        ComplexMatrix x = ComplexMatrix::Zero(n, n);
        x(static_cast<Eigen::Index>(site), static_cast<Eigen::Index>(site)) =
            t.prefactor * units::cm_to_rad_per_ps / (Complex(0.0, 1.0) * t.frequency);
        return x;
    }
    std::size_t aux_count() const { return static_cast<std::size_t>(model->n_terms()); }
};

struct PropagatorOptions {
    /// Expansions whose certificate exceeds this are rejected.
    double max_expansion_error = 1e-3;
    /// Skip the certificate gate (oracle comparisons with exact expansions only).
    bool require_certificate = true;
    /// Terms with |W| above this (cm^-1) follow their stationary value instead of being
    /// propagated; 0 propagates every term.
    double adiabatic_cutoff = 0.0;
};

/// State at t = 0 with all auxiliary operators zero. Every expansion must carry a
/// certificate within `max_expansion_error`.
inline PropagatorState init_propagator(const ExcitonHamiltonian& h,
                                       std::vector<std::shared_ptr<const ExponentialExpansion>> expansions,
                                       const DensityMatrix& rho0, const PropagatorOptions& opt = {}) {
    if (rho0.dim() != h.n_sites()) throw InvalidArgument("initial density matrix does not match the hamiltonian");
    for (std::size_t s = 0; s < expansions.size(); ++s) {
        if (!expansions[s]) continue;
        if (!expansions[s]->all_decaying())
            throw InvalidArgument("expansion for site " + std::to_string(s + 1) + " has non-decaying terms");
        if (!opt.require_certificate) continue;
        const auto& cert = expansions[s]->certificate();
        if (!cert) throw NumericalError("expansion for site " + std::to_string(s + 1) + " is not certified");
        if (!(cert->max_error <= opt.max_expansion_error))
            throw NumericalError("expansion for site " + std::to_string(s + 1) + " failed its certificate: error " +
                                 format_double(cert->max_error) + " > " + format_double(opt.max_expansion_error));
    }
    PropagatorState st;
    st.model = std::make_shared<const ZofeModel>(h, std::move(expansions), opt.adiabatic_cutoff);
    st.data = Eigen::VectorXcd::Zero(st.model->state_size());
    Eigen::Map<ComplexMatrix>(st.data.data(), st.model->n_sites(), st.model->n_sites()) = rho0.matrix();
    return st;
}

/// Same bath on every site: the expansion object is shared, auxiliary operators are not.
inline std::vector<std::shared_ptr<const ExponentialExpansion>> shared_expansion(std::size_t n_sites,
                                                                                 ExponentialExpansion e) {
    auto p = std::make_shared<const ExponentialExpansion>(std::move(e));
    return std::vector<std::shared_ptr<const ExponentialExpansion>>(n_sites, p);
}

/// Time derivative of a state (same model, same time).
inline PropagatorState rhs(const PropagatorState& s) {
    PropagatorState d{s.model, s.time, Eigen::VectorXcd()};
    s.model->derivative(s.data, d.data);
    return d;
}

/// Trace deviation beyond which a propagation aborts.
inline constexpr double trace_abort_threshold = 1e-6;
/// Most negative density-matrix eigenvalue tolerated before a propagation aborts.
/// The master equation does not enforce positivity; strong narrow peaks can make the
/// auxiliary operators run away while trace and hermiticity stay intact.
inline constexpr double positivity_abort_threshold = 0.05;

/// Integrates the state to t_end, sampling populations and certificates. The state is
/// advanced in place to the last accepted sample.
inline Trajectory propagate(PropagatorState& state, double t_end, const IntegratorSettings& settings = {},
                            bool keep_rho = false) {
    if (!(t_end > state.time)) throw InvalidArgument("t_end must exceed the state time");
    Trajectory traj;
    const auto& model = *state.model;
    bool trace_broken = false, positivity_broken = false;
    auto f = [&](double, const Eigen::VectorXcd& y, Eigen::VectorXcd& dy) { model.derivative(y, dy); };
    auto observe = [&](double t, const Eigen::VectorXcd& y) {
        traj.record(t, model.rho(y), keep_rho);
        state.time = t;
        if (traj.diagnostics.back().trace_dev > trace_abort_threshold) {
            trace_broken = true;
            return false;
        }
        if (traj.diagnostics.back().min_eig < -positivity_abort_threshold) {
            positivity_broken = true;
            return false;
        }
        return true;
    };
    const auto status = integrate(f, state.data, state.time, t_end, settings, observe, &traj.stats);
    if (trace_broken)
        traj.status = TrajectoryStatus::TraceViolation;
    else if (positivity_broken)
        traj.status = TrajectoryStatus::PositivityViolation;
    else if (status == IntegrationStatus::StepUnderflow)
        traj.status = TrajectoryStatus::StepUnderflow;
    return traj;
}

}  // namespace zofe
