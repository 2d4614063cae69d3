#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "zofe/bathcorr.hpp"
#include "zofe/integrator.hpp"
#include "zofe/model.hpp"
#include "zofe/specden.hpp"
#include "zofe/trajectory.hpp"

namespace zofe {

/// One harmonic mode coupled linearly to a site: -kappa P_n (a + a^+), energy omega a^+ a.
struct BathMode {
    double omega = 0.0;  ///< cm^-1
    double kappa = 0.0;  ///< cm^-1
    int fock = 4;        ///< retained Fock states 0..fock-1
};

/// Explicit vibrational modes per site, truncated in Fock space.
struct DiscretizedBathModel {
    std::vector<std::vector<BathMode>> modes;  ///< modes[site]
    double dimension_cap = 2e5;

    /// n_sites times the product of all Fock dimensions.
    double dimension() const {
        double d = static_cast<double>(modes.size());
        for (const auto& site : modes)
            for (const auto& m : site) d *= m.fock;
        return d;
    }

    void validate(std::size_t n_sites) const {
        if (modes.size() != n_sites)
            throw InvalidArgument("bath has modes for " + std::to_string(modes.size()) + " sites, hamiltonian has " +
                                  std::to_string(n_sites));
        for (const auto& site : modes)
            for (const auto& m : site) {
                if (!(m.omega > 0.0) || !std::isfinite(m.omega)) throw InvalidArgument("mode frequency must be > 0");
                if (!std::isfinite(m.kappa)) throw InvalidArgument("mode coupling must be finite");
                if (m.fock < 2) throw InvalidArgument("each mode needs at least 2 Fock states");
            }
        if (dimension() > dimension_cap)
            throw InvalidArgument("discretized bath dimension " + format_double(dimension()) + " exceeds the cap " +
                                  format_double(dimension_cap));
    }

    /// sum kappa^2 / omega over the modes of one site.
    double reorganization_energy(std::size_t site) const {
        double s = 0.0;
        for (const auto& m : modes.at(site)) s += m.kappa * m.kappa / m.omega;
        return s;
    }
};

/// Splits [lo, hi] into n equal bins. Each bin becomes one mode with kappa^2 = int_bin J
/// and omega = int_bin J / int_bin J/omega, so every bin keeps its share of the
/// reorganization energy exactly.
inline std::vector<BathMode> discretize_sd(const SpectralDensity& sd, std::size_t n_modes, double lo, double hi,
                                           int fock = 4) {
    if (n_modes < 1) throw InvalidArgument("need at least one mode");
    if (!(lo >= 0.0) || !(hi > lo) || !std::isfinite(hi)) throw InvalidArgument("invalid discretization range");
    if (fock < 2) throw InvalidArgument("each mode needs at least 2 Fock states");
    using boost::math::quadrature::gauss_kronrod;
    std::vector<BathMode> out;
    const double width = (hi - lo) / static_cast<double>(n_modes);
    for (std::size_t k = 0; k < n_modes; ++k) {
        const double a = lo + width * static_cast<double>(k), b = a + width;
        const double weight = gauss_kronrod<double, 61>::integrate([&](double w) { return sd(w); }, a, b, 15, 1e-13);
        const double inverse = gauss_kronrod<double, 61>::integrate(
            [&](double w) { return w > 0.0 ? sd(w) / w : sd.slope_at_zero(); }, a, b, 15, 1e-13);
        if (!(weight > 0.0)) continue;
        out.push_back({weight / inverse, std::sqrt(weight), fock});
    }
    return out;
}

/// Zero-temperature correlation function of explicit modes, sum kappa^2 exp(-i omega tau).
/// `damping` (cm^-1) gives every term the small decay the propagator requires.
inline ExponentialExpansion discrete_mode_expansion(const std::vector<BathMode>& modes, double damping = 1e-9) {
    if (!(damping > 0.0)) throw InvalidArgument("damping must be > 0");
    std::vector<ExpansionTerm> terms;
    for (const auto& m : modes) terms.push_back({Complex(m.kappa * m.kappa, 0.0), Complex(-m.omega, damping)});
    return ExponentialExpansion(std::move(terms));
}

/// Propagates exp(-i H t) on one-exciton x multi-mode Fock space without storing H.
/// Basis index: site + n * (sum_k occ_k * stride_k) over all modes of all sites.
class DiscreteBathHamiltonian {
public:
    DiscreteBathHamiltonian(const ExcitonHamiltonian& h, const DiscretizedBathModel& bath)
        : n_(static_cast<Eigen::Index>(h.n_sites())) {
        bath.validate(h.n_sites());
        const double w = units::cm_to_rad_per_ps;
        system_ = h.matrix() * w;
        fock_states_ = 1;
        for (std::size_t s = 0; s < bath.modes.size(); ++s)
            for (const auto& m : bath.modes[s]) {
                modes_.push_back({static_cast<Eigen::Index>(s), m.omega * w, m.kappa * w, m.fock, fock_states_});
                fock_states_ *= m.fock;
            }
        bath_energy_.resize(fock_states_);
        for (Eigen::Index f = 0; f < fock_states_; ++f) {
            double e = 0.0;
            for (const auto& m : modes_) e += m.omega * static_cast<double>(occupation(f, m));
            bath_energy_(f) = e;
        }
    }

    Eigen::Index dimension() const { return n_ * fock_states_; }
    Eigen::Index fock_states() const { return fock_states_; }
    std::size_t mode_count() const { return modes_.size(); }

    /// y = H x (rad/ps).
    void apply(const Eigen::VectorXcd& x, Eigen::VectorXcd& y) const {
        y.resize(x.size());
        Eigen::Map<const ComplexMatrix> xm(x.data(), n_, fock_states_);
        Eigen::Map<ComplexMatrix> ym(y.data(), n_, fock_states_);
        ym.noalias() = system_.cast<Complex>() * xm;
        for (Eigen::Index f = 0; f < fock_states_; ++f) ym.col(f) += bath_energy_(f) * xm.col(f);
        // Fock index f = outer * stride * fock + occ * stride + inner, so each (outer, occ)
        // pair is a contiguous run of `stride` columns.
        for (const auto& m : modes_) {
            const Eigen::Index block = m.stride * m.fock;
            for (Eigen::Index outer = 0; outer < fock_states_; outer += block) {
                for (int occ = 0; occ + 1 < m.fock; ++occ) {
                    const double c = -m.kappa * std::sqrt(static_cast<double>(occ + 1));
                    const Eigen::Index lo = outer + occ * m.stride, hi = lo + m.stride;
                    ym.row(m.site).segment(hi, m.stride) += c * xm.row(m.site).segment(lo, m.stride);
                    ym.row(m.site).segment(lo, m.stride) += c * xm.row(m.site).segment(hi, m.stride);
                }
            }
        }
    }

    /// Reduced system density matrix of a pure state.
    ComplexMatrix reduced(const Eigen::VectorXcd& psi) const {
        Eigen::Map<const ComplexMatrix> m(psi.data(), n_, fock_states_);
        return m * m.adjoint();
    }

    /// Largest probability found in the top Fock level of any mode, with that mode's index.
    std::pair<double, std::size_t> top_level_probability(const Eigen::VectorXcd& psi) const {
        Eigen::Map<const ComplexMatrix> m(psi.data(), n_, fock_states_);
        const Eigen::VectorXd weight = m.colwise().squaredNorm().transpose();
        std::pair<double, std::size_t> worst{0.0, 0};
        for (std::size_t k = 0; k < modes_.size(); ++k) {
            double p = 0.0;
            for (Eigen::Index f = 0; f < fock_states_; ++f)
                if (occupation(f, modes_[k]) == modes_[k].fock - 1) p += weight(f);
            if (p > worst.first) worst = {p, k};
        }
        return worst;
    }

    int fock_of(std::size_t mode) const { return modes_.at(mode).fock; }
    std::size_t site_of(std::size_t mode) const { return static_cast<std::size_t>(modes_.at(mode).site); }

private:
    struct Mode {
        Eigen::Index site;
        double omega;
        double kappa;
        int fock;
        Eigen::Index stride;
    };
    static int occupation(Eigen::Index f, const Mode& m) { return static_cast<int>((f / m.stride) % m.fock); }

    Eigen::Index n_;
    RealMatrix system_;
    std::vector<Mode> modes_;
    Eigen::Index fock_states_ = 1;
    Eigen::VectorXd bath_energy_;
};

/// Lanczos approximation of exp(-i H dt) psi, split into substeps until the Krylov
/// error estimate is below `tol` (relative to the norm).
inline void krylov_step(const DiscreteBathHamiltonian& h, Eigen::VectorXcd& psi, double dt, double tol = 1e-11,
                        int krylov_dim = 30) {
    const Eigen::Index dim = psi.size();
    const int m_max = static_cast<int>(std::min<Eigen::Index>(krylov_dim, dim));
    double remaining = dt;
    double step = dt;
    std::vector<Eigen::VectorXcd> basis;
    Eigen::VectorXcd w;
    while (remaining > 0.0) {
        const double norm = psi.norm();
        basis.assign(1, psi / norm);
        std::vector<double> alpha, beta;
        int m = 0;
        double beta_last = 0.0;
        for (; m < m_max; ++m) {
            h.apply(basis[static_cast<std::size_t>(m)], w);
            const double a = basis[static_cast<std::size_t>(m)].dot(w).real();
            w -= a * basis[static_cast<std::size_t>(m)];
            if (m > 0) w -= beta.back() * basis[static_cast<std::size_t>(m - 1)];
            alpha.push_back(a);
            beta_last = w.norm();
            if (beta_last < 1e-14 * std::max(1.0, std::abs(a))) {
                ++m;
                break;
            }
            if (m + 1 < m_max) {
                beta.push_back(beta_last);
                basis.push_back(w / beta_last);
            }
        }
        const int k = static_cast<int>(alpha.size());
        RealMatrix t = RealMatrix::Zero(k, k);
        for (int i = 0; i < k; ++i) t(i, i) = alpha[static_cast<std::size_t>(i)];
        for (int i = 0; i + 1 < k; ++i) t(i, i + 1) = t(i + 1, i) = beta[static_cast<std::size_t>(i)];
        const Eigen::SelfAdjointEigenSolver<RealMatrix> es(t);
        for (step = std::min(step, remaining);; step *= 0.5) {
            const Eigen::VectorXcd phase =
                (es.eigenvalues().cast<Complex>() * Complex(0.0, -step)).array().exp().matrix();
            const Eigen::VectorXcd c = es.eigenvectors().cast<Complex>() *
                                       phase.cwiseProduct(es.eigenvectors().row(0).transpose().cast<Complex>());
            const double err = beta_last * std::abs(c(k - 1));
            if (err <= tol || beta_last < 1e-14 || step < 1e-9 * dt) {
                psi.setZero();
                for (int i = 0; i < k; ++i) psi += c(i) * basis[static_cast<std::size_t>(i)];
                psi *= norm;
                remaining -= step;
                if (err < 0.1 * tol) step *= 2.0;
                break;
            }
        }
    }
}

/// Top-Fock-level probability above which a discretized-bath run is rejected.
inline constexpr double fock_top_threshold = 1e-6;

/// Exact propagation of system plus explicit modes from the bath vacuum (T = 0).
/// A mixed rho0 is propagated as its eigen-ensemble. Throws NumericalError if any mode's
/// top Fock level is populated beyond 1e-6.
inline Trajectory discretized_bath_propagate(const ExcitonHamiltonian& h, const DiscretizedBathModel& bath,
                                             const DensityMatrix& rho0, double t_end, double sample_interval = 0.002) {
    if (rho0.dim() != h.n_sites()) throw InvalidArgument("initial state does not match the hamiltonian");
    if (!(t_end > 0.0)) throw InvalidArgument("t_end must be > 0");
    const DiscreteBathHamiltonian ham(h, bath);
    const Eigen::SelfAdjointEigenSolver<ComplexMatrix> es(rho0.matrix());
    std::vector<std::pair<double, Eigen::VectorXcd>> members;
    for (Eigen::Index k = 0; k < es.eigenvalues().size(); ++k) {
        if (es.eigenvalues()(k) < 1e-14) continue;
        Eigen::VectorXcd psi = Eigen::VectorXcd::Zero(ham.dimension());
        psi.head(static_cast<Eigen::Index>(h.n_sites())) = es.eigenvectors().col(k);
        members.emplace_back(es.eigenvalues()(k), std::move(psi));
    }
    const auto times = sample_times(0.0, t_end, sample_interval);
    Trajectory traj;
    for (std::size_t i = 0; i < times.size(); ++i) {
        ComplexMatrix rho = ComplexMatrix::Zero(rho0.matrix().rows(), rho0.matrix().cols());
        for (auto& [p, psi] : members) {
            if (i > 0) krylov_step(ham, psi, times[i] - times[i - 1]);
            const auto [top, mode] = ham.top_level_probability(psi);
            if (top > fock_top_threshold)
                throw NumericalError("fock truncation too small: mode " + std::to_string(mode + 1) + " (site " +
                                     std::to_string(ham.site_of(mode) + 1) + ") has top-level probability " +
                                     format_double(top) + " at t = " + format_double(times[i]) +
                                     " ps; try fock >= " + std::to_string(ham.fock_of(mode) + 2));
            rho += p * ham.reduced(psi);
        }
        traj.record(times[i], rho, false);
    }
    return traj;
}

}  // namespace zofe
