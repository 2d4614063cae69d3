#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "zofe/units.hpp"

namespace zofe {

using RealMatrix = Eigen::MatrixXd;
using ComplexMatrix = Eigen::MatrixXcd;
using RealVector = Eigen::VectorXd;
using ComplexVector = Eigen::VectorXcd;
using Complex = std::complex<double>;

/// Electronic one-exciton Hamiltonian: site energies and symmetric couplings, all in cm^-1.
///
/// Sites are numbered 1..N in every public interface; storage is 0-based.
/// The coupling matrix has an exactly zero diagonal and is bit-identical under
/// transposition. Site energies are stored offset-subtracted; `offset` only
/// documents the subtracted constant.
class ExcitonHamiltonian {
public:
    /// `couplings` lists the strict upper triangle row by row:
    /// V_12, V_13, ..., V_1N, V_23, ..., V_{N-1,N}.
    static ExcitonHamiltonian build(std::span<const double> energies, std::span<const double> couplings,
                                    double offset = 0.0) {
        const std::size_t n = energies.size();
        if (n == 0) throw InvalidArgument("hamiltonian needs at least one site");
        if (couplings.size() != n * (n - 1) / 2)
            throw InvalidArgument("expected " + std::to_string(n * (n - 1) / 2) + " upper-triangle couplings for " +
                                  std::to_string(n) + " sites, got " + std::to_string(couplings.size()));
        auto finite = [](double v) { return std::isfinite(v); };
        if (!std::all_of(energies.begin(), energies.end(), finite) ||
            !std::all_of(couplings.begin(), couplings.end(), finite) || !std::isfinite(offset))
            throw InvalidArgument("hamiltonian entries must be finite");

        ExcitonHamiltonian h;
        h.energies_ = RealVector::Map(energies.data(), static_cast<Eigen::Index>(n));
        h.couplings_ = RealMatrix::Zero(n, n);
        std::size_t k = 0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j, ++k) {
                h.couplings_(i, j) = couplings[k];
                h.couplings_(j, i) = couplings[k];
            }
        h.offset_ = offset;
        return h;
    }

    /// Builds from a full matrix: diagonal gives energies, the upper triangle the couplings.
    static ExcitonHamiltonian from_matrix(const RealMatrix& m, double offset = 0.0) {
        if (m.rows() != m.cols()) throw InvalidArgument("hamiltonian matrix must be square");
        std::vector<double> e(m.rows()), v;
        for (Eigen::Index i = 0; i < m.rows(); ++i) {
            e[i] = m(i, i);
            for (Eigen::Index j = i + 1; j < m.cols(); ++j) v.push_back(m(i, j));
        }
        return build(e, v, offset);
    }

    std::size_t n_sites() const { return static_cast<std::size_t>(energies_.size()); }
    const RealVector& energies() const { return energies_; }
    const RealMatrix& couplings() const { return couplings_; }
    double offset() const { return offset_; }

    /// Dense H_sys in cm^-1 (offset excluded).
    RealMatrix matrix() const {
        RealMatrix h = couplings_;
        h.diagonal() = energies_;
        return h;
    }

    /// Element by 1-based site indices.
    double operator()(std::size_t n, std::size_t m) const {
        check_site(n);
        check_site(m);
        return n == m ? energies_(n - 1) : couplings_(n - 1, m - 1);
    }

    /// Copy with every coupling multiplied by `factor`; energies untouched.
    ExcitonHamiltonian with_scaled_couplings(double factor) const {
        ExcitonHamiltonian h = *this;
        h.couplings_ *= factor;
        return h;
    }

    /// Upper-triangle coupling list in the order accepted by build().
    std::vector<double> upper_couplings() const {
        std::vector<double> v;
        for (Eigen::Index i = 0; i < couplings_.rows(); ++i)
            for (Eigen::Index j = i + 1; j < couplings_.cols(); ++j) v.push_back(couplings_(i, j));
        return v;
    }

    void check_site(std::size_t site) const {
        if (site < 1 || site > n_sites())
            throw InvalidArgument("site index " + std::to_string(site) + " outside 1.." + std::to_string(n_sites()));
    }

private:
    RealVector energies_;
    RealMatrix couplings_;
    double offset_ = 0.0;
};

/// FMO monomer (BChl 1-7), 12000 cm^-1 subtracted from the site energies.
inline ExcitonHamiltonian fmo_monomer_hamiltonian() {
    static const double energies[] = {410, 530, 210, 320, 480, 630, 440};
    static const double couplings[] = {
        -87.7, 5.5, -5.9, 6.7, -13.7, -9.9,  // 1
        30.8, 8.2, 0.7, 11.8, 4.3,           // 2
        -53.5, -2.2, -9.6, 6.0,              // 3
        -70.7, -17.0, -63.3,                 // 4
        81.1, -1.3,                          // 5
        39.7,                                // 6
    };
    return ExcitonHamiltonian::build(energies, couplings, 12000.0);
}

/// Ascending eigenenergies of H_sys (cm^-1).
inline RealVector eigenenergies(const ExcitonHamiltonian& h) {
    Eigen::SelfAdjointEigenSolver<RealMatrix> es(h.matrix(), Eigen::EigenvaluesOnly);
    if (es.info() != Eigen::Success) throw NumericalError("eigensolver failed on hamiltonian");
    return es.eigenvalues();
}

/// All positive differences E_i - E_j between eigenenergies, ascending (cm^-1).
inline std::vector<double> eigen_transitions(const ExcitonHamiltonian& h) {
    const RealVector e = eigenenergies(h);
    std::vector<double> out;
    for (Eigen::Index i = 0; i < e.size(); ++i)
        for (Eigen::Index j = 0; j < i; ++j) {
            const double d = e(i) - e(j);
            if (d > 0.0) out.push_back(d);
        }
    std::sort(out.begin(), out.end());
    return out;
}

/// Reduced density matrix in the site basis. Construction checks hermiticity
/// and unit trace to 1e-12.
class DensityMatrix {
public:
    static constexpr double tolerance = 1e-12;

    explicit DensityMatrix(ComplexMatrix m) : m_(std::move(m)) {
        if (m_.rows() != m_.cols() || m_.rows() == 0) throw InvalidArgument("density matrix must be square and non-empty");
        if (!m_.allFinite()) throw InvalidArgument("density matrix has non-finite entries");
        if ((m_ - m_.adjoint()).cwiseAbs().maxCoeff() > tolerance)
            throw InvalidArgument("density matrix is not hermitian");
        if (std::abs(m_.trace() - Complex(1.0)) > tolerance) throw InvalidArgument("density matrix trace differs from 1");
    }

    std::size_t dim() const { return static_cast<std::size_t>(m_.rows()); }
    const ComplexMatrix& matrix() const { return m_; }

    static DensityMatrix maximally_mixed(std::size_t n) {
        return DensityMatrix(ComplexMatrix::Identity(n, n) / static_cast<double>(n));
    }

private:
    ComplexMatrix m_;
};

/// |pi_site><pi_site| for a 1-based site index.
inline DensityMatrix initial_site_state(const ExcitonHamiltonian& h, std::size_t site) {
    h.check_site(site);
    ComplexMatrix m = ComplexMatrix::Zero(h.n_sites(), h.n_sites());
    m(site - 1, site - 1) = 1.0;
    return DensityMatrix(std::move(m));
}

}  // namespace zofe
