// Property tests over randomly generated inputs. Each generator is seeded, so a
// failure reproduces; the failing case index is printed with the assertion.

#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "zofe/propagator.hpp"
#include "zofe/specden.hpp"

using namespace zofe;

namespace {

constexpr int cases = 60;

class Gen {
public:
    explicit Gen(std::uint64_t seed) : rng_(seed) {}

    double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }
    double log_uniform(double lo, double hi) { return std::exp(uniform(std::log(lo), std::log(hi))); }
    std::size_t index(std::size_t lo, std::size_t hi) { return std::uniform_int_distribution<std::size_t>(lo, hi)(rng_); }
    Complex normal() {
        std::normal_distribution<double> g;
        return {g(rng_), g(rng_)};
    }

    AntisymLorentzianPeak peak() { return {log_uniform(10.0, 1e5), uniform(20.0, 1500.0), uniform(5.0, 200.0)}; }

    SpectralDensity::Peaks peaks(std::size_t max_count = 5) {
        SpectralDensity::Peaks p;
        for (std::size_t k = index(1, max_count); k > 0; --k) p.push_back(peak());
        return p;
    }

    ExcitonHamiltonian hamiltonian(std::size_t n) {
        std::vector<double> e, v;
        for (std::size_t i = 0; i < n; ++i) e.push_back(uniform(0.0, 500.0));
        for (std::size_t i = 0; i < n * (n - 1) / 2; ++i) v.push_back(uniform(-100.0, 100.0));
        return ExcitonHamiltonian::build(e, v);
    }

    ComplexMatrix density(std::size_t n) {
        ComplexMatrix a(n, n);
        for (Eigen::Index i = 0; i < a.rows(); ++i)
            for (Eigen::Index j = 0; j < a.cols(); ++j) a(i, j) = normal();
        ComplexMatrix r = a * a.adjoint();
        return r / r.trace();
    }

    ExponentialExpansion expansion(std::size_t terms) {
        std::vector<ExpansionTerm> t;
        for (std::size_t k = 0; k < terms; ++k)
            t.push_back({normal() * 1000.0, Complex(uniform(-500.0, 500.0), uniform(1.0, 300.0))});
        return ExponentialExpansion(std::move(t));
    }

private:
    std::mt19937_64 rng_;
};

}  // namespace

TEST(Properties, RhsConservesTraceAndHermiticity) {
    Gen g(101);
    for (int c = 0; c < cases; ++c) {
        const std::size_t n = g.index(1, 5);
        const auto h = g.hamiltonian(n);
        std::vector<std::shared_ptr<const ExponentialExpansion>> ex;
        for (std::size_t s = 0; s < n; ++s) ex.push_back(std::make_shared<const ExponentialExpansion>(g.expansion(g.index(0, 4))));
        PropagatorOptions opt;
        opt.require_certificate = false;
        auto st = init_propagator(h, ex, DensityMatrix(g.density(n)), opt);
        for (Eigen::Index i = static_cast<Eigen::Index>(n * n); i < st.data.size(); ++i) st.data(i) = 100.0 * g.normal();
        const ComplexMatrix dr = rhs(st).rho();
        const double scale = std::max(1.0, dr.cwiseAbs().maxCoeff());
        EXPECT_LT(std::abs(dr.trace()), 1e-13 * scale) << "case " << c;
        EXPECT_LT((dr - dr.adjoint()).cwiseAbs().maxCoeff(), 1e-13 * scale) << "case " << c;
    }
}

TEST(Properties, RhsDensityPartLinearInRhoForFixedAuxiliaries) {
    // The auxiliary equations are quadratic in O, but for fixed O the density
    // derivative is linear in rho.
    Gen g(202);
    for (int c = 0; c < 20; ++c) {
        const std::size_t n = g.index(2, 4);
        const auto h = g.hamiltonian(n);
        PropagatorOptions opt;
        opt.require_certificate = false;
        auto a = init_propagator(h, shared_expansion(n, g.expansion(3)), DensityMatrix(g.density(n)), opt);
        for (Eigen::Index i = static_cast<Eigen::Index>(n * n); i < a.data.size(); ++i) a.data(i) = 10.0 * g.normal();
        auto b = a;
        const auto nn = static_cast<Eigen::Index>(n * n);
        for (Eigen::Index i = 0; i < nn; ++i) {
            a.data(i) = g.normal();
            b.data(i) = g.normal();
        }
        auto sum = a;
        sum.data.head(nn) = a.data.head(nn) + 2.5 * b.data.head(nn);
        const Eigen::VectorXcd want = rhs(a).data.head(nn) + 2.5 * rhs(b).data.head(nn);
        const Eigen::VectorXcd got = rhs(sum).data.head(nn);
        EXPECT_LT((got - want).cwiseAbs().maxCoeff(), 1e-9 * want.cwiseAbs().maxCoeff()) << "case " << c;
    }
}

TEST(Properties, SpectralDensityNonNegativeAndOdd) {
    Gen g(303);
    for (int c = 0; c < cases; ++c) {
        const auto sd = SpectralDensity::lorentzians(g.peaks());
        for (int k = 0; k < 20; ++k) {
            const double w = g.log_uniform(1e-3, 1e4);
            EXPECT_GE(sd(w), 0.0) << "case " << c << " w " << w;
            EXPECT_NEAR(sd.eval_real(-w), -sd(w), 1e-12 * std::abs(sd(w)));
        }
        EXPECT_EQ(sd(0.0), 0.0);
    }
}

TEST(Properties, SpectralDensityLinearInStrengths) {
    Gen g(404);
    for (int c = 0; c < cases; ++c) {
        const auto p = g.peaks();
        const double f = g.uniform(0.1, 5.0);
        const auto sd = SpectralDensity::lorentzians(p);
        const auto scaled = sd.scaled(f);
        for (int k = 0; k < 10; ++k) {
            const double w = g.uniform(0.0, 3000.0);
            EXPECT_NEAR(scaled(w), f * sd(w), 1e-12 * f * sd(w) + 1e-300);
        }
        EXPECT_NEAR(reorganization_energy(scaled), f * reorganization_energy(sd), 1e-10 * f * reorganization_energy(sd));
    }
}

TEST(Properties, EffectiveReorganizationNestedWindows) {
    Gen g(505);
    for (int c = 0; c < cases; ++c) {
        const auto sd = SpectralDensity::lorentzians(g.peaks());
        double a = g.uniform(0.0, 500.0), b = g.uniform(0.0, 500.0);
        if (a > b) std::swap(a, b);
        const double mid = g.uniform(a, b);
        const double outer = effective_reorganization_energy(sd, a, b + 100.0);
        const double inner = effective_reorganization_energy(sd, a, b);
        EXPECT_GE(outer, inner * (1.0 - 1e-12)) << "case " << c;
        // Additivity over adjacent windows.
        const double split = effective_reorganization_energy(sd, a, mid) + effective_reorganization_energy(sd, mid, b);
        EXPECT_NEAR(split, inner, 1e-9 * std::max(inner, 1e-12)) << "case " << c;
        EXPECT_LE(inner, reorganization_energy(sd) * (1.0 + 1e-12));
    }
}

TEST(Properties, EnhancementPreservesWindowedReorganization) {
    Gen g(606);
    int checked = 0;
    for (int c = 0; c < cases; ++c) {
        const auto p = g.peaks(6);
        if (p.size() < 2) continue;
        const std::size_t idx = g.index(0, p.size() - 1);
        const double factor = g.uniform(0.0, 1.5);
        const double before = effective_reorganization_energy(SpectralDensity::lorentzians(p), 0.0, 550.0);
        SpectralDensity::Peaks out;
        try {
            out = enhance_peak_constrained(p, idx, factor, 0.0, 550.0);
        } catch (const InvalidArgument&) {
            continue;
        }
        ++checked;
        const double after = effective_reorganization_energy(SpectralDensity::lorentzians(out), 0.0, 550.0);
        EXPECT_NEAR(after, before, 1e-9 * before) << "case " << c;
        EXPECT_NEAR(out[idx].strength, factor * p[idx].strength, 1e-12 * p[idx].strength);
        for (const auto& q : out) EXPECT_GE(q.strength, 0.0);
    }
    EXPECT_GT(checked, cases / 2);
}

TEST(Properties, ExpansionLinearAndDecaying) {
    Gen g(707);
    for (int c = 0; c < cases; ++c) {
        const auto a = g.expansion(g.index(1, 6));
        const auto b = g.expansion(g.index(1, 6));
        std::vector<ExpansionTerm> joined = a.terms();
        joined.insert(joined.end(), b.terms().begin(), b.terms().end());
        const ExponentialExpansion sum(joined);
        EXPECT_TRUE(sum.all_decaying());
        double previous_bound = std::numeric_limits<double>::infinity();
        for (double t : {0.0, 0.1, 0.5, 2.0, 10.0}) {
            EXPECT_LT(std::abs(sum(t) - a(t) - b(t)), 1e-9 * (1.0 + std::abs(sum(0.0)))) << "case " << c;
            // |alpha(t)| is bounded by sum |p| exp(-Im W t), which never grows.
            double bound = 0.0;
            for (const auto& term : joined)
                bound += std::abs(term.prefactor) * std::exp(-term.frequency.imag() * units::cm_to_rad_per_ps * t);
            EXPECT_LE(std::abs(sum(t)), bound * (1.0 + 1e-12));
            EXPECT_LE(bound, previous_bound);
            previous_bound = bound;
        }
    }
}

TEST(Properties, CoalescingKeepsValues) {
    Gen g(808);
    for (int c = 0; c < cases; ++c) {
        auto t = g.expansion(3).terms();
        t.push_back({g.normal() * 100.0, t[0].frequency});
        const ExponentialExpansion e(t);
        const auto merged = e.coalesced();
        EXPECT_LT(merged.size(), e.size());
        for (double tau : {0.0, 0.05, 0.3}) EXPECT_LT(std::abs(merged(tau) - e(tau)), 1e-10 * (1.0 + std::abs(e(tau))));
    }
}

TEST(Properties, CouplingScaleOnlyTouchesOffDiagonal) {
    Gen g(909);
    for (int c = 0; c < cases; ++c) {
        const auto h = g.hamiltonian(g.index(1, 7));
        const double f = g.uniform(0.0, 3.0);
        const auto s = h.with_scaled_couplings(f);
        const RealMatrix a = h.matrix(), b = s.matrix();
        for (Eigen::Index i = 0; i < a.rows(); ++i)
            for (Eigen::Index j = 0; j < a.cols(); ++j)
                EXPECT_NEAR(b(i, j), i == j ? a(i, j) : f * a(i, j), 1e-12 * (1.0 + std::abs(a(i, j))));
    }
}

TEST(Properties, DiagnosticsOfValidStates) {
    Gen g(1001);
    for (int c = 0; c < cases; ++c) {
        const auto d = diagnostics(g.density(g.index(1, 7)));
        EXPECT_LT(d.trace_dev, 1e-13);
        EXPECT_LT(d.herm_dev, 1e-13);
        EXPECT_GE(d.min_eig, -1e-13);
    }
}
