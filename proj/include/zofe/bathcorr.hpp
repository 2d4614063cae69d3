#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/quadrature/exp_sinh.hpp>
#include <boost/math/quadrature/gauss.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/quadrature/ooura_fourier_integrals.hpp>
#include <unsupported/Eigen/LevenbergMarquardt>
#include <unsupported/Eigen/NumericalDiff>

#include "zofe/specden.hpp"
#include "zofe/units.hpp"

namespace zofe {

// ---------------------------------------------------------------------------
// Rational approximation of coth
// ---------------------------------------------------------------------------

/// Pole expansion coth(x) ~ sum_p r_p / (x - x_p).
///
/// Built from exp(2x) ~ [P(2x/K) / P(-2x/K)]^K with P the numerator of the
/// [3/3] Pade approximant of exp and K = 2M - 1 factors. Writing
/// A(x) = P(2x/K)^K gives coth ~ (A(x) + A(-x)) / (A(x) - A(-x)), an odd proper
/// rational function with 3K simple poles solving P(y) = e^{2 pi i k/K} P(-y),
/// k = 0..K-1, x = K y / 2. One pole sits at the origin (residue 1, as for coth);
/// the others avoid the real axis, and all but a few also leave the imaginary
/// axis. Accuracy grows with M on any fixed
/// interval; for |x| >> K the approximation decays like 1/x.
struct CothApproximation {
    int order = 0;
    int factors = 0;
    double kT = 0.0;  ///< thermal energy (cm^-1) the approximation is used with
    std::vector<Complex> poles;
    std::vector<Complex> residues;

    Complex operator()(Complex x) const {
        Complex s = 0.0;
        for (std::size_t i = 0; i < poles.size(); ++i) s += residues[i] / (x - poles[i]);
        return s;
    }
    double operator()(double x) const { return (*this)(Complex(x)).real(); }

    /// Closed form (A(x) + A(-x)) / (A(x) - A(-x)) evaluated directly, for checks.
    Complex direct(Complex x) const {
        const Complex y = 2.0 * x / static_cast<double>(factors);
        const Complex ratio = std::pow(pade_numerator(-y) / pade_numerator(y), factors);  // A(-x)/A(x)
        return (1.0 + ratio) / (1.0 - ratio);
    }

    static Complex pade_numerator(Complex y) { return 1.0 + y * (0.5 + y * (0.1 + y / 120.0)); }
    static Complex pade_numerator_derivative(Complex y) { return 0.5 + y * (0.2 + y / 40.0); }
};

namespace detail {

// Roots of P(y) - e P(-y) for P the [3/3] Pade numerator of exp.
inline std::vector<Complex> pade_ratio_roots(Complex e) {
    const double c[4] = {1.0, 0.5, 0.1, 1.0 / 120.0};
    Complex a[4];
    for (int j = 0; j < 4; ++j) a[j] = c[j] * (1.0 - e * ((j % 2) ? -1.0 : 1.0));
    // Companion matrix of the monic cubic.
    Eigen::Matrix3cd comp = Eigen::Matrix3cd::Zero();
    comp(1, 0) = 1.0;
    comp(2, 1) = 1.0;
    for (int j = 0; j < 3; ++j) comp(j, 2) = -a[j] / a[3];
    Eigen::ComplexEigenSolver<Eigen::Matrix3cd> es(comp, false);
    std::vector<Complex> roots;
    for (int j = 0; j < 3; ++j) {
        Complex y = es.eigenvalues()(j);
        for (int it = 0; it < 5; ++it) {
            const Complex g = CothApproximation::pade_numerator(y) - e * CothApproximation::pade_numerator(-y);
            const Complex dg = CothApproximation::pade_numerator_derivative(y) +
                               e * CothApproximation::pade_numerator_derivative(-y);
            if (std::abs(dg) == 0.0) break;
            y -= g / dg;
        }
        roots.push_back(y);
    }
    return roots;
}

}  // namespace detail

/// Rational coth approximation of order M >= 1 for temperature `temp` (> 0 K).
inline CothApproximation coth_rational_approx(const Temperature& temp, int order) {
    if (temp.is_zero()) throw InvalidArgument("coth approximation needs a positive temperature");
    if (order < 1) throw InvalidArgument("coth approximation order must be >= 1");
    CothApproximation c;
    c.order = order;
    c.factors = 2 * order - 1;
    c.kT = temp.kT();
    const double k_factors = static_cast<double>(c.factors);
    for (int k = 0; k < c.factors; ++k) {
        const Complex e = std::polar(1.0, 2.0 * units::pi * k / k_factors);
        for (Complex y : detail::pade_ratio_roots(e)) {
            if (k == 0 && std::abs(y) < 1e-12) y = 0.0;
            const Complex dlog = CothApproximation::pade_numerator_derivative(y) / CothApproximation::pade_numerator(y) +
                                 CothApproximation::pade_numerator_derivative(-y) / CothApproximation::pade_numerator(-y);
            c.poles.push_back(0.5 * k_factors * y);
            c.residues.push_back(1.0 / dlog);
        }
    }
    return c;
}

// ---------------------------------------------------------------------------
// Exponential expansion of the bath correlation function
// ---------------------------------------------------------------------------

/// One term p exp(i W tau): prefactor in cm^-2, frequency in cm^-1 (Im W > 0).
struct ExpansionTerm {
    Complex prefactor;
    Complex frequency;
};

/// Accuracy of an expansion against direct quadrature of the correlation function.
struct ExpansionErrorReport {
    double max_error = 0.0;  ///< max_t |alpha_exp(t) - alpha(t)| / |alpha(0)|
    double t_max = 0.0;      ///< ps
    std::size_t samples = 0;
    std::size_t pruned_terms = 0;
};

/// alpha(tau) = sum_j p_j exp(i W_j tau) for tau >= 0, tau in ps.
class ExponentialExpansion {
public:
    ExponentialExpansion() = default;
    explicit ExponentialExpansion(std::vector<ExpansionTerm> terms) : terms_(std::move(terms)) {}

    const std::vector<ExpansionTerm>& terms() const { return terms_; }
    std::size_t size() const { return terms_.size(); }
    bool empty() const { return terms_.empty(); }

    Complex operator()(double tau_ps) const {
        const double tau = tau_ps * units::cm_to_rad_per_ps;  // ps -> cm
        Complex s = 0.0;
        for (const auto& t : terms_) s += t.prefactor * std::exp(Complex(0.0, 1.0) * t.frequency * tau);
        return s;
    }

    /// Sum of prefactors, i.e. the expansion at tau = 0.
    Complex at_zero() const {
        Complex s = 0.0;
        for (const auto& t : terms_) s += t.prefactor;
        return s;
    }

    bool all_decaying() const {
        return std::all_of(terms_.begin(), terms_.end(), [](const auto& t) { return t.frequency.imag() > 0.0; });
    }

    /// Terms with frequencies equal to 1e-12 relative merged by summing prefactors.
    ExponentialExpansion coalesced() const {
        std::vector<ExpansionTerm> out;
        for (const auto& t : terms_) {
            auto it = std::find_if(out.begin(), out.end(), [&](const auto& o) {
                return std::abs(o.frequency - t.frequency) <= 1e-12 * std::max(1.0, std::abs(t.frequency));
            });
            if (it == out.end())
                out.push_back(t);
            else
                it->prefactor += t.prefactor;
        }
        return ExponentialExpansion(std::move(out));
    }

    std::size_t pruned_terms() const { return pruned_; }
    int order() const { return order_; }
    const std::optional<ExpansionErrorReport>& certificate() const { return certificate_; }
    const std::vector<std::string>& warnings() const { return warnings_; }

    void set_certificate(ExpansionErrorReport r) { certificate_ = r; }
    void set_order(int m) { order_ = m; }
    void set_pruned(std::size_t n) { pruned_ = n; }
    void add_warning(std::string w) { warnings_.push_back(std::move(w)); }

private:
    std::vector<ExpansionTerm> terms_;
    std::size_t pruned_ = 0;
    int order_ = 0;
    std::optional<ExpansionErrorReport> certificate_;
    std::vector<std::string> warnings_;
};

// ---------------------------------------------------------------------------
// Direct quadrature
// ---------------------------------------------------------------------------

namespace detail {

// J(w) coth(w / 2kT), with the removable singularity at w = 0 handled.
inline double thermal_weight(const SpectralDensity& sd, double kT, double w) {
    if (kT == 0.0) return sd.eval_real(w);
    const double x = w / (2.0 * kT);
    if (x < 1e-6) return sd.slope_at_zero() * 2.0 * kT * (1.0 + x * x / 3.0);
    return sd.eval_real(w) / std::tanh(x);
}

inline double tail_start(const SpectralDensity& sd, double kT) {
    double w = 0.0;
    if (sd.is_drude_lorentz())
        w = 20.0 * sd.drude().gamma;
    else
        for (const auto& p : sd.peaks()) w = std::max(w, p.center + 12.0 * p.width);
    return std::max(w, 40.0 * kT);
}

inline std::vector<double> breakpoints(const SpectralDensity& sd, double kT, double w_end) {
    std::vector<double> b{0.0, w_end};
    auto add = [&](double v) {
        if (v > 0.0 && v < w_end) b.push_back(v);
    };
    if (sd.is_drude_lorentz())
        for (double f : {0.3, 1.0, 3.0, 10.0}) add(f * sd.drude().gamma);
    else
        for (const auto& p : sd.peaks())
            for (double f : {-3.0, -1.0, 0.0, 1.0, 3.0}) add(p.center + f * p.width);
    for (double f : {1.0, 5.0, 20.0}) add(f * kT);
    std::sort(b.begin(), b.end());
    b.erase(std::unique(b.begin(), b.end()), b.end());
    return b;
}

template <class F>
double panel_integral(F&& f, const std::vector<double>& bps, double max_width) {
    using boost::math::quadrature::gauss_kronrod;
    double total = 0.0;
    for (std::size_t i = 0; i + 1 < bps.size(); ++i) {
        const double a = bps[i], b = bps[i + 1];
        const auto n = static_cast<std::size_t>(std::ceil((b - a) / max_width));
        const double h = (b - a) / static_cast<double>(std::max<std::size_t>(n, 1));
        for (std::size_t k = 0; k < std::max<std::size_t>(n, 1); ++k)
            total += gauss_kronrod<double, 31>::integrate(f, a + k * h, a + (k + 1) * h, 8, 1e-12);
    }
    return total;
}

}  // namespace detail

/// alpha(tau) = int_0^inf J(w) [coth(w/2kT) cos(w tau) - i sin(w tau)] dw, tau in ps,
/// by panel Gauss-Kronrod quadrature below the spectral tail and Ooura's
/// double-exponential Fourier rule on the tail. Returns cm^-2.
inline Complex correlation_quadrature(const SpectralDensity& sd, const Temperature& temp, double tau_ps) {
    if (!(tau_ps >= 0.0)) throw InvalidArgument("correlation function needs tau >= 0");
    if (sd.is_zero()) return 0.0;
    // J(0) = 0 for both variants, which cancels the 1/w pole of coth at the origin.
    if (sd.eval_real(0.0) != 0.0) throw DivergentIntegral("J(0) != 0: coth pole at w = 0 is not cancelled");
    if (sd.is_drude_lorentz() && tau_ps == 0.0)
        throw DivergentIntegral("drude-lorentz correlation function diverges logarithmically at tau = 0 (J ~ 1/w)");

    const double kT = temp.kT();
    const double tau = tau_ps * units::cm_to_rad_per_ps;
    const double w_end = detail::tail_start(sd, kT);
    const auto bps = detail::breakpoints(sd, kT, w_end);
    const double max_width = tau > 0.0 ? 2.0 * units::pi / tau : w_end;

    auto re_f = [&](double w) { return detail::thermal_weight(sd, kT, w) * std::cos(w * tau); };
    auto im_f = [&](double w) { return -sd.eval_real(w) * std::sin(w * tau); };
    double re = detail::panel_integral(re_f, bps, max_width);
    double im = tau > 0.0 ? detail::panel_integral(im_f, bps, max_width) : 0.0;

    // Tail [w_end, inf): smooth and monotone there.
    auto tail_re = [&](double s) { return detail::thermal_weight(sd, kT, w_end + s); };
    auto tail_im = [&](double s) { return sd.eval_real(w_end + s); };
    if (tau > 0.0) {
        thread_local boost::math::quadrature::ooura_fourier_cos<double> cos_rule(1e-11);
        thread_local boost::math::quadrature::ooura_fourier_sin<double> sin_rule(1e-11);
        const double c = std::cos(w_end * tau), s = std::sin(w_end * tau);
        const double rc = cos_rule.integrate(tail_re, tau).first, rs = sin_rule.integrate(tail_re, tau).first;
        const double ic = cos_rule.integrate(tail_im, tau).first, is = sin_rule.integrate(tail_im, tau).first;
        re += c * rc - s * rs;
        im -= s * ic + c * is;
    } else {
        boost::math::quadrature::exp_sinh<double> rule;
        re += rule.integrate(tail_re, 0.0, std::numeric_limits<double>::infinity(), 1e-12);
    }
    return {re, im};
}

/// alpha sampled at `n` equally spaced times on [0, t_max] ps.
struct CorrelationSamples {
    std::vector<double> times;
    std::vector<Complex> values;
};

inline CorrelationSamples correlation_samples(const SpectralDensity& sd, const Temperature& temp, double t_max,
                                              std::size_t n) {
    if (n < 2 || !(t_max > 0.0)) throw InvalidArgument("need n >= 2 samples on a positive horizon");
    CorrelationSamples s;
    for (std::size_t i = 0; i < n; ++i) {
        const double t = t_max * static_cast<double>(i) / static_cast<double>(n - 1);
        s.times.push_back(t);
        s.values.push_back(correlation_quadrature(sd, temp, t));
    }
    return s;
}

// ---------------------------------------------------------------------------
// Residue expansion
// ---------------------------------------------------------------------------

struct ExpansionOptions {
    /// Terms with |p| below this fraction of |alpha(0)| are dropped.
    double prune_relative = 1e-12;
};

namespace detail {

inline void prune(std::vector<ExpansionTerm>& terms, double rel, std::size_t& pruned) {
    Complex a0 = 0.0;
    for (const auto& t : terms) a0 += t.prefactor;
    const double cut = rel * std::abs(a0);
    const auto before = terms.size();
    std::erase_if(terms, [&](const auto& t) { return std::abs(t.prefactor) < cut; });
    pruned = before - terms.size();
}

// T > 0: alpha(tau) = -pi i sum over lower-half-plane poles of J(w)(1 + coth(w/2kT)) e^{-i w tau}.
inline ExponentialExpansion thermal_residues(const SpectralDensity& sd_in, const Temperature& temp, int order,
                                             const ExpansionOptions& opt) {
    const double kT = temp.kT();
    const auto coth = coth_rational_approx(temp, order);
    SpectralDensity sd = sd_in;
    std::vector<std::string> warnings;

    // Pole collision between J and the coth approximation: nudge the widths.
    for (int attempt = 0; attempt < 3; ++attempt) {
        bool collide = false;
        for (const auto& sp : sd.poles())
            for (const auto& xp : coth.poles)
                if (std::abs(sp.position - 2.0 * kT * xp) <= 1e-9 * std::abs(sp.position)) collide = true;
        if (!collide) break;
        warnings.push_back("spectral pole collides with a coth pole; widths perturbed by 1e-9 relative");
        if (sd.is_drude_lorentz()) {
            sd = SpectralDensity::drude_lorentz(sd.drude().lambda, sd.drude().gamma * (1.0 + 1e-9));
        } else {
            auto peaks = sd.peaks();
            for (auto& p : peaks) p.width *= 1.0 + 1e-9;
            sd = SpectralDensity::lorentzians(std::move(peaks));
        }
    }

    const Complex minus_pi_i(0.0, -units::pi);
    std::vector<ExpansionTerm> terms;
    for (const auto& sp : sd.poles()) {
        if (sp.position.imag() >= 0.0) continue;
        const Complex weight = 1.0 + coth(sp.position / (2.0 * kT));
        terms.push_back({minus_pi_i * sp.residue * weight, -sp.position});
    }
    for (std::size_t i = 0; i < coth.poles.size(); ++i) {
        if (coth.poles[i].imag() >= 0.0) continue;
        const Complex w = 2.0 * kT * coth.poles[i];
        terms.push_back({minus_pi_i * sd.eval_complex(w) * 2.0 * kT * coth.residues[i], -w});
    }
    std::size_t pruned = 0;
    prune(terms, opt.prune_relative, pruned);
    ExponentialExpansion e(std::move(terms));
    e.set_order(order);
    e.set_pruned(pruned);
    for (auto& w : warnings) e.add_warning(std::move(w));
    return e;
}

// T = 0: the integral over (0, inf) of J(w) e^{-i w tau} is rotated onto the negative
// imaginary axis. Fourth-quadrant poles give -2 pi i Res; the axis integral
// -i int_0^inf J(-iy) e^{-y tau} dy is discretized with Gauss-Legendre on
// log-spaced panels, one decaying exponential (W = i y_k) per node.
inline ExponentialExpansion vacuum_expansion(const SpectralDensity& sd, int order, const ExpansionOptions& opt) {
    if (sd.is_drude_lorentz())
        throw InvalidArgument("zero-temperature expansion needs the lorentzian-sum variant (drude-lorentz has a pole on the rotated path)");
    std::vector<ExpansionTerm> terms;
    const Complex two_pi_i(0.0, 2.0 * units::pi);
    double y_lo = std::numeric_limits<double>::infinity(), y_hi = 0.0;
    for (const auto& sp : sd.poles()) {
        if (sp.position.real() > 0.0 && sp.position.imag() < 0.0)
            terms.push_back({-two_pi_i * sp.residue, -sp.position});
    }
    for (const auto& p : sd.peaks()) {
        y_lo = std::min(y_lo, 1e-4 * p.width);
        y_hi = std::max(y_hi, 1e3 * (p.center + p.width));
    }
    const int panels = 2 * order;
    const double s_lo = std::log(y_lo), s_hi = std::log(y_hi), h = (s_hi - s_lo) / panels;
    using rule = boost::math::quadrature::gauss<double, 4>;
    for (int k = 0; k < panels; ++k) {
        const double mid = s_lo + (k + 0.5) * h;
        // boost stores the non-negative abscissae of the symmetric rule.
        for (std::size_t n = 0; n < rule::abscissa().size(); ++n) {
            for (double sign : {-1.0, 1.0}) {
                const double x = rule::abscissa()[n];
                if (x == 0.0 && sign < 0.0) continue;
                const double y = std::exp(mid + sign * x * 0.5 * h);
                const double wgt = rule::weights()[n] * 0.5 * h * y;
                terms.push_back({Complex(0.0, -1.0) * wgt * sd.eval_complex(Complex(0.0, -y)), Complex(0.0, y)});
            }
        }
    }
    std::size_t pruned = 0;
    prune(terms, opt.prune_relative, pruned);
    ExponentialExpansion e(std::move(terms));
    e.set_order(order);
    e.set_pruned(pruned);
    return e;
}

}  // namespace detail

/// Exponential expansion of alpha(tau) by residues of the closed-form density.
/// For T > 0 each lower-half-plane pole of J and of the order-M coth
/// approximation contributes one term; at T = 0 see detail::vacuum_expansion.
inline ExponentialExpansion expand_exponentials(const SpectralDensity& sd, const Temperature& temp, int order,
                                                const ExpansionOptions& opt = {}) {
    if (order < 1) throw InvalidArgument("expansion order must be >= 1");
    if (sd.is_zero()) {
        ExponentialExpansion e;
        e.set_order(order);
        return e;
    }
    if (temp.is_zero()) return detail::vacuum_expansion(sd, order, opt);
    return detail::thermal_residues(sd, temp, order, opt);
}

/// Max over the reference samples of |alpha_exp - alpha_quad| / |alpha_quad(0)|.
inline ExpansionErrorReport expansion_error(const ExponentialExpansion& e, const CorrelationSamples& reference) {
    if (reference.times.empty() || reference.times.front() != 0.0)
        throw InvalidArgument("reference samples must start at tau = 0");
    const double norm = std::abs(reference.values.front());
    ExpansionErrorReport r;
    r.t_max = reference.times.back();
    r.samples = reference.times.size();
    r.pruned_terms = e.pruned_terms();
    for (std::size_t i = 0; i < reference.times.size(); ++i) {
        const double d = std::abs(e(reference.times[i]) - reference.values[i]);
        r.max_error = std::max(r.max_error, norm > 0.0 ? d / norm : d);
    }
    return r;
}

inline ExpansionErrorReport expansion_error(const ExponentialExpansion& e, const SpectralDensity& sd,
                                            const Temperature& temp, double t_max, std::size_t samples = 201) {
    if (samples < 200) throw InvalidArgument("expansion error needs at least 200 samples");
    return expansion_error(e, correlation_samples(sd, temp, t_max, samples));
}

/// Smallest order among `candidates` whose expansion meets `max_error` on [0, t_max];
/// the returned expansion carries its certificate. If none passes, the most
/// accurate candidate is returned with its (failing) certificate.
inline ExponentialExpansion certified_expansion(const SpectralDensity& sd, const Temperature& temp,
                                                const std::vector<int>& candidates, double t_max = 2.0,
                                                double max_error = 1e-3, std::size_t samples = 201) {
    if (candidates.empty()) throw InvalidArgument("no expansion orders to scan");
    ExponentialExpansion best;
    if (sd.is_zero()) {
        best.set_order(candidates.front());
        best.set_certificate({0.0, t_max, 0, 0});
        return best;
    }
    const auto reference = correlation_samples(sd, temp, t_max, samples);
    double best_error = std::numeric_limits<double>::infinity();
    for (int m : candidates) {
        auto e = expand_exponentials(sd, temp, m);
        const auto report = expansion_error(e, reference);
        e.set_certificate(report);
        if (report.max_error <= max_error) return e;
        if (report.max_error < best_error) {
            best_error = report.max_error;
            best = std::move(e);
        }
    }
    return best;
}

// ---------------------------------------------------------------------------
// Numerical fit (independent route)
// ---------------------------------------------------------------------------

struct ExponentialFit {
    ExponentialExpansion expansion;
    double residual = 0.0;  ///< RMS |fit - sample| / max |sample|
    double max_error = 0.0; ///< max |fit - sample| / max |sample|
    bool converged = false;
};

namespace detail {

inline Eigen::VectorXcd solve_prefactors(const std::vector<Complex>& z, const Eigen::VectorXcd& y) {
    Eigen::MatrixXcd phi(y.size(), static_cast<Eigen::Index>(z.size()));
    for (Eigen::Index m = 0; m < phi.cols(); ++m) {
        Complex v = 1.0;
        for (Eigen::Index k = 0; k < phi.rows(); ++k, v *= z[m]) phi(k, m) = v;
    }
    return phi.colPivHouseholderQr().solve(y);
}

// Variable projection: unknowns are (Re W, log Im W) per term; prefactors are
// eliminated by a linear least-squares solve at every evaluation.
struct VarProResidual : Eigen::DenseFunctor<double> {
    const Eigen::VectorXcd& y;
    double dtau;  // cm

    VarProResidual(const Eigen::VectorXcd& samples, double step, int terms)
        : Eigen::DenseFunctor<double>(2 * terms, 2 * static_cast<int>(samples.size())), y(samples), dtau(step) {}

    std::vector<Complex> nodes(const InputType& x) const {
        std::vector<Complex> z;
        for (Eigen::Index m = 0; m < x.size() / 2; ++m)
            z.push_back(std::exp(Complex(0.0, 1.0) * Complex(x(2 * m), std::exp(x(2 * m + 1))) * dtau));
        return z;
    }

    int operator()(const InputType& x, ValueType& f) const {
        const auto z = nodes(x);
        const Eigen::VectorXcd p = solve_prefactors(z, y);
        for (Eigen::Index k = 0; k < y.size(); ++k) {
            Complex model = 0.0;
            for (std::size_t m = 0; m < z.size(); ++m) model += p(static_cast<Eigen::Index>(m)) * std::pow(z[m], static_cast<double>(k));
            const Complex r = model - y(k);
            f(2 * k) = r.real();
            f(2 * k + 1) = r.imag();
        }
        return 0;
    }
};

}  // namespace detail

/// Fits sum_j p_j exp(i W_j tau) to samples on a uniform grid starting at tau = 0.
/// Frequencies are seeded by a matrix-pencil (shift-invariance) estimate and refined
/// by variable projection; all returned terms decay.
inline ExponentialFit fit_exponentials(const std::vector<double>& times, const std::vector<Complex>& samples,
                                       int n_terms) {
    if (n_terms < 1) throw InvalidArgument("fit needs at least one term");
    const auto n = static_cast<Eigen::Index>(samples.size());
    if (times.size() != samples.size() || n < 4 * n_terms)
        throw InvalidArgument("fit needs at least 4 samples per term");
    const double dt = times[1] - times[0];
    for (std::size_t i = 1; i < times.size(); ++i)
        if (std::abs(times[i] - times[i - 1] - dt) > 1e-9 * std::max(1.0, std::abs(dt)) || !(dt > 0.0))
            throw InvalidArgument("fit grid must be uniform and increasing");
    const double dtau = dt * units::cm_to_rad_per_ps;
    Eigen::VectorXcd y(n);
    for (Eigen::Index k = 0; k < n; ++k) y(k) = samples[static_cast<std::size_t>(k)];
    const double scale = y.cwiseAbs().maxCoeff();

    // Matrix pencil on the column space of the Hankel matrix.
    const Eigen::Index rows = n - n / 2, cols = n / 2 + 1;
    Eigen::MatrixXcd hankel(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) hankel(i, j) = y(std::min(i + j, n - 1));
    Eigen::BDCSVD<Eigen::MatrixXcd> svd(hankel, Eigen::ComputeThinU);
    const Eigen::MatrixXcd u = svd.matrixU().leftCols(n_terms);
    const Eigen::MatrixXcd shift =
        u.topRows(rows - 1).completeOrthogonalDecomposition().solve(u.bottomRows(rows - 1));
    Eigen::ComplexEigenSolver<Eigen::MatrixXcd> es(shift, false);

    Eigen::VectorXd x(2 * n_terms);
    for (int m = 0; m < n_terms; ++m) {
        Complex z = es.eigenvalues()(m);
        if (std::abs(z) >= 1.0 - 1e-9) z = std::polar(1.0 - 1e-6, std::arg(z));
        if (std::abs(z) < 1e-300) z = 1e-300;
        const Complex w = Complex(0.0, -1.0) * std::log(z) / dtau;
        x(2 * m) = w.real();
        x(2 * m + 1) = std::log(std::max(w.imag(), 1e-12));
    }

    detail::VarProResidual functor(y, dtau, n_terms);
    Eigen::NumericalDiff<detail::VarProResidual> numdiff(functor);
    Eigen::LevenbergMarquardt<Eigen::NumericalDiff<detail::VarProResidual>> lm(numdiff);
    lm.setMaxfev(200 * (2 * n_terms + 1));
    lm.setXtol(1e-12);
    lm.setFtol(1e-14);
    Eigen::VectorXd x0 = x;
    const auto status = lm.minimize(x);

    auto assemble = [&](const Eigen::VectorXd& params) {
        const auto z = functor.nodes(params);
        const Eigen::VectorXcd p = detail::solve_prefactors(z, y);
        std::vector<ExpansionTerm> terms;
        for (int m = 0; m < n_terms; ++m)
            terms.push_back({p(m), Complex(params(2 * m), std::exp(params(2 * m + 1)))});
        ExponentialExpansion e(std::move(terms));
        e.set_order(n_terms);
        return e;
    };
    auto score = [&](const ExponentialExpansion& e) {
        double sum = 0.0, worst = 0.0;
        for (Eigen::Index k = 0; k < n; ++k) {
            const double d = std::abs(e(times[static_cast<std::size_t>(k)]) - y(k)) / scale;
            sum += d * d;
            worst = std::max(worst, d);
        }
        return std::pair{std::sqrt(sum / static_cast<double>(n)), worst};
    };

    ExponentialFit fit;
    fit.expansion = assemble(x);
    auto [rms, worst] = score(fit.expansion);
    // Keep the pencil estimate if refinement wandered off.
    auto seed = assemble(x0);
    auto [rms0, worst0] = score(seed);
    if (!(rms <= rms0)) {
        fit.expansion = std::move(seed);
        rms = rms0;
        worst = worst0;
    }
    fit.residual = rms;
    fit.max_error = worst;
    fit.converged = status != Eigen::LevenbergMarquardtSpace::TooManyFunctionEvaluation &&
                    status != Eigen::LevenbergMarquardtSpace::ImproperInputParameters;
    return fit;
}

}  // namespace zofe
