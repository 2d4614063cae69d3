#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "zofe/units.hpp"

namespace zofe {

using Complex = std::complex<double>;

/// Drude-Lorentz density J(w) = (2 lambda / pi) gamma w / (w^2 + gamma^2).
///
/// Normalized so that the integral of J(w)/w over (0, inf) is exactly lambda.
struct DrudeLorentz {
    double lambda = 0.0;  ///< reorganization energy, cm^-1
    double gamma = 0.0;   ///< cutoff, cm^-1

    void validate() const {
        if (!(lambda > 0.0) || !std::isfinite(lambda)) throw InvalidArgument("drude-lorentz lambda must be > 0");
        if (!(gamma > 0.0) || !std::isfinite(gamma)) throw InvalidArgument("drude-lorentz gamma must be > 0");
    }
};

/// Antisymmetrized Lorentzian p [1/((w-W)^2+G^2) - 1/((w+W)^2+G^2)].
struct AntisymLorentzianPeak {
    double strength = 0.0;  ///< p, cm^-3 scaled amplitude
    double center = 0.0;    ///< W, cm^-1
    double width = 0.0;     ///< G (half width), cm^-1

    void validate() const {
        if (!(strength >= 0.0) || !std::isfinite(strength)) throw InvalidArgument("peak strength must be >= 0");
        if (!(center > 0.0) || !std::isfinite(center)) throw InvalidArgument("peak center must be > 0");
        if (!(width > 0.0) || !std::isfinite(width)) throw InvalidArgument("peak width must be > 0");
    }

    double operator()(double w) const {
        const double a = w - center, b = w + center, g2 = width * width;
        return strength * (1.0 / (a * a + g2) - 1.0 / (b * b + g2));
    }

    /// Peak height max_w J(w), located near the center.
    double height() const {
        // J has a single maximum on (0, inf); golden-section on a bracket around the center.
        double lo = 0.0, hi = center + 4.0 * width;
        const double r = 0.5 * (std::sqrt(5.0) - 1.0);
        for (int i = 0; i < 200; ++i) {
            const double x1 = hi - r * (hi - lo), x2 = lo + r * (hi - lo);
            if ((*this)(x1) < (*this)(x2))
                lo = x1;
            else
                hi = x2;
        }
        return (*this)(0.5 * (lo + hi));
    }
};

/// A simple pole of J continued into the complex plane, with its residue.
struct SpectralPole {
    Complex position;
    Complex residue;
};

/// Per-site bath spectral density: Drude-Lorentz or a sum of antisymmetrized Lorentzians.
/// An empty peak list is the zero density.
class SpectralDensity {
public:
    using Peaks = std::vector<AntisymLorentzianPeak>;

    SpectralDensity() : v_(Peaks{}) {}

    static SpectralDensity drude_lorentz(double lambda, double gamma) {
        DrudeLorentz dl{lambda, gamma};
        dl.validate();
        return SpectralDensity(dl);
    }

    static SpectralDensity lorentzians(Peaks peaks) {
        for (const auto& p : peaks) p.validate();
        return SpectralDensity(std::move(peaks));
    }

    static SpectralDensity zero() { return SpectralDensity(); }

    bool is_drude_lorentz() const { return std::holds_alternative<DrudeLorentz>(v_); }
    const DrudeLorentz& drude() const { return std::get<DrudeLorentz>(v_); }
    const Peaks& peaks() const { return std::get<Peaks>(v_); }
    bool is_zero() const { return !is_drude_lorentz() && peaks().empty(); }

    /// J(w) for w >= 0.
    double operator()(double w) const {
        if (!(w >= 0.0)) throw InvalidArgument("spectral density evaluated at negative frequency");
        return eval_real(w);
    }

    /// J on the whole real line (odd extension), no range check.
    double eval_real(double w) const {
        if (is_drude_lorentz()) {
            const auto& d = drude();
            return 2.0 * d.lambda / units::pi * d.gamma * w / (w * w + d.gamma * d.gamma);
        }
        double s = 0.0;
        for (const auto& p : peaks()) s += p(w);
        return s;
    }

    /// Analytic continuation J(z) of the closed form.
    Complex eval_complex(Complex z) const {
        if (is_drude_lorentz()) {
            const auto& d = drude();
            return 2.0 * d.lambda / units::pi * d.gamma * z / (z * z + d.gamma * d.gamma);
        }
        Complex s = 0.0;
        for (const auto& p : peaks()) {
            const Complex a = z - p.center, b = z + p.center;
            const double g2 = p.width * p.width;
            s += p.strength * (1.0 / (a * a + g2) - 1.0 / (b * b + g2));
        }
        return s;
    }

    /// dJ/dw at w = 0.
    double slope_at_zero() const {
        if (is_drude_lorentz()) return 2.0 * drude().lambda / (units::pi * drude().gamma);
        double s = 0.0;
        for (const auto& p : peaks()) {
            const double d = p.center * p.center + p.width * p.width;
            s += 4.0 * p.strength * p.center / (d * d);
        }
        return s;
    }

    /// All poles of J(z) in the complex plane with their residues.
    std::vector<SpectralPole> poles() const {
        std::vector<SpectralPole> out;
        if (is_drude_lorentz()) {
            const auto& d = drude();
            const Complex r = d.lambda * d.gamma / units::pi;
            out.push_back({Complex(0.0, d.gamma), r});
            out.push_back({Complex(0.0, -d.gamma), r});
            return out;
        }
        for (const auto& p : peaks()) {
            const Complex h(0.0, p.strength / (2.0 * p.width));  // i p / (2 G)
            out.push_back({Complex(p.center, p.width), -h});
            out.push_back({Complex(p.center, -p.width), h});
            out.push_back({Complex(-p.center, p.width), h});
            out.push_back({Complex(-p.center, -p.width), -h});
        }
        return out;
    }

    SpectralDensity scaled(double factor) const {
        if (!(factor >= 0.0)) throw InvalidArgument("spectral density scale must be >= 0");
        if (is_drude_lorentz()) {
            if (factor == 0.0) return zero();
            auto d = drude();
            d.lambda *= factor;
            return SpectralDensity(d);
        }
        Peaks p = peaks();
        for (auto& q : p) q.strength *= factor;
        return SpectralDensity(std::move(p));
    }

    /// Peak list with `extra` appended. Only for the Lorentzian-sum variant.
    SpectralDensity with_peaks(const Peaks& extra) const {
        if (is_drude_lorentz()) throw InvalidArgument("cannot append peaks to a drude-lorentz density; fit it first");
        Peaks p = peaks();
        p.insert(p.end(), extra.begin(), extra.end());
        return lorentzians(std::move(p));
    }

    /// Largest frequency scale of the density (cm^-1): max center + width, or gamma.
    double frequency_scale() const {
        if (is_drude_lorentz()) return drude().gamma;
        double s = 0.0;
        for (const auto& p : peaks()) s = std::max(s, p.center + p.width);
        return s;
    }

private:
    explicit SpectralDensity(DrudeLorentz d) : v_(d) {}
    explicit SpectralDensity(Peaks p) : v_(std::move(p)) {}

    std::variant<DrudeLorentz, Peaks> v_;
};

namespace detail {

/// Integral over [a, b] (b may be +inf) of c / prod_s (w - z_s) for distinct
/// poles z_s off the integration path. Real part of the complex closed form.
inline double rational_integral(Complex c, const std::vector<Complex>& zs, double a, double b) {
    Complex total = 0.0;
    for (std::size_t s = 0; s < zs.size(); ++s) {
        Complex denom = 1.0;
        for (std::size_t t = 0; t < zs.size(); ++t)
            if (t != s) denom *= zs[s] - zs[t];
        const Complex r = c / denom;
        // The log branch is continuous along the real segment: Im(w - z_s) keeps one sign.
        Complex seg = -std::log(Complex(a) - zs[s]);
        if (std::isfinite(b)) seg += std::log(Complex(b) - zs[s]);
        total += r * seg;
    }
    return total.real();
}

inline std::vector<Complex> peak_poles(const AntisymLorentzianPeak& p) {
    return {Complex(p.center, p.width), Complex(p.center, -p.width), Complex(-p.center, p.width),
            Complex(-p.center, -p.width)};
}

inline void check_window(double e_min, double e_max) {
    if (!(e_min >= 0.0) || !(e_max > e_min) || std::isnan(e_max))
        throw InvalidArgument("energy window must satisfy 0 <= e_min < e_max");
}

}  // namespace detail

/// Effective reorganization energy: integral of J(w)/w over [e_min, e_max] (e_max may be inf).
inline double effective_reorganization_energy(const SpectralDensity& sd, double e_min, double e_max) {
    detail::check_window(e_min, e_max);
    if (sd.is_drude_lorentz()) {
        const auto& d = sd.drude();
        const double hi = std::isfinite(e_max) ? std::atan(e_max / d.gamma) : units::pi / 2.0;
        return 2.0 * d.lambda / units::pi * (hi - std::atan(e_min / d.gamma));
    }
    double s = 0.0;
    for (const auto& p : sd.peaks()) {
        if (p.strength == 0.0) continue;
        s += detail::rational_integral(4.0 * p.strength * p.center, detail::peak_poles(p), e_min, e_max);
    }
    return s;
}

/// Reorganization energy: integral of J(w)/w over (0, inf).
inline double reorganization_energy(const SpectralDensity& sd) {
    return effective_reorganization_energy(sd, 0.0, std::numeric_limits<double>::infinity());
}

/// Effective reorganization energy of each peak separately (linear in strength).
inline std::vector<double> peak_reorganization_energies(const SpectralDensity::Peaks& peaks, double e_min,
                                                        double e_max) {
    std::vector<double> out;
    for (const auto& p : peaks) out.push_back(effective_reorganization_energy(SpectralDensity::lorentzians({p}), e_min, e_max));
    return out;
}

/// Integral of J(w)/w^2 over [e_min, e_max], the total Huang-Rhys factor of the window.
/// J ~ w near zero for both variants, so e_min = 0 diverges for any nonzero density.
inline double huang_rhys_integral(const SpectralDensity& sd, double e_min, double e_max) {
    detail::check_window(e_min, e_max);
    if (sd.is_zero()) return 0.0;
    if (e_min == 0.0)
        throw DivergentIntegral("huang-rhys integral diverges logarithmically at e_min = 0 (J/w^2 ~ 1/w)");
    if (sd.is_drude_lorentz()) {
        const auto& d = sd.drude();
        auto antiderivative = [&](double w) { return std::log(w) - 0.5 * std::log(w * w + d.gamma * d.gamma); };
        const double hi = std::isfinite(e_max) ? antiderivative(e_max) : 0.0;
        return 2.0 * d.lambda / (units::pi * d.gamma) * (hi - antiderivative(e_min));
    }
    double s = 0.0;
    for (const auto& p : sd.peaks()) {
        if (p.strength == 0.0) continue;
        auto zs = detail::peak_poles(p);
        zs.push_back(Complex(0.0));
        s += detail::rational_integral(4.0 * p.strength * p.center, zs, e_min, e_max);
    }
    return s;
}

/// Multiplies peak `index` by `factor` and rescales every other peak by a common
/// factor so that the effective reorganization energy over `window` is unchanged.
inline SpectralDensity::Peaks enhance_peak_constrained(const SpectralDensity::Peaks& peaks, std::size_t index,
                                                       double factor, double e_min, double e_max) {
    if (index >= peaks.size()) throw InvalidArgument("peak index out of range");
    if (!(factor >= 0.0) || !std::isfinite(factor)) throw InvalidArgument("enhancement factor must be >= 0");
    if (factor == 1.0) return peaks;
    const auto parts = peak_reorganization_energies(peaks, e_min, e_max);
    const double total = std::accumulate(parts.begin(), parts.end(), 0.0);
    if (!(total > 0.0)) throw InvalidArgument("effective reorganization energy of the input must be positive");
    const double rest = total - parts[index];
    const double remaining = total - factor * parts[index];
    if (remaining < 0.0 || (rest <= 0.0 && remaining != 0.0))
        throw InvalidArgument("enhancement infeasible: peak " + std::to_string(index) + " times " +
                              std::to_string(factor) + " exceeds the effective reorganization budget");
    const double scale = rest > 0.0 ? remaining / rest : 0.0;
    auto out = peaks;
    for (std::size_t i = 0; i < out.size(); ++i) out[i].strength *= (i == index ? factor : scale);
    return out;
}

/// Equal-shape peaks whose strengths give `lambda_eff` over the window when each
/// peak carries the same share.
inline SpectralDensity::Peaks equal_share_peaks(const std::vector<double>& centers, double width, double lambda_eff,
                                                double e_min, double e_max) {
    SpectralDensity::Peaks peaks;
    for (double c : centers) {
        AntisymLorentzianPeak unit{1.0, c, width};
        unit.validate();
        const double per_unit = effective_reorganization_energy(SpectralDensity::lorentzians({unit}), e_min, e_max);
        unit.strength = lambda_eff / static_cast<double>(centers.size()) / per_unit;
        peaks.push_back(unit);
    }
    return peaks;
}

}  // namespace zofe
