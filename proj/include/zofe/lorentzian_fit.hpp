#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <unsupported/Eigen/LevenbergMarquardt>

#include "zofe/specden.hpp"

namespace zofe {

/// Spectral density sampled on a grid, linearly interpolated. Ingested from
/// two-column text (w in cm^-1, J in cm^-1); '#' starts a comment.
class TabulatedDensity {
public:
    TabulatedDensity(std::vector<double> omega, std::vector<double> value)
        : omega_(std::move(omega)), value_(std::move(value)) {
        if (omega_.size() != value_.size() || omega_.size() < 2)
            throw InvalidArgument("tabulated density needs at least two (w, J) rows");
        for (std::size_t i = 0; i < omega_.size(); ++i) {
            if (!std::isfinite(omega_[i]) || !std::isfinite(value_[i]) || omega_[i] < 0.0 || value_[i] < 0.0)
                throw InvalidArgument("tabulated density row " + std::to_string(i + 1) + " is invalid");
            if (i > 0 && !(omega_[i] > omega_[i - 1]))
                throw InvalidArgument("tabulated density frequencies must increase strictly");
        }
    }

    static TabulatedDensity load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw InvalidArgument("cannot open tabulated density '" + path + "'");
        std::vector<double> w, j;
        std::string line;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (auto c = line.find('#'); c != std::string::npos) line.erase(c);
            std::istringstream ss(line);
            double a, b;
            if (!(ss >> a)) continue;
            if (!(ss >> b)) throw InvalidArgument(path + ":" + std::to_string(lineno) + ": expected two columns");
            w.push_back(a);
            j.push_back(b);
        }
        return TabulatedDensity(std::move(w), std::move(j));
    }

    double min_frequency() const { return omega_.front(); }
    double max_frequency() const { return omega_.back(); }

    double operator()(double w) const {
        if (w < omega_.front() || w > omega_.back()) throw InvalidArgument("tabulated density evaluated off its grid");
        const auto it = std::upper_bound(omega_.begin(), omega_.end(), w);
        if (it == omega_.end()) return value_.back();
        const std::size_t i = static_cast<std::size_t>(it - omega_.begin());
        const double t = (w - omega_[i - 1]) / (omega_[i] - omega_[i - 1]);
        return (1.0 - t) * value_[i - 1] + t * value_[i];
    }

private:
    std::vector<double> omega_, value_;
};

struct LorentzianFitOptions {
    std::size_t grid_points = 400;  ///< log-spaced fit grid on the range
    std::size_t restarts = 5;       ///< random perturbations of the initial guess
    std::uint64_t seed = 7;
    int max_evaluations = 1500;
    /// Stop early once the RMS relative residual drops below this value.
    double target_residual = 1e-6;
};

struct LorentzianFit {
    SpectralDensity::Peaks peaks;
    /// RMS relative deviation sqrt(mean(((J_fit - J)/J)^2)) on `grid`.
    double residual = 0.0;
    /// max |J_fit - J| / J on `grid`.
    double max_relative_error = 0.0;
    bool converged = false;
    std::vector<double> grid;
};

/// Log-spaced grid on [lo, hi].
inline std::vector<double> log_grid(double lo, double hi, std::size_t n) {
    std::vector<double> g(n);
    for (std::size_t i = 0; i < n; ++i)
        g[i] = lo * std::pow(hi / lo, n == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(n - 1));
    g.back() = hi;
    return g;
}

/// RMS and max relative deviation of `peaks` from `target` sampled on `grid`.
inline std::pair<double, double> lorentzian_fit_residual(const SpectralDensity::Peaks& peaks,
                                                         const std::vector<double>& grid,
                                                         const std::vector<double>& target) {
    double sum = 0.0, worst = 0.0;
    for (std::size_t i = 0; i < grid.size(); ++i) {
        double j = 0.0;
        for (const auto& p : peaks) j += p(grid[i]);
        const double r = (j - target[i]) / target[i];
        sum += r * r;
        worst = std::max(worst, std::abs(r));
    }
    return {std::sqrt(sum / static_cast<double>(grid.size())), worst};
}

namespace detail {

// Parameters are log(p), log(center), log(width) per peak so every iterate is a valid peak.
struct LorentzianResidual : Eigen::DenseFunctor<double> {
    const std::vector<double>& grid;
    const std::vector<double>& target;

    LorentzianResidual(const std::vector<double>& g, const std::vector<double>& t, int n_params)
        : Eigen::DenseFunctor<double>(n_params, static_cast<int>(g.size())), grid(g), target(t) {}

    static AntisymLorentzianPeak peak(const InputType& x, Eigen::Index k) {
        return {std::exp(x(3 * k)), std::exp(x(3 * k + 1)), std::exp(x(3 * k + 2))};
    }

    int operator()(const InputType& x, ValueType& f) const {
        const Eigen::Index n = x.size() / 3;
        for (std::size_t i = 0; i < grid.size(); ++i) {
            double j = 0.0;
            for (Eigen::Index k = 0; k < n; ++k) j += peak(x, k)(grid[i]);
            f(static_cast<Eigen::Index>(i)) = (j - target[i]) / target[i];
        }
        return 0;
    }

    int df(const InputType& x, JacobianType& jac) const {
        const Eigen::Index n = x.size() / 3;
        for (std::size_t i = 0; i < grid.size(); ++i) {
            const double w = grid[i];
            const auto row = static_cast<Eigen::Index>(i);
            for (Eigen::Index k = 0; k < n; ++k) {
                const auto pk = peak(x, k);
                const double a = w - pk.center, b = w + pk.center, g2 = pk.width * pk.width;
                const double da = a * a + g2, db = b * b + g2;
                const double d_center = pk.strength * (2.0 * a / (da * da) + 2.0 * b / (db * db));
                const double d_width = pk.strength * (-2.0 * pk.width / (da * da) + 2.0 * pk.width / (db * db));
                jac(row, 3 * k) = pk(w) / target[i];
                jac(row, 3 * k + 1) = pk.center * d_center / target[i];
                jac(row, 3 * k + 2) = pk.width * d_width / target[i];
            }
        }
        return 0;
    }
};

// Non-negative least squares for strengths at fixed shapes (drop-negative active set).
inline std::vector<double> fit_strengths(const std::vector<double>& centers, const std::vector<double>& widths,
                                         const std::vector<double>& grid, const std::vector<double>& target) {
    const std::size_t n = centers.size();
    std::vector<bool> active(n, true);
    std::vector<double> p(n, 0.0);
    for (std::size_t pass = 0; pass < n; ++pass) {
        std::vector<std::size_t> idx;
        for (std::size_t k = 0; k < n; ++k)
            if (active[k]) idx.push_back(k);
        if (idx.empty()) break;
        Eigen::MatrixXd a(grid.size(), idx.size());
        Eigen::VectorXd b(grid.size());
        for (std::size_t i = 0; i < grid.size(); ++i) {
            b(i) = 1.0;
            for (std::size_t c = 0; c < idx.size(); ++c)
                a(i, c) = AntisymLorentzianPeak{1.0, centers[idx[c]], widths[idx[c]]}(grid[i]) / target[i];
        }
        const Eigen::VectorXd sol = a.colPivHouseholderQr().solve(b);
        bool negative = false;
        for (std::size_t c = 0; c < idx.size(); ++c) {
            p[idx[c]] = sol(c);
            if (sol(c) <= 0.0) {
                active[idx[c]] = false;
                negative = true;
            }
        }
        if (!negative) break;
    }
    // Dropped peaks keep a tiny positive strength so the log parametrization stays finite.
    double scale = 0.0;
    for (double v : p) scale = std::max(scale, v);
    for (auto& v : p)
        if (!(v > 0.0)) v = 1e-6 * (scale > 0.0 ? scale : 1.0);
    return p;
}

}  // namespace detail

/// Least-squares fit of `n_peaks` antisymmetrized Lorentzians to `target` on [lo, hi],
/// minimizing the relative deviation on a log-spaced grid. Initial centers sit at
/// equally spaced quantiles of the cumulative integral of the target, widths at half
/// the local spacing; the best of the seeded start and `restarts` perturbations wins.
inline LorentzianFit fit_lorentzians(const std::function<double(double)>& target, std::size_t n_peaks, double lo,
                                     double hi, const LorentzianFitOptions& opt = {}) {
    if (n_peaks < 1) throw InvalidArgument("fit needs at least one peak");
    if (!(lo > 0.0) || !(hi > lo) || !std::isfinite(hi)) throw InvalidArgument("fit range must satisfy 0 < lo < hi");
    if (opt.grid_points < 3 * n_peaks) throw InvalidArgument("fit grid too small for the requested peak count");

    LorentzianFit best;
    best.grid = log_grid(lo, hi, opt.grid_points);
    std::vector<double> values(best.grid.size());
    for (std::size_t i = 0; i < best.grid.size(); ++i) {
        values[i] = target(best.grid[i]);
        if (!(values[i] > 0.0) || !std::isfinite(values[i]))
            throw InvalidArgument("fit target must be positive on the fit range");
    }

    // Quantiles of the cumulative integral (trapezoid on a fine linear grid).
    const std::size_t fine = 4000;
    std::vector<double> wf(fine), cum(fine, 0.0);
    for (std::size_t i = 0; i < fine; ++i) wf[i] = lo + (hi - lo) * static_cast<double>(i) / (fine - 1);
    for (std::size_t i = 1; i < fine; ++i) cum[i] = cum[i - 1] + 0.5 * (target(wf[i]) + target(wf[i - 1])) * (wf[i] - wf[i - 1]);
    std::vector<double> centers(n_peaks);
    for (std::size_t k = 0; k < n_peaks; ++k) {
        const double q = (static_cast<double>(k) + 0.5) / static_cast<double>(n_peaks) * cum.back();
        const auto it = std::lower_bound(cum.begin(), cum.end(), q);
        centers[k] = wf[std::min<std::size_t>(static_cast<std::size_t>(it - cum.begin()), fine - 1)];
    }
    std::vector<double> widths(n_peaks);
    for (std::size_t k = 0; k < n_peaks; ++k) {
        const double left = k > 0 ? centers[k] - centers[k - 1] : centers[k] - lo;
        const double right = k + 1 < n_peaks ? centers[k + 1] - centers[k] : hi - centers[k];
        widths[k] = std::max(0.5 * (n_peaks == 1 ? std::max(left, right) : std::min(left, right)), 1e-3 * hi);
    }

    std::mt19937_64 rng(opt.seed);
    std::normal_distribution<double> jitter(0.0, 0.2);
    best.residual = std::numeric_limits<double>::infinity();

    const int n_params = static_cast<int>(3 * n_peaks);
    for (std::size_t attempt = 0; attempt <= opt.restarts; ++attempt) {
        std::vector<double> c = centers, w = widths;
        if (attempt > 0)
            for (std::size_t k = 0; k < n_peaks; ++k) {
                c[k] *= std::exp(jitter(rng));
                w[k] *= std::exp(2.0 * jitter(rng));
            }
        const auto p = detail::fit_strengths(c, w, best.grid, values);
        Eigen::VectorXd x(n_params);
        for (std::size_t k = 0; k < n_peaks; ++k) {
            x(3 * k) = std::log(p[k]);
            x(3 * k + 1) = std::log(c[k]);
            x(3 * k + 2) = std::log(w[k]);
        }
        detail::LorentzianResidual functor(best.grid, values, n_params);
        Eigen::LevenbergMarquardt<detail::LorentzianResidual> lm(functor);
        lm.setMaxfev(opt.max_evaluations);
        lm.setXtol(1e-12);
        lm.setFtol(1e-10);
        auto status = lm.minimizeInit(x);
        if (status != Eigen::LevenbergMarquardtSpace::ImproperInputParameters)
            do {
                status = lm.minimizeOneStep(x);
            } while (status == Eigen::LevenbergMarquardtSpace::Running &&
                     lm.fnorm() / std::sqrt(static_cast<double>(best.grid.size())) > opt.target_residual);
        const bool stopped_early = status == Eigen::LevenbergMarquardtSpace::Running;

        SpectralDensity::Peaks peaks;
        for (std::size_t k = 0; k < n_peaks; ++k)
            peaks.push_back(detail::LorentzianResidual::peak(x, static_cast<Eigen::Index>(k)));
        std::sort(peaks.begin(), peaks.end(), [](const auto& a, const auto& b) { return a.center < b.center; });
        const auto [rms, worst] = lorentzian_fit_residual(peaks, best.grid, values);
        if (std::isfinite(rms) && rms < best.residual) {
            best.peaks = std::move(peaks);
            best.residual = rms;
            best.max_relative_error = worst;
            best.converged = stopped_early || (status != Eigen::LevenbergMarquardtSpace::TooManyFunctionEvaluation &&
                                               status != Eigen::LevenbergMarquardtSpace::ImproperInputParameters);
        }
        if (best.residual <= opt.target_residual) break;
    }
    return best;
}

inline LorentzianFit fit_lorentzians(const SpectralDensity& target, std::size_t n_peaks, double lo, double hi,
                                     const LorentzianFitOptions& opt = {}) {
    return fit_lorentzians([&](double w) { return target(w); }, n_peaks, lo, hi, opt);
}

inline LorentzianFit fit_lorentzians(const TabulatedDensity& target, std::size_t n_peaks, double lo, double hi,
                                     const LorentzianFitOptions& opt = {}) {
    if (lo < target.min_frequency() || hi > target.max_frequency())
        throw InvalidArgument("fit range exceeds the tabulated grid");
    return fit_lorentzians([&](double w) { return target(w); }, n_peaks, lo, hi, opt);
}

}  // namespace zofe
