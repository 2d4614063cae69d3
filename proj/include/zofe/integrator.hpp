#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>

#include <Eigen/Dense>

#include "zofe/units.hpp"

namespace zofe {

enum class IntegratorMethod { DormandPrince, FixedRK4 };

inline std::string to_string(IntegratorMethod m) { return m == IntegratorMethod::DormandPrince ? "dopri5" : "rk4"; }

inline IntegratorMethod integrator_method_from_string(const std::string& s) {
    if (s == "dopri5") return IntegratorMethod::DormandPrince;
    if (s == "rk4") return IntegratorMethod::FixedRK4;
    throw InvalidArgument("unknown integrator '" + s + "' (expected dopri5 or rk4)");
}

struct IntegratorSettings {
    IntegratorMethod method = IntegratorMethod::DormandPrince;
    double tol = 1e-8;               ///< relative and absolute local error tolerance (dopri5)
    double sample_interval = 0.002;  ///< ps
    double fixed_step = 0.0002;      ///< ps (rk4); must divide the sample interval
    double min_step = 1e-12;         ///< ps; smaller accepted steps count as underflow
};

enum class IntegrationStatus { Completed, StepUnderflow, Aborted };

inline std::string to_string(IntegrationStatus s) {
    switch (s) {
        case IntegrationStatus::Completed: return "completed";
        case IntegrationStatus::StepUnderflow: return "step_underflow";
        case IntegrationStatus::Aborted: return "aborted";
    }
    return "unknown";
}

struct IntegrationStats {
    std::size_t accepted = 0;
    std::size_t rejected = 0;
    std::size_t rhs_evaluations = 0;
};

/// Sample times t0, t0 + dt, ..., ending exactly at t_end.
inline std::vector<double> sample_times(double t0, double t_end, double dt) {
    if (!(dt > 0.0)) throw InvalidArgument("sample interval must be > 0");
    std::vector<double> ts;
    const auto n = static_cast<std::size_t>(std::floor((t_end - t0) / dt + 1e-9));
    for (std::size_t k = 0; k <= n; ++k) ts.push_back(t0 + static_cast<double>(k) * dt);
    if (t_end - ts.back() > 1e-12 * std::max(1.0, std::abs(t_end)))
        ts.push_back(t_end);
    else
        ts.back() = std::min(ts.back(), t_end);
    return ts;
}

/// Integrates y' = f(t, y) from t0 to t_end, calling observe(t, y) at every
/// sample time (including t0). observe returns false to abort.
///
/// Dormand-Prince 5(4) with a max-norm error estimate and steps clipped to land
/// on sample times, or classical RK4 with a fixed step for bit-reproducible runs.
template <class Rhs, class Observer>
IntegrationStatus integrate(Rhs&& f, Eigen::VectorXcd& y, double t0, double t_end, const IntegratorSettings& s,
                            Observer&& observe, IntegrationStats* stats = nullptr) {
    if (!(t_end > t0)) throw InvalidArgument("t_end must exceed the start time");
    if (!(s.tol > 0.0)) throw InvalidArgument("integrator tolerance must be > 0");
    IntegrationStats local;
    IntegrationStats& st = stats ? *stats : local;
    const auto times = sample_times(t0, t_end, s.sample_interval);
    if (!observe(times.front(), y)) return IntegrationStatus::Aborted;

    const Eigen::Index n = y.size();
    double t = t0;

    if (s.method == IntegratorMethod::FixedRK4) {
        if (!(s.fixed_step > 0.0)) throw InvalidArgument("rk4 step must be > 0");
        Eigen::VectorXcd k1(n), k2(n), k3(n), k4(n), tmp(n);
        for (std::size_t i = 1; i < times.size(); ++i) {
            const double span = times[i] - t;
            const auto steps = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(span / s.fixed_step - 1e-9)));
            const double h = span / static_cast<double>(steps);
            for (std::size_t k = 0; k < steps; ++k) {
                f(t, y, k1);
                tmp = y + 0.5 * h * k1;
                f(t + 0.5 * h, tmp, k2);
                tmp = y + 0.5 * h * k2;
                f(t + 0.5 * h, tmp, k3);
                tmp = y + h * k3;
                f(t + h, tmp, k4);
                y += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
                t += h;
                st.accepted += 1;
                st.rhs_evaluations += 4;
            }
            t = times[i];
            if (!observe(t, y)) return IntegrationStatus::Aborted;
        }
        return IntegrationStatus::Completed;
    }

    // Dormand-Prince tableau.
    constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
    constexpr double a21 = 1.0 / 5;
    constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
    constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
    constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561, a54 = -212.0 / 729;
    constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247, a64 = 49.0 / 176,
                     a65 = -5103.0 / 18656;
    constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192, b5 = -2187.0 / 6784, b6 = 11.0 / 84;
    constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920, e5 = -17253.0 / 339200,
                     e6 = 22.0 / 525, e7 = -1.0 / 40;

    Eigen::VectorXcd k1(n), k2(n), k3(n), k4(n), k5(n), k6(n), k7(n), tmp(n), ynew(n);
    f(t, y, k1);
    st.rhs_evaluations += 1;

    // Initial step from the derivative scale.
    const double dnorm = k1.cwiseAbs().maxCoeff();
    double h = dnorm > 0.0 ? 0.01 * std::pow(s.tol, 0.2) / dnorm * std::max(1.0, y.cwiseAbs().maxCoeff()) : s.sample_interval;
    h = std::clamp(h, 1e-9, s.sample_interval);

    for (std::size_t i = 1; i < times.size(); ++i) {
        const double target = times[i];
        while (t < target) {
            bool clipped = false;
            double step = h;
            if (t + step >= target) {
                step = target - t;
                clipped = true;
            }
            tmp = y + step * a21 * k1;
            f(t + c2 * step, tmp, k2);
            tmp = y + step * (a31 * k1 + a32 * k2);
            f(t + c3 * step, tmp, k3);
            tmp = y + step * (a41 * k1 + a42 * k2 + a43 * k3);
            f(t + c4 * step, tmp, k4);
            tmp = y + step * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4);
            f(t + c5 * step, tmp, k5);
            tmp = y + step * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5);
            f(t + step, tmp, k6);
            ynew = y + step * (b1 * k1 + b3 * k3 + b4 * k4 + b5 * k5 + b6 * k6);
            f(t + step, ynew, k7);
            st.rhs_evaluations += 6;

            tmp = step * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);
            double err =
                (tmp.cwiseAbs().array() / (1.0 + y.cwiseAbs().array().max(ynew.cwiseAbs().array()))).maxCoeff() /
                s.tol;
            if (!std::isfinite(err)) err = 1e10;

            const double factor = err == 0.0 ? 5.0 : std::clamp(0.9 * std::pow(err, -0.2), 0.2, 5.0);
            if (err <= 1.0) {
                t = clipped ? target : t + step;
                y.swap(ynew);
                k1.swap(k7);
                st.accepted += 1;
                // A clipped step says nothing about the natural step size.
                if (!clipped || factor < 1.0) h = step * factor;
            } else {
                st.rejected += 1;
                h = step * std::min(factor, 1.0);
                if (h < s.min_step) return IntegrationStatus::StepUnderflow;
            }
        }
        if (!observe(t, y)) return IntegrationStatus::Aborted;
    }
    return IntegrationStatus::Completed;
}

}  // namespace zofe
