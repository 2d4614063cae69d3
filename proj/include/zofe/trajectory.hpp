#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "zofe/integrator.hpp"
#include "zofe/model.hpp"

namespace zofe {

/// Certificates of a reduced density matrix.
struct Diagnostics {
    double trace_dev = 0.0;  ///< |Tr rho - 1|
    double herm_dev = 0.0;   ///< max |rho - rho^dagger|
    double min_eig = 0.0;    ///< smallest eigenvalue of (rho + rho^dagger)/2
};

inline Diagnostics diagnostics(const ComplexMatrix& rho) {
    Diagnostics d;
    d.trace_dev = std::abs(rho.trace() - Complex(1.0));
    d.herm_dev = (rho - rho.adjoint()).cwiseAbs().maxCoeff();
    const ComplexMatrix h = 0.5 * (rho + rho.adjoint());
    Eigen::SelfAdjointEigenSolver<ComplexMatrix> es(h, Eigen::EigenvaluesOnly);
    if (es.info() != Eigen::Success) throw NumericalError("eigensolver failed on density matrix");
    d.min_eig = es.eigenvalues()(0);
    return d;
}

inline Diagnostics diagnostics(const DensityMatrix& rho) { return diagnostics(rho.matrix()); }

/// Site populations: real parts of the diagonal.
inline std::vector<double> populations(const ComplexMatrix& rho) {
    std::vector<double> p(static_cast<std::size_t>(rho.rows()));
    for (Eigen::Index i = 0; i < rho.rows(); ++i) p[static_cast<std::size_t>(i)] = rho(i, i).real();
    return p;
}

inline std::vector<double> populations(const DensityMatrix& rho) {
    for (Eigen::Index i = 0; i < rho.matrix().rows(); ++i)
        if (std::abs(rho.matrix()(i, i).imag()) > DensityMatrix::tolerance)
            throw NumericalError("density matrix diagonal has an imaginary part");
    return populations(rho.matrix());
}

enum class TrajectoryStatus { Completed, StepUnderflow, TraceViolation, PositivityViolation, FockTruncation };

inline std::string to_string(TrajectoryStatus s) {
    switch (s) {
        case TrajectoryStatus::Completed: return "completed";
        case TrajectoryStatus::StepUnderflow: return "step_underflow";
        case TrajectoryStatus::TraceViolation: return "trace_violation";
        case TrajectoryStatus::PositivityViolation: return "positivity_violation";
        case TrajectoryStatus::FockTruncation: return "fock_truncation";
    }
    return "unknown";
}

/// Sampled site populations with per-sample certificates.
struct Trajectory {
    std::vector<double> times;                    ///< ps
    std::vector<std::vector<double>> populations; ///< [sample][site]
    std::vector<ComplexMatrix> coherences;        ///< full rho per sample, when requested
    std::vector<Diagnostics> diagnostics;
    TrajectoryStatus status = TrajectoryStatus::Completed;
    IntegrationStats stats;

    std::size_t n_sites() const { return populations.empty() ? 0 : populations.front().size(); }
    std::size_t size() const { return times.size(); }
    bool complete() const { return status == TrajectoryStatus::Completed; }

    void record(double t, const ComplexMatrix& rho, bool keep_rho = false) {
        times.push_back(t);
        populations.push_back(zofe::populations(rho));
        diagnostics.push_back(zofe::diagnostics(rho));
        if (keep_rho) coherences.push_back(rho);
    }

    /// Population of 1-based `site` at every sample.
    std::vector<double> site(std::size_t s) const {
        if (s < 1 || s > n_sites()) throw InvalidArgument("site index out of range");
        std::vector<double> out;
        for (const auto& p : populations) out.push_back(p[s - 1]);
        return out;
    }

    double max_trace_dev() const {
        double m = 0.0;
        for (const auto& d : diagnostics) m = std::max(m, d.trace_dev);
        return m;
    }
    double max_herm_dev() const {
        double m = 0.0;
        for (const auto& d : diagnostics) m = std::max(m, d.herm_dev);
        return m;
    }
    double worst_min_eig() const {
        double m = std::numeric_limits<double>::infinity();
        for (const auto& d : diagnostics) m = std::min(m, d.min_eig);
        return m;
    }
};

/// Largest absolute population difference between two trajectories sampled on the same grid.
inline double max_population_deviation(const Trajectory& a, const Trajectory& b) {
    if (a.size() != b.size() || a.n_sites() != b.n_sites()) throw InvalidArgument("trajectories are not comparable");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (std::abs(a.times[i] - b.times[i]) > 1e-9) throw InvalidArgument("trajectory sample times differ");
        for (std::size_t s = 0; s < a.n_sites(); ++s)
            m = std::max(m, std::abs(a.populations[i][s] - b.populations[i][s]));
    }
    return m;
}

inline std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

/// CSV with header time_ps,pop_1..pop_N,trace_dev,herm_dev,min_eig.
inline std::string trajectory_csv(const Trajectory& t) {
    std::string out = "time_ps";
    for (std::size_t s = 1; s <= t.n_sites(); ++s) out += ",pop_" + std::to_string(s);
    out += ",trace_dev,herm_dev,min_eig\n";
    for (std::size_t i = 0; i < t.size(); ++i) {
        out += format_double(t.times[i]);
        for (double p : t.populations[i]) out += "," + format_double(p);
        const auto& d = t.diagnostics[i];
        out += "," + format_double(d.trace_dev) + "," + format_double(d.herm_dev) + "," + format_double(d.min_eig) + "\n";
    }
    return out;
}

/// Writes via a temporary file in the same directory, then renames.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot write " + tmp.string());
        out << content;
        if (!out) throw Error("write failed for " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

}  // namespace zofe
