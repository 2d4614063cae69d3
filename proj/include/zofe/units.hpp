#pragma once

#include <complex>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>

namespace zofe {

using Complex = std::complex<double>;

/// Base class for all errors raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed input: dimensions, ranges, non-finite values.
class InvalidArgument : public Error {
public:
    using Error::Error;
};

/// A numerical certificate (trace, expansion accuracy, Fock truncation) failed.
class NumericalError : public Error {
public:
    using Error::Error;
};

/// An integral that does not exist for the requested inputs.
class DivergentIntegral : public NumericalError {
public:
    using NumericalError::NumericalError;
};

namespace units {

inline constexpr double pi = std::numbers::pi;

/// Speed of light in cm/ps.
inline constexpr double speed_of_light = 0.0299792458;

/// Angular frequency (rad/ps) of one wavenumber: 2*pi*c.
inline constexpr double cm_to_rad_per_ps = 2.0 * pi * speed_of_light;

/// Boltzmann constant in cm^-1/K (k_B / (h c)).
inline constexpr double boltzmann = 0.695034800;

/// Wavenumber (cm^-1) of the rate 1/tau for a correlation time tau given in fs.
inline constexpr double inverse_fs_to_cm(double tau_fs) {
    return 1.0 / (tau_fs * 1e-3) / cm_to_rad_per_ps;
}

}  // namespace units

/// Absolute temperature. Zero is allowed and selects the vacuum bath.
class Temperature {
public:
    explicit Temperature(double kelvin) : kelvin_(kelvin) {
        if (!(kelvin >= 0.0) || kelvin == std::numeric_limits<double>::infinity())
            throw InvalidArgument("temperature must be finite and >= 0 K, got " + std::to_string(kelvin));
    }

    double kelvin() const { return kelvin_; }
    /// Thermal energy kT in cm^-1.
    double kT() const { return units::boltzmann * kelvin_; }
    bool is_zero() const { return kelvin_ == 0.0; }

private:
    double kelvin_;
};

}  // namespace zofe
