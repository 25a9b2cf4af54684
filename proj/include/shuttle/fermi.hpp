#ifndef SHUTTLE_FERMI_HPP
#define SHUTTLE_FERMI_HPP

#include <cmath>

#include "shuttle/units.hpp"

namespace shuttle::fermi {

// Normalized Fermi-Dirac integral of order 1/2, F(eta) -> exp(eta) for
// eta -> -inf. Rational approximation of D. Bednarczyk and J. Bednarczyk,
// Phys. Lett. A 64, 409 (1978); relative error below 0.4 % everywhere.
inline double half(double eta) {
    if (eta < -50.0) return std::exp(eta);
    const double g = std::exp(-0.17 * (eta + 1.0) * (eta + 1.0));
    const double nu = eta * eta * eta * eta + 50.0 + 33.6 * eta * (1.0 - 0.68 * g);
    return 1.0 / (std::exp(-eta) + 0.75 * std::sqrt(units::pi) * std::pow(nu, -0.375));
}

/// d half / d eta, differentiated analytically from the same approximation.
inline double half_derivative(double eta) {
    if (eta < -50.0) return std::exp(eta);
    const double g = std::exp(-0.17 * (eta + 1.0) * (eta + 1.0));
    const double nu = eta * eta * eta * eta + 50.0 + 33.6 * eta * (1.0 - 0.68 * g);
    const double dnu = 4.0 * eta * eta * eta + 33.6 * (1.0 - 0.68 * g) + 33.6 * eta * 0.68 * 0.34 * (eta + 1.0) * g;
    const double c = 0.75 * std::sqrt(units::pi);
    const double u = std::exp(-eta) + c * std::pow(nu, -0.375);
    const double du = -std::exp(-eta) - 0.375 * c * std::pow(nu, -1.375) * dnu;
    return -du / (u * u);
}

}  // namespace shuttle::fermi

#endif
