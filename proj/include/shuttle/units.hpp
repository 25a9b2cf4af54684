#ifndef SHUTTLE_UNITS_HPP
#define SHUTTLE_UNITS_HPP

// Internal unit system: lengths in nm, potentials in V, energies in eV,
// densities in nm^-3, temperatures in K. Files use nm, V, eV, K, cm^-3.

namespace shuttle::units {

inline constexpr double pi = 3.14159265358979323846;

inline constexpr double q_e = 1.602176634e-19;        // C
inline constexpr double eps0_F_per_nm = 8.8541878128e-21;
inline constexpr double k_B_eV = 8.617333262e-5;      // eV / K

// hbar^2 / (2 m_e) in eV nm^2
inline constexpr double hbar2_over_2me = 0.0380998212;

// e / eps0 in V nm: multiplies a number density (nm^-3) to give the
// Poisson source term in V / nm^2 once divided by eps_r.
inline constexpr double e_over_eps0 = q_e / eps0_F_per_nm;

inline constexpr double per_cm3_to_per_nm3 = 1e-21;
// C cm^-3 -> elementary charges nm^-3
inline constexpr double coulomb_cm3_to_e_nm3 = 1e-21 / q_e;

inline constexpr double si_nc_300K_cm3 = 2.86e19;
inline constexpr double si_nv_300K_cm3 = 3.10e19;
inline constexpr double si_band_gap_eV = 1.12;

}  // namespace shuttle::units

#endif
