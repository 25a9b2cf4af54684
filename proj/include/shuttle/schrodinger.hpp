#ifndef SHUTTLE_SCHRODINGER_HPP
#define SHUTTLE_SCHRODINGER_HPP

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <memory>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include "shuttle/device.hpp"
#include "shuttle/error.hpp"
#include "shuttle/poisson.hpp"
#include "shuttle/units.hpp"

namespace shuttle {

enum class QuantumMode { line, plane };

inline std::string to_string(QuantumMode m) { return m == QuantumMode::line ? "1d" : "2d"; }

/// Node block of the device grid on which the effective-mass problem is
/// posed. In line mode the block is one row of columns [i0, i1] sampled at
/// depth line_nm (linear interpolation between rows jl and jl + 1).
struct QuantumDomain {
    QuantumMode mode = QuantumMode::line;
    int i0 = 0, i1 = 0, j0 = 0, j1 = 0;
    double hx = 0.0, hz = 0.0;
    int jl = 0;
    double tl = 0.0;
    // inverse masses (units of 1/m_e) on half points, harmonic mean of the
    // two neighbouring node values of 1/m
    std::vector<double> inv_mass_x;  // per horizontal link, (nx-1) per row
    std::vector<double> inv_mass_z;  // per vertical link, nx per row pair

    int nx() const { return i1 - i0 + 1; }
    int nz() const { return mode == QuantumMode::line ? 1 : j1 - j0 + 1; }
    std::size_t size() const { return static_cast<std::size_t>(nx()) * nz(); }
    std::size_t index(int a, int b) const { return static_cast<std::size_t>(b) * nx() + a; }
    double x(int a) const { return (i0 + a) * hx; }
    double z(int b) const { return mode == QuantumMode::line ? line_z() : (j0 + b) * hz; }
    double line_z() const { return (jl + tl) * hz; }
};

inline double half_point_inverse_mass(double m_a, double m_b) {
    // harmonic mean of 1/m_a and 1/m_b
    return 2.0 / (m_a + m_b);
}

inline std::shared_ptr<const QuantumDomain> make_quantum_domain(const DeviceSpec& spec, const Grid& grid,
                                                                QuantumMode mode) {
    auto d = std::make_shared<QuantumDomain>();
    d->mode = mode;
    d->hx = grid.hx;
    d->hz = grid.hz;
    const auto& box = spec.quantum.box;
    d->i0 = static_cast<int>(std::lround(box.x.lo / grid.hx));
    d->i1 = static_cast<int>(std::lround(box.x.hi / grid.hx));
    if (grid.is_2d()) {
        d->j0 = static_cast<int>(std::lround(box.z.lo / grid.hz));
        d->j1 = static_cast<int>(std::lround(box.z.hi / grid.hz));
    }
    if (d->i1 - d->i0 < 4) throw SetupError("quantum subdomain has fewer than 3 interior nodes along x");
    if (mode == QuantumMode::plane) {
        if (!grid.is_2d()) throw SetupError("2d quantum mode needs a 2D device");
        if (d->j1 - d->j0 < 4) throw SetupError("quantum subdomain has fewer than 3 interior nodes along z");
    }

    const auto region_at = [&](int i, int j) -> const MaterialRegion& {
        return spec.regions[grid.node_region[grid.index(i, j)]];
    };
    if (mode == QuantumMode::line) {
        if (grid.is_2d()) {
            const double s = spec.quantum.line_nm / grid.hz;
            d->jl = std::min(static_cast<int>(std::floor(s)), grid.nz - 2);
            d->tl = s - d->jl;
            if (d->tl < 1e-12) d->tl = 0.0;
            if (d->tl > 1.0 - 1e-12) {
                ++d->jl;
                d->tl = 0.0;
            }
        }
        const int jm = d->tl <= 0.5 ? d->jl : d->jl + 1;
        for (int a = 0; a + 1 < d->nx(); ++a)
            d->inv_mass_x.push_back(
                half_point_inverse_mass(region_at(d->i0 + a, jm).mass[0], region_at(d->i0 + a + 1, jm).mass[0]));
    } else {
        for (int b = 0; b < d->nz(); ++b)
            for (int a = 0; a + 1 < d->nx(); ++a)
                d->inv_mass_x.push_back(half_point_inverse_mass(region_at(d->i0 + a, d->j0 + b).mass[0],
                                                                region_at(d->i0 + a + 1, d->j0 + b).mass[0]));
        for (int b = 0; b + 1 < d->nz(); ++b)
            for (int a = 0; a < d->nx(); ++a)
                d->inv_mass_z.push_back(half_point_inverse_mass(region_at(d->i0 + a, d->j0 + b).mass[1],
                                                                region_at(d->i0 + a, d->j0 + b + 1).mass[1]));
    }
    return d;
}

struct GridFunction {
    std::shared_ptr<const QuantumDomain> domain;
    std::vector<double> values;
};

/// V_conf on the quantum domain from node values of the band edge.
inline GridFunction confinement_from_ec(std::shared_ptr<const QuantumDomain> dom, const std::vector<double>& ec,
                                        int grid_nx) {
    GridFunction g{dom, {}};
    g.values.resize(dom->size());
    const auto at = [&](int i, int j) { return ec[static_cast<std::size_t>(j) * grid_nx + i]; };
    if (dom->mode == QuantumMode::line) {
        for (int a = 0; a < dom->nx(); ++a) {
            const int i = dom->i0 + a;
            g.values[a] = dom->tl == 0.0 ? at(i, dom->jl) : (1.0 - dom->tl) * at(i, dom->jl) + dom->tl * at(i, dom->jl + 1);
        }
    } else {
        for (int b = 0; b < dom->nz(); ++b)
            for (int a = 0; a < dom->nx(); ++a) g.values[dom->index(a, b)] = at(dom->i0 + a, dom->j0 + b);
    }
    return g;
}

inline GridFunction confinement_potential(const PotentialField& field, const DeviceSpec& spec,
                                          QuantumMode mode = QuantumMode::line) {
    const Grid grid = build_grid(spec);
    if (field.nx != grid.nx || field.nz != grid.nz) throw SetupError("field was solved on a different grid");
    return confinement_from_ec(make_quantum_domain(spec, grid, mode), field.ec, grid.nx);
}

struct EigenSolution {
    std::vector<double> energies;                  // eV, ascending
    std::vector<std::vector<double>> wavefunctions;  // h * sum psi^2 = 1, zero on the domain boundary
    std::vector<double> residuals;                 // ||H psi - E psi||_inf / ||H||_inf, unit 2-norm psi
    std::shared_ptr<const QuantumDomain> domain;
};

namespace detail {

// Number of eigenvalues of the symmetric tridiagonal (d, e) below x.
inline int sturm_count(const std::vector<double>& d, const std::vector<double>& e, double x) {
    int count = 0;
    double q = 1.0;
    const double tiny = std::numeric_limits<double>::min() / std::numeric_limits<double>::epsilon();
    for (std::size_t i = 0; i < d.size(); ++i) {
        const double off = i ? e[i - 1] * e[i - 1] : 0.0;
        q = d[i] - x - (i ? off / q : 0.0);
        if (q == 0.0) q = -tiny;
        if (q < 0.0) ++count;
    }
    return count;
}

// Solve (T - lambda) y = b with partial pivoting (LAPACK dgtsv style).
inline void shifted_tridiagonal_solve(const std::vector<double>& d, const std::vector<double>& e, double lambda,
                                      std::vector<double>& b) {
    const std::size_t n = d.size();
    if (n == 1) {
        const double p = d[0] - lambda;
        b[0] /= (p != 0.0 ? p : 1e-300);
        return;
    }
    std::vector<double> dl(e), du(e), dd(n), du2(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) dd[i] = d[i] - lambda;
    const double tiny = 1e-300;
    for (std::size_t i = 0; i + 1 < n; ++i) {
        if (std::abs(dd[i]) >= std::abs(dl[i])) {
            if (dd[i] == 0.0) dd[i] = tiny;
            const double f = dl[i] / dd[i];
            dd[i + 1] -= f * du[i];
            b[i + 1] -= f * b[i];
            dl[i] = f;
            if (i + 2 < n) du2[i] = 0.0;
        } else {
            const double f = dd[i] / dl[i];
            dd[i] = dl[i];
            const double t = dd[i + 1];
            dd[i + 1] = du[i] - f * t;
            du[i] = t;
            if (i + 2 < n) {
                du2[i] = du[i + 1];
                du[i + 1] = -f * du2[i];
            }
            std::swap(b[i], b[i + 1]);
            b[i + 1] -= f * b[i];
            dl[i] = f;
        }
    }
    if (dd[n - 1] == 0.0) dd[n - 1] = tiny;
    b[n - 1] /= dd[n - 1];
    b[n - 2] = (b[n - 2] - du[n - 2] * b[n - 1]) / dd[n - 2];
    for (std::size_t i = n - 2; i-- > 0;) b[i] = (b[i] - du[i] * b[i + 1] - du2[i] * b[i + 2]) / dd[i];
}

inline void fix_sign(std::vector<double>& v) {
    double peak = 0.0;
    for (double a : v) peak = std::max(peak, std::abs(a));
    for (double a : v)
        if (std::abs(a) > 1e-3 * peak) {
            if (a < 0.0)
                for (double& b : v) b = -b;
            return;
        }
}

inline void normalize_on_grid(std::vector<double>& v, double cell) {
    double s = 0.0;
    for (double a : v) s += a * a;
    const double f = 1.0 / std::sqrt(s * cell);
    for (double& a : v) a *= f;
}

}  // namespace detail

/// k lowest eigenpairs of the symmetric tridiagonal (d, e): bisection on the
/// Sturm sequence, then inverse iteration with re-orthogonalization.
inline void tridiagonal_lowest(const std::vector<double>& d, const std::vector<double>& e, int k,
                               std::vector<double>& values, std::vector<std::vector<double>>& vectors,
                               std::vector<double>& residuals) {
    const std::size_t n = d.size();
    double lo = std::numeric_limits<double>::max(), hi = std::numeric_limits<double>::lowest(), norm = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double r = (i ? std::abs(e[i - 1]) : 0.0) + (i + 1 < n ? std::abs(e[i]) : 0.0);
        lo = std::min(lo, d[i] - r);
        hi = std::max(hi, d[i] + r);
        norm = std::max(norm, std::abs(d[i]) + r);
    }
    const double eps = std::numeric_limits<double>::epsilon();
    values.assign(k, 0.0);
    double floor = lo;
    for (int m = 0; m < k; ++m) {
        double a = floor, b = hi;
        while (b - a > 2.0 * eps * std::max({std::abs(a), std::abs(b), norm * 1e-3})) {
            const double mid = 0.5 * (a + b);
            if (mid <= a || mid >= b) break;
            (detail::sturm_count(d, e, mid) > m ? b : a) = mid;
        }
        values[m] = 0.5 * (a + b);
        floor = a;
    }

    vectors.assign(k, std::vector<double>(n));
    residuals.assign(k, 0.0);
    for (int m = 0; m < k; ++m) {
        auto& v = vectors[m];
        for (std::size_t i = 0; i < n; ++i) v[i] = 1.0 + 0.25 * std::sin(0.7 * static_cast<double>(i) + m);
        // perturb the shift slightly off the eigenvalue so the factorization stays regular
        const double shift = values[m] - 4.0 * eps * std::max(norm, 1.0);
        for (int it = 0; it < 4; ++it) {
            detail::shifted_tridiagonal_solve(d, e, shift, v);
            for (int p = 0; p < m; ++p) {
                if (std::abs(values[p] - values[m]) > 1e-3 * norm) continue;
                double dot = 0.0;
                for (std::size_t i = 0; i < n; ++i) dot += v[i] * vectors[p][i];
                for (std::size_t i = 0; i < n; ++i) v[i] -= dot * vectors[p][i];
            }
            double s = 0.0;
            for (double x : v) s += x * x;
            s = 1.0 / std::sqrt(s);
            for (double& x : v) x *= s;
        }
        detail::fix_sign(v);
        double r = 0.0, rq = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double hv = d[i] * v[i];
            if (i) hv += e[i - 1] * v[i - 1];
            if (i + 1 < n) hv += e[i] * v[i + 1];
            rq += v[i] * hv;
        }
        values[m] = rq;
        for (std::size_t i = 0; i < n; ++i) {
            double hv = d[i] * v[i];
            if (i) hv += e[i - 1] * v[i - 1];
            if (i + 1 < n) hv += e[i] * v[i + 1];
            r = std::max(r, std::abs(hv - rq * v[i]));
        }
        residuals[m] = norm > 0.0 ? r / norm : r;
    }
}

/// Interior-node Hamiltonian in the 2D plane (Dirichlet boundary removed).
inline Eigen::SparseMatrix<double> plane_hamiltonian(const GridFunction& vconf) {
    const QuantumDomain& d = *vconf.domain;
    const int nx = d.nx() - 2, nz = d.nz() - 2;
    const auto id = [&](int a, int b) { return static_cast<Eigen::Index>((b - 1) * nx + (a - 1)); };
    const double cx = units::hbar2_over_2me / (d.hx * d.hx);
    const double cz = units::hbar2_over_2me / (d.hz * d.hz);
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(static_cast<std::size_t>(nx) * nz * 5);
    for (int b = 1; b <= nz; ++b)
        for (int a = 1; a <= nx; ++a) {
            const double wl = cx * d.inv_mass_x[static_cast<std::size_t>(b) * (d.nx() - 1) + a - 1];
            const double wr = cx * d.inv_mass_x[static_cast<std::size_t>(b) * (d.nx() - 1) + a];
            const double wd = cz * d.inv_mass_z[static_cast<std::size_t>(b - 1) * d.nx() + a];
            const double wu = cz * d.inv_mass_z[static_cast<std::size_t>(b) * d.nx() + a];
            const auto row = id(a, b);
            trip.emplace_back(row, row, vconf.values[d.index(a, b)] + wl + wr + wd + wu);
            if (a > 1) trip.emplace_back(row, id(a - 1, b), -wl);
            if (a < nx) trip.emplace_back(row, id(a + 1, b), -wr);
            if (b > 1) trip.emplace_back(row, id(a, b - 1), -wd);
            if (b < nz) trip.emplace_back(row, id(a, b + 1), -wu);
        }
    Eigen::SparseMatrix<double> h(static_cast<Eigen::Index>(nx) * nz, static_cast<Eigen::Index>(nx) * nz);
    h.setFromTriplets(trip.begin(), trip.end());
    return h;
}

/// Interior-node tridiagonal Hamiltonian on the line.
inline void line_hamiltonian(const GridFunction& vconf, std::vector<double>& d, std::vector<double>& e) {
    const QuantumDomain& q = *vconf.domain;
    const int n = q.nx() - 2;
    const double c = units::hbar2_over_2me / (q.hx * q.hx);
    d.resize(n);
    e.resize(std::max(0, n - 1));
    for (int a = 1; a <= n; ++a) {
        d[a - 1] = vconf.values[a] + c * (q.inv_mass_x[a - 1] + q.inv_mass_x[a]);
        if (a < n) e[a - 1] = -c * q.inv_mass_x[a];
    }
}

namespace detail {

inline EigenSolution solve_plane(const GridFunction& vconf, int k) {
    const QuantumDomain& q = *vconf.domain;
    const Eigen::SparseMatrix<double> h = plane_hamiltonian(vconf);
    const Eigen::Index n = h.rows();
    const int p = static_cast<int>(std::min<Eigen::Index>(k + 4, n));
    if (k > n) throw SetupError("more states requested than interior nodes");

    double lower = std::numeric_limits<double>::max(), norm = 0.0;
    for (Eigen::Index r = 0; r < h.outerSize(); ++r) {
        double diag = 0.0, off = 0.0;
        for (Eigen::SparseMatrix<double>::InnerIterator it(h, r); it; ++it)
            (it.row() == it.col() ? diag : off) += it.row() == it.col() ? it.value() : std::abs(it.value());
        lower = std::min(lower, diag - off);
        norm = std::max(norm, std::abs(diag) + off);
    }

    std::mt19937_64 rng(0x5eed);
    std::uniform_real_distribution<double> uni(-1.0, 1.0);
    Eigen::MatrixXd x(n, p);
    for (Eigen::Index c = 0; c < p; ++c)
        for (Eigen::Index r = 0; r < n; ++r) x(r, c) = uni(rng);

    Eigen::SparseMatrix<double> ident(n, n);
    ident.setIdentity();
    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> fact;
    double shift = lower - 1e-3 * std::max(norm, 1.0);
    fact.compute(h - shift * ident);
    if (fact.info() != Eigen::Success) throw NumericError("shifted Hamiltonian factorization failed");
    bool shift_refined = false;

    Eigen::VectorXd theta, prev = Eigen::VectorXd::Constant(p, std::numeric_limits<double>::max());
    std::vector<double> res(k, std::numeric_limits<double>::max());
    const double target = 1e-10;
    for (int iter = 0; iter < 2000; ++iter) {
        Eigen::MatrixXd y = fact.solve(x);
        Eigen::HouseholderQR<Eigen::MatrixXd> qr(y);
        y = qr.householderQ() * Eigen::MatrixXd::Identity(n, p);
        Eigen::MatrixXd hy = h * y;
        Eigen::MatrixXd small = y.transpose() * hy;
        small = 0.5 * (small + small.transpose()).eval();
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(small);
        theta = es.eigenvalues();
        x = y * es.eigenvectors();
        Eigen::MatrixXd hx = hy * es.eigenvectors();
        bool done = true;
        for (int m = 0; m < k; ++m) {
            res[m] = (hx.col(m) - theta[m] * x.col(m)).lpNorm<Eigen::Infinity>() / norm;
            done &= res[m] <= target;
        }
        if (done) break;

        // move the shift just below the lowest Ritz value once it has settled;
        // the LDLT inertia confirms nothing lies below the new shift
        if (!shift_refined && iter >= 2) {
            double change = 0.0;
            for (int m = 0; m <= std::min(k, p - 1); ++m)
                change = std::max(change, std::abs(theta[m] - prev[m]));
            const double spread = theta[std::min(k, p - 1)] - theta[0];
            if (spread > 0.0 && change < 1e-3 * spread) {
                const double trial = theta[0] - 0.25 * spread;
                if (trial > shift) {
                    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> f2(h - trial * ident);
                    if (f2.info() == Eigen::Success && (f2.vectorD().array() < 0.0).count() == 0) {
                        fact.compute(h - trial * ident);
                        shift = trial;
                    }
                }
                shift_refined = true;
            }
        }
        prev = theta;
    }
    for (int m = 0; m < k; ++m)
        if (!(res[m] <= target)) throw NumericError("2D eigensolver did not reach the residual target", res);

    EigenSolution sol;
    sol.domain = vconf.domain;
    sol.residuals = res;
    const int nxi = q.nx() - 2;
    for (int m = 0; m < k; ++m) {
        sol.energies.push_back(theta[m]);
        std::vector<double> psi(q.size(), 0.0);
        for (Eigen::Index r = 0; r < n; ++r) {
            const int a = static_cast<int>(r % nxi) + 1, b = static_cast<int>(r / nxi) + 1;
            psi[q.index(a, b)] = x(r, m);
        }
        fix_sign(psi);
        normalize_on_grid(psi, q.hx * q.hz);
        sol.wavefunctions.push_back(std::move(psi));
    }
    return sol;
}

}  // namespace detail

/// Lowest k eigenpairs of -(hbar^2/2) div(M^-1 grad psi) + V psi, psi = 0 on
/// the boundary of the quantum domain.
inline EigenSolution solve_eigen(const GridFunction& vconf, int k) {
    if (k < 2) throw SetupError("at least two states are needed");
    const QuantumDomain& q = *vconf.domain;
    if (q.mode == QuantumMode::plane) return detail::solve_plane(vconf, k);

    std::vector<double> d, e;
    line_hamiltonian(vconf, d, e);
    if (static_cast<int>(d.size()) < k) throw SetupError("more states requested than interior nodes");
    EigenSolution sol;
    sol.domain = vconf.domain;
    std::vector<std::vector<double>> vecs;
    tridiagonal_lowest(d, e, k, sol.energies, vecs, sol.residuals);
    for (double r : sol.residuals)
        if (!(r <= 1e-10)) throw NumericError("eigenpair residual above target", sol.residuals);
    for (auto& v : vecs) {
        std::vector<double> psi(q.nx(), 0.0);
        std::copy(v.begin(), v.end(), psi.begin() + 1);
        detail::normalize_on_grid(psi, q.hx);
        sol.wavefunctions.push_back(std::move(psi));
    }
    return sol;
}

inline EigenSolution solve_eigen(const GridFunction& vconf, const DeviceSpec&, int k) { return solve_eigen(vconf, k); }

struct DotMetrics {
    double e0 = 0.0;
    double e1 = 0.0;
    double gap = 0.0;
    double x = 0.0;
    double dx = 0.0;
    double p_max = 0.0;

    bool operator==(const DotMetrics&) const = default;
};

/// Normalized marginal density of state m along x.
inline std::vector<double> position_marginal(const EigenSolution& sol, int m = 0) {
    const QuantumDomain& q = *sol.domain;
    const auto& psi = sol.wavefunctions.at(m);
    std::vector<double> rho(q.nx(), 0.0);
    const double w = q.mode == QuantumMode::plane ? q.hz : 1.0;
    for (int b = 0; b < q.nz(); ++b)
        for (int a = 0; a < q.nx(); ++a) rho[a] += w * psi[q.index(a, b)] * psi[q.index(a, b)];
    double s = 0.0;
    for (double r : rho) s += r;
    for (double& r : rho) r /= s * q.hx;
    return rho;
}

inline DotMetrics dot_metrics(const EigenSolution& sol) {
    if (sol.energies.size() < 2) throw SetupError("dot metrics need two states");
    const QuantumDomain& q = *sol.domain;
    const auto rho = position_marginal(sol, 0);
    DotMetrics m;
    m.e0 = sol.energies[0];
    m.e1 = sol.energies[1];
    m.gap = std::max(0.0, m.e1 - m.e0);

    const double peak = *std::max_element(rho.begin(), rho.end());
    int i = 0;
    while (rho[i] < peak * (1.0 - 1e-9)) ++i;  // leftmost on ties
    double offset = 0.0;
    if (i > 0 && i + 1 < static_cast<int>(rho.size())) {
        const double curv = rho[i - 1] - 2.0 * rho[i] + rho[i + 1];
        if (curv < 0.0) offset = std::clamp(0.5 * (rho[i - 1] - rho[i + 1]) / curv, -0.5, 0.5);
    }
    m.x = q.x(i) + offset * q.hx;
    m.p_max = peak;

    double mean = 0.0;
    for (int a = 0; a < q.nx(); ++a) mean += q.x(a) * rho[a] * q.hx;
    double var = 0.0;
    for (int a = 0; a < q.nx(); ++a) var += (q.x(a) - mean) * (q.x(a) - mean) * rho[a] * q.hx;
    m.dx = 4.0 * std::sqrt(std::max(var, 0.0));
    return m;
}

inline void write_eigen_csv(std::ostream& os, const GridFunction& vconf, const EigenSolution& sol) {
    const QuantumDomain& q = *sol.domain;
    const bool plane = q.mode == QuantumMode::plane;
    os << (plane ? "x_nm,z_nm,vconf_eV,psi0,psi1\n" : "x_nm,vconf_eV,psi0,psi1\n");
    char buf[192];
    for (int b = 0; b < q.nz(); ++b)
        for (int a = 0; a < q.nx(); ++a) {
            const std::size_t n = q.index(a, b);
            if (plane)
                std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%.17g,%.17g\n", q.x(a), q.z(b), vconf.values[n],
                              sol.wavefunctions[0][n], sol.wavefunctions[1][n]);
            else
                std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%.17g\n", q.x(a), vconf.values[n],
                              sol.wavefunctions[0][n], sol.wavefunctions[1][n]);
            os << buf;
        }
}

}  // namespace shuttle

#endif
