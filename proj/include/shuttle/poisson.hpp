#ifndef SHUTTLE_POISSON_HPP
#define SHUTTLE_POISSON_HPP

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <memory>
#include <ostream>
#include <string>
#include <vector>

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include "shuttle/device.hpp"
#include "shuttle/error.hpp"
#include "shuttle/fermi.hpp"
#include "shuttle/units.hpp"

namespace shuttle {

/// Gate name -> applied voltage (V). Work-function offsets are added by the
/// solver, not stored here.
struct BiasPoint {
    std::map<std::string, double> voltages;

    double at(const std::string& gate) const {
        auto it = voltages.find(gate);
        if (it == voltages.end()) throw InputError("bias has no voltage for gate '" + gate + "'");
        return it->second;
    }
    double& operator[](const std::string& gate) { return voltages[gate]; }
    bool operator==(const BiasPoint&) const = default;
};

/// Bias with every gate at its hold voltage from the device file.
inline BiasPoint hold_bias(const DeviceSpec& spec) {
    BiasPoint b;
    for (const auto& g : spec.gates) b.voltages[g.name] = g.voltage_V;
    return b;
}

inline void check_bias(const DeviceSpec& spec, const BiasPoint& bias) {
    for (const auto& [name, v] : bias.voltages) {
        if (!spec.gate_index(name)) throw InputError("bias names unknown gate '" + name + "'");
        if (!std::isfinite(v)) throw InputError("bias voltage for gate '" + name + "' is not finite");
    }
    for (const auto& g : spec.gates)
        if (!bias.voltages.count(g.name)) throw InputError("bias does not cover gate '" + g.name + "'");
}

struct PotentialField {
    int nx = 0;
    int nz = 1;
    double hx = 0.0;
    double hz = 0.0;
    std::vector<double> phi;     // V
    std::vector<double> ec;      // eV, band_offset - phi
    std::vector<double> charge;  // C cm^-3, net
    int iterations = 0;          // nonlinear iterations used, 0 for linear solves
    double residual = 0.0;       // relative residual at return

    std::size_t index(int i, int j) const { return static_cast<std::size_t>(j) * nx + i; }
};

/// Linear (1D) / bilinear (2D) interpolation of the band edge.
inline double band_edge_at(const PotentialField& f, double x, double z = 0.0) {
    const double lx = (f.nx - 1) * f.hx;
    const double lz = (f.nz - 1) * f.hz;
    const double tol = 1e-9 * std::max(f.hx, 1.0);
    if (x < -tol || x > lx + tol || (f.nz > 1 && (z < -tol || z > lz + tol)))
        throw RangeError("probe point outside the domain");
    const auto locate = [](double v, double h, int n, int& i, double& t) {
        double s = std::clamp(v / h, 0.0, static_cast<double>(n - 1));
        i = std::min(static_cast<int>(std::floor(s)), n - 2);
        t = s - i;
    };
    int i = 0;
    double tx = 0.0;
    locate(x, f.hx, f.nx, i, tx);
    if (f.nz == 1) return (1.0 - tx) * f.ec[i] + tx * f.ec[i + 1];
    int j = 0;
    double tz = 0.0;
    locate(z, f.hz, f.nz, j, tz);
    const double e00 = f.ec[f.index(i, j)], e10 = f.ec[f.index(i + 1, j)];
    const double e01 = f.ec[f.index(i, j + 1)], e11 = f.ec[f.index(i + 1, j + 1)];
    return (1.0 - tz) * ((1.0 - tx) * e00 + tx * e10) + tz * ((1.0 - tx) * e01 + tx * e11);
}

/// Finite-volume (box integration) discretization of
///   -div(eps grad phi) = e (p - n + N+ - N-) + rho0
/// on the rectilinear grid. Permittivity and charge are cellwise constant, so
/// grid-aligned interfaces are resolved exactly. The linear operator is
/// factorized once; charge-free devices need a single back-substitution per
/// bias, semiclassical ones run damped Newton.
class PoissonSolver {
public:
    struct Options {
        int max_iterations = 200;
        int max_halvings = 20;
        double tolerance = 1e-10;
    };

    explicit PoissonSolver(DeviceSpec spec) : PoissonSolver(std::move(spec), Options{}) {}

    PoissonSolver(DeviceSpec spec, Options opt) : spec_(std::move(spec)), grid_(build_grid(spec_)), opt_(opt) {
        assemble();
    }

    const DeviceSpec& spec() const { return spec_; }
    const Grid& grid() const { return grid_; }
    bool is_linear() const { return !nonlinear_; }
    std::size_t terminal_count() const { return spec_.gates.size() + spec_.contacts.size(); }

    /// Dirichlet value of each terminal (gates first, then contacts).
    std::vector<double> terminal_values(const BiasPoint& bias) const {
        check_bias(spec_, bias);
        std::vector<double> v;
        v.reserve(terminal_count());
        for (const auto& g : spec_.gates) v.push_back(bias.at(g.name) + g.work_function_offset_V);
        for (const auto& c : spec_.contacts) v.push_back(c.voltage_V);
        return v;
    }

    PotentialField solve(const BiasPoint& bias) const { return solve_terminals(terminal_values(bias)); }

    PotentialField solve_terminals(const std::vector<double>& terminal, bool include_fixed_charge = true) const {
        if (terminal.size() != terminal_count()) throw InputError("one value per gate and contact expected");
        std::vector<double> boundary(grid_.size(), 0.0);
        for (std::size_t n = 0; n < grid_.size(); ++n)
            if (grid_.dirichlet[n] >= 0) boundary[n] = terminal[grid_.dirichlet[n]];
        return solve_dirichlet(boundary, include_fixed_charge);
    }

    /// Solve with arbitrary values on the Dirichlet nodes (entries at free
    /// nodes are ignored).
    PotentialField solve_dirichlet(const std::vector<double>& boundary, bool include_fixed_charge = true) const {
        if (boundary.size() != grid_.size()) throw InputError("boundary vector does not match the grid");
        Eigen::VectorXd phi = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(grid_.size()));
        for (std::size_t n = 0; n < grid_.size(); ++n)
            if (grid_.dirichlet[n] >= 0) phi[n] = boundary[n];

        int iterations = 0;
        if (!nonlinear_) {
            Eigen::VectorXd rhs = include_fixed_charge ? fixed_free_ : Eigen::VectorXd::Zero(fixed_free_.size());
            rhs -= coupling_ * dirichlet_values(phi);
            scatter(linear_.solve(rhs), phi);
        } else {
            iterations = newton(phi);
        }
        PotentialField f = make_field(phi);
        f.iterations = iterations;
        f.residual = relative_residual(phi);
        return f;
    }

    /// Max-norm residual of the discrete balance at free nodes, relative to
    /// the problem scale (sum of absolute flux and source terms).
    double relative_residual(const Eigen::VectorXd& phi) const {
        Eigen::VectorXd charge, dcharge;
        charges(phi, charge, dcharge);
        double worst = 0.0, scale = 0.0;
        for (std::size_t f = 0; f < free_nodes_.size(); ++f) {
            const std::size_t n = free_nodes_[f];
            double r = -charge[n], s = std::abs(charge[n]);
            for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator it(full_, static_cast<Eigen::Index>(n)); it;
                 ++it) {
                r += it.value() * phi[it.col()];
                s += std::abs(it.value() * phi[it.col()]);
            }
            worst = std::max(worst, std::abs(r));
            scale = std::max(scale, s);
        }
        return scale > 0.0 ? worst / scale : worst;
    }

    double relative_residual(const PotentialField& f) const {
        return relative_residual(Eigen::Map<const Eigen::VectorXd>(f.phi.data(), static_cast<Eigen::Index>(f.phi.size())));
    }

    /// Full node operator (symmetric), exposed for tests.
    const Eigen::SparseMatrix<double, Eigen::RowMajor>& operator_matrix() const { return full_; }

private:
    void assemble() {
        const Grid& g = grid_;
        const std::size_t n = g.size();
        bool has_dirichlet = false;
        for (int d : g.dirichlet) has_dirichlet |= d >= 0;
        if (!has_dirichlet) throw SetupError("no Dirichlet segment anywhere: the Poisson problem is singular");

        nonlinear_ = false;
        for (int c : g.cell_region) nonlinear_ |= spec_.regions[c].charge_model == ChargeModel::semiclassical;

        std::vector<Eigen::Triplet<double>> trip;
        const auto edge = [&](std::size_t a, std::size_t b, double c) {
            trip.emplace_back(a, a, c);
            trip.emplace_back(b, b, c);
            trip.emplace_back(a, b, -c);
            trip.emplace_back(b, a, -c);
        };
        const auto eps = [&](int ci, int cj) { return spec_.regions[g.cell(ci, cj)].epsilon_r; };

        fixed_ = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
        quarters_.assign(n, {});
        const auto add_quarter = [&](std::size_t node, int region, double vol) {
            quarters_[node].push_back({region, vol});
            const auto& r = spec_.regions[region];
            const double density = (r.doping.donor_cm3 - r.doping.acceptor_cm3) * units::per_cm3_to_per_nm3 +
                                   r.fixed_charge_Ccm3 * units::coulomb_cm3_to_e_nm3;
            fixed_[node] += units::e_over_eps0 * density * vol;
        };

        if (!g.is_2d()) {
            for (int i = 0; i + 1 < g.nx; ++i) {
                edge(i, i + 1, eps(i, 0) / g.hx);
                add_quarter(i, g.cell(i, 0), 0.5 * g.hx);
                add_quarter(i + 1, g.cell(i, 0), 0.5 * g.hx);
            }
        } else {
            for (int j = 0; j < g.nz; ++j)
                for (int i = 0; i + 1 < g.nx; ++i) {
                    double c = 0.0;
                    if (j > 0) c += 0.5 * g.hz * eps(i, j - 1);
                    if (j + 1 < g.nz) c += 0.5 * g.hz * eps(i, j);
                    edge(g.index(i, j), g.index(i + 1, j), c / g.hx);
                }
            for (int j = 0; j + 1 < g.nz; ++j)
                for (int i = 0; i < g.nx; ++i) {
                    double c = 0.0;
                    if (i > 0) c += 0.5 * g.hx * eps(i - 1, j);
                    if (i + 1 < g.nx) c += 0.5 * g.hx * eps(i, j);
                    edge(g.index(i, j), g.index(i, j + 1), c / g.hz);
                }
            const double q = 0.25 * g.hx * g.hz;
            for (int j = 0; j + 1 < g.nz; ++j)
                for (int i = 0; i + 1 < g.nx; ++i) {
                    const int r = g.cell(i, j);
                    add_quarter(g.index(i, j), r, q);
                    add_quarter(g.index(i + 1, j), r, q);
                    add_quarter(g.index(i, j + 1), r, q);
                    add_quarter(g.index(i + 1, j + 1), r, q);
                }
        }
        full_.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
        full_.setFromTriplets(trip.begin(), trip.end());

        free_index_.assign(n, -1);
        dir_index_.assign(n, -1);
        for (std::size_t k = 0; k < n; ++k) {
            if (g.dirichlet[k] < 0) {
                free_index_[k] = static_cast<int>(free_nodes_.size());
                free_nodes_.push_back(k);
            } else {
                dir_index_[k] = static_cast<int>(dir_nodes_.size());
                dir_nodes_.push_back(k);
            }
        }
        std::vector<Eigen::Triplet<double>> tff, tfd;
        for (std::size_t k = 0; k < n; ++k) {
            if (free_index_[k] < 0) continue;
            for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator it(full_, static_cast<Eigen::Index>(k)); it;
                 ++it) {
                const auto col = static_cast<std::size_t>(it.col());
                if (free_index_[col] >= 0)
                    tff.emplace_back(free_index_[k], free_index_[col], it.value());
                else
                    tfd.emplace_back(free_index_[k], dir_index_[col], it.value());
            }
        }
        const auto nf = static_cast<Eigen::Index>(free_nodes_.size());
        const auto nd = static_cast<Eigen::Index>(dir_nodes_.size());
        free_.resize(nf, nf);
        free_.setFromTriplets(tff.begin(), tff.end());
        coupling_.resize(nf, nd);
        coupling_.setFromTriplets(tfd.begin(), tfd.end());
        fixed_free_.resize(nf);
        for (Eigen::Index f = 0; f < nf; ++f) fixed_free_[f] = fixed_[free_nodes_[f]];

        if (nf > 0) {
            linear_.compute(free_);
            if (linear_.info() != Eigen::Success) throw NumericError("Poisson operator factorization failed");
        }
    }

    Eigen::VectorXd dirichlet_values(const Eigen::VectorXd& phi) const {
        Eigen::VectorXd d(static_cast<Eigen::Index>(dir_nodes_.size()));
        for (std::size_t k = 0; k < dir_nodes_.size(); ++k) d[k] = phi[dir_nodes_[k]];
        return d;
    }

    void scatter(const Eigen::VectorXd& free_values, Eigen::VectorXd& phi) const {
        for (std::size_t f = 0; f < free_nodes_.size(); ++f) phi[free_nodes_[f]] = free_values[f];
    }

    /// Source term per node (V, integrated over the dual cell) and its
    /// derivative with respect to the local potential.
    void charges(const Eigen::VectorXd& phi, Eigen::VectorXd& q, Eigen::VectorXd& dq) const {
        q = fixed_;
        dq = Eigen::VectorXd::Zero(fixed_.size());
        if (!nonlinear_) return;
        const double t = spec_.statistics_temperature();
        const double kt = units::k_B_eV * t;
        const double scale = std::pow(t / 300.0, 1.5) * units::per_cm3_to_per_nm3;
        for (std::size_t node = 0; node < quarters_.size(); ++node) {
            for (const auto& [region, vol] : quarters_[node]) {
                const auto& r = spec_.regions[region];
                if (r.charge_model != ChargeModel::semiclassical) continue;
                const double nc = r.nc_300K_cm3 * scale, nv = r.nv_300K_cm3 * scale;
                const double eta_n = (phi[node] - r.band_offset_eV) / kt;
                const double eta_p = (r.band_offset_eV - r.band_gap_eV - phi[node]) / kt;
                const double n = nc * fermi::half(eta_n), p = nv * fermi::half(eta_p);
                const double dn = nc * fermi::half_derivative(eta_n) / kt;
                const double dp = -nv * fermi::half_derivative(eta_p) / kt;
                q[node] += units::e_over_eps0 * vol * (p - n);
                dq[node] += units::e_over_eps0 * vol * (dp - dn);
            }
        }
    }

    // Local charge neutrality n - p = N+ - N- for semiclassical nodes.
    double neutral_potential(std::size_t node) const {
        const auto& r = spec_.regions[grid_.node_region[node]];
        const double t = spec_.statistics_temperature();
        const double kt = units::k_B_eV * t;
        const double scale = std::pow(t / 300.0, 1.5);
        const double net = r.doping.donor_cm3 - r.doping.acceptor_cm3;
        const auto excess = [&](double phi) {
            const double n = r.nc_300K_cm3 * scale * fermi::half((phi - r.band_offset_eV) / kt);
            const double p = r.nv_300K_cm3 * scale * fermi::half((r.band_offset_eV - r.band_gap_eV - phi) / kt);
            return n - p - net;
        };
        double lo = r.band_offset_eV - r.band_gap_eV - 2.0, hi = r.band_offset_eV + 2.0;
        for (int it = 0; it < 200; ++it) {
            const double mid = 0.5 * (lo + hi);
            (excess(mid) > 0.0 ? hi : lo) = mid;
        }
        return 0.5 * (lo + hi);
    }

    double residual_norm(const Eigen::VectorXd& phi, Eigen::VectorXd& res, Eigen::VectorXd& dq) const {
        Eigen::VectorXd q;
        charges(phi, q, dq);
        Eigen::VectorXd free_phi(static_cast<Eigen::Index>(free_nodes_.size()));
        Eigen::VectorXd qf(free_phi.size());
        for (std::size_t f = 0; f < free_nodes_.size(); ++f) {
            free_phi[f] = phi[free_nodes_[f]];
            qf[f] = q[free_nodes_[f]];
        }
        res = free_ * free_phi + coupling_ * dirichlet_values(phi) - qf;
        return res.size() ? res.lpNorm<Eigen::Infinity>() : 0.0;
    }

    int newton(Eigen::VectorXd& phi) const {
        // start from the Laplace solution with semiclassical nodes at local neutrality
        scatter(linear_.solve(-(coupling_ * dirichlet_values(phi))), phi);
        for (std::size_t f = 0; f < free_nodes_.size(); ++f) {
            const std::size_t node = free_nodes_[f];
            if (spec_.regions[grid_.node_region[node]].charge_model == ChargeModel::semiclassical)
                phi[node] = neutral_potential(node);
        }

        // local factorization so concurrent solves on one solver are safe
        Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> jacobian;
        jacobian.analyzePattern(free_);
        Eigen::VectorXd res, dq;
        double norm = residual_norm(phi, res, dq);
        for (int iter = 0; iter < opt_.max_iterations; ++iter) {
            if (relative_residual(phi) <= opt_.tolerance) return iter;
            Eigen::SparseMatrix<double> jac = free_;
            for (std::size_t f = 0; f < free_nodes_.size(); ++f)
                jac.coeffRef(static_cast<Eigen::Index>(f), static_cast<Eigen::Index>(f)) -= dq[free_nodes_[f]];
            jacobian.factorize(jac);
            if (jacobian.info() != Eigen::Success) throw NumericError("Poisson Jacobian factorization failed");
            const Eigen::VectorXd step = jacobian.solve(-res);

            double lambda = 1.0;
            bool accepted = false;
            for (int h = 0; h <= opt_.max_halvings; ++h, lambda *= 0.5) {
                Eigen::VectorXd trial = phi;
                for (std::size_t f = 0; f < free_nodes_.size(); ++f) trial[free_nodes_[f]] += lambda * step[f];
                Eigen::VectorXd tres, tdq;
                const double tnorm = residual_norm(trial, tres, tdq);
                if (tnorm < norm) {
                    phi = std::move(trial);
                    res = std::move(tres);
                    dq = std::move(tdq);
                    norm = tnorm;
                    accepted = true;
                    break;
                }
            }
            if (!accepted) {
                if (relative_residual(phi) <= opt_.tolerance) return iter;
                throw ConvergenceError("Poisson Newton stalled: no residual decrease after step halving",
                                       relative_residual(phi));
            }
        }
        const double last = relative_residual(phi);
        if (last <= opt_.tolerance) return opt_.max_iterations;
        throw ConvergenceError("Poisson Newton did not converge within " + std::to_string(opt_.max_iterations) +
                                   " iterations",
                               last);
    }

    PotentialField make_field(const Eigen::VectorXd& phi) const {
        PotentialField f;
        f.nx = grid_.nx;
        f.nz = grid_.nz;
        f.hx = grid_.hx;
        f.hz = grid_.hz;
        f.phi.assign(phi.data(), phi.data() + phi.size());
        f.ec.resize(f.phi.size());
        for (std::size_t n = 0; n < f.phi.size(); ++n)
            f.ec[n] = spec_.regions[grid_.node_region[n]].band_offset_eV - f.phi[n];

        Eigen::VectorXd q, dq;
        charges(phi, q, dq);
        f.charge.resize(f.phi.size());
        for (std::size_t n = 0; n < f.phi.size(); ++n) {
            double vol = 0.0;
            for (const auto& quarter : quarters_[n]) vol += quarter.volume;
            // V per dual cell -> elementary charges per nm^3 -> C cm^-3
            const double density = vol > 0.0 ? q[n] / (units::e_over_eps0 * vol) : 0.0;
            f.charge[n] = density * units::q_e * 1e21;
        }
        return f;
    }

    struct Quarter {
        int region;
        double volume;
    };

    DeviceSpec spec_;
    Grid grid_;
    Options opt_;
    bool nonlinear_ = false;

    Eigen::SparseMatrix<double, Eigen::RowMajor> full_;
    Eigen::SparseMatrix<double> free_;
    Eigen::SparseMatrix<double> coupling_;
    Eigen::VectorXd fixed_;
    Eigen::VectorXd fixed_free_;
    std::vector<std::vector<Quarter>> quarters_;
    std::vector<std::size_t> free_nodes_, dir_nodes_;
    std::vector<int> free_index_, dir_index_;

    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> linear_;
};

inline PotentialField solve_poisson(const DeviceSpec& spec, const BiasPoint& bias) {
    return PoissonSolver(spec).solve(bias);
}

/// Superposition basis for charge-free or frozen-charge devices: one unit
/// response per terminal plus the response to the fixed charge. Evaluating a
/// bias is then a fixed-order weighted sum, so it is cheap and bitwise
/// reproducible.
class LinearResponse {
public:
    explicit LinearResponse(const PoissonSolver& solver) : solver_(&solver) {
        if (!solver.is_linear()) throw SetupError("linear response requested for a semiclassical device");
        const std::size_t t = solver.terminal_count();
        std::vector<double> zero(t, 0.0);
        base_ = solver.solve_terminals(zero, true).phi;
        unit_.reserve(t);
        for (std::size_t k = 0; k < t; ++k) {
            std::vector<double> e(t, 0.0);
            e[k] = 1.0;
            unit_.push_back(solver.solve_terminals(e, false).phi);
        }
    }

    const PoissonSolver& solver() const { return *solver_; }
    const std::vector<double>& unit(std::size_t terminal) const { return unit_[terminal]; }
    const std::vector<double>& base() const { return base_; }

    std::vector<double> phi(const BiasPoint& bias) const {
        const auto v = solver_->terminal_values(bias);
        std::vector<double> out = base_;
        for (std::size_t k = 0; k < unit_.size(); ++k) {
            const double w = v[k];
            const auto& u = unit_[k];
            for (std::size_t n = 0; n < out.size(); ++n) out[n] += w * u[n];
        }
        return out;
    }

private:
    const PoissonSolver* solver_;
    std::vector<double> base_;
    std::vector<std::vector<double>> unit_;
};

inline void write_field_csv(std::ostream& os, const PotentialField& f) {
    char buf[160];
    os << (f.nz > 1 ? "x_nm,z_nm,phi_V,ec_eV,charge_Ccm3\n" : "x_nm,phi_V,ec_eV,charge_Ccm3\n");
    for (int j = 0; j < f.nz; ++j)
        for (int i = 0; i < f.nx; ++i) {
            const std::size_t n = f.index(i, j);
            if (f.nz > 1)
                std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%.17g,%.17g\n", i * f.hx, j * f.hz, f.phi[n], f.ec[n],
                              f.charge[n]);
            else
                std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%.17g\n", i * f.hx, f.phi[n], f.ec[n], f.charge[n]);
            os << buf;
        }
}

}  // namespace shuttle

#endif
