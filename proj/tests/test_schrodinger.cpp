#include <chrono>
#include <cmath>
#include <functional>
#include <sstream>

#include <gtest/gtest.h>

#include "shuttle/schrodinger.hpp"
#include "test_support.hpp"

using namespace shuttle;
using namespace shuttle::testing;

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kKin = 0.0380998212;  // hbar^2 / 2 m_e, eV nm^2

// Line domain covering [first * h, (first + n - 1) * h] with uniform mass.
GridFunction line(int first, int n, double h, double mass, const std::function<double(double)>& v) {
    auto d = std::make_shared<QuantumDomain>();
    d->mode = QuantumMode::line;
    d->i0 = first;
    d->i1 = first + n - 1;
    d->hx = h;
    d->inv_mass_x.assign(n - 1, 1.0 / mass);
    GridFunction g{d, std::vector<double>(n)};
    for (int a = 0; a < n; ++a) g.values[a] = v(d->x(a));
    return g;
}

double box_level(int n, double length, double mass) { return n * n * kPi * kPi * kKin / (mass * length * length); }

double inner(const EigenSolution& s, int a, int b) {
    const auto& q = *s.domain;
    const double cell = q.mode == QuantumMode::plane ? q.hx * q.hz : q.hx;
    double sum = 0.0;
    for (std::size_t i = 0; i < s.wavefunctions[a].size(); ++i) sum += s.wavefunctions[a][i] * s.wavefunctions[b][i];
    return sum * cell;
}

json box2d(double lx, double lz, int nx, int nz, double mx, double mz) {
    json r = region2d("si", 0, lx, 0, lz, 11.7);
    r["mass"] = {mx, mz};
    return {{"schema_version", 1},
            {"name", "box"},
            {"dimension", "2D"},
            {"extent_nm", {lx, lz}},
            {"grid", {nx, nz}},
            {"temperature_K", 1.0},
            {"regions", json::array({r})},
            {"gates", json::array({{{"name", "G"}, {"footprint_nm", {0, lx}}, {"role", "screening"}}})},
            {"contacts", json::array()},
            {"quantum", {{"box_nm", {{"x", {0, lx}}, {"z", {0, lz}}}}}}};
}

}  // namespace

TEST(Eigen, InfiniteWellLevels) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto sol = solve_eigen(line(0, 401, 50.0 / 400, 0.19, [](double) { return 0.0; }), 2);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    EXPECT_NEAR(sol.energies[0] / box_level(1, 50, 0.19), 1.0, 5e-3);
    EXPECT_NEAR(sol.energies[1] / box_level(2, 50, 0.19), 1.0, 5e-3);
    EXPECT_NEAR(sol.energies[0], 0.79164e-3, 1e-8);
    EXPECT_LT(secs, 1.0);
}

TEST(Eigen, HarmonicSpacing) {
    const double hw = 3e-3, m = 0.19;
    const double k = hw * hw / (4.0 * kKin / m);  // eV / nm^2
    const auto sol = solve_eigen(line(-600, 1201, 0.25, m, [&](double x) { return k * x * x; }), 3);
    EXPECT_NEAR((sol.energies[1] - sol.energies[0]) / hw, 1.0, 5e-3);
    EXPECT_NEAR((sol.energies[2] - sol.energies[1]) / hw, 1.0, 5e-3);
    EXPECT_NEAR(sol.energies[0] / (0.5 * hw), 1.0, 5e-3);

    // density of the ground state is Gaussian with sigma = a / sqrt(2)
    const double a = std::sqrt(2.0 * kKin / m / hw);
    const auto dm = dot_metrics(sol);
    EXPECT_NEAR(dm.dx / (4.0 * a / std::sqrt(2.0)), 1.0, 1e-2);
    EXPECT_NEAR(dm.x, 0.0, 1e-9);
    EXPECT_NEAR(dm.p_max, 1.0 / (a * std::sqrt(kPi)), 1e-3 / a);
}

TEST(Eigen, InfiniteWellDotSize) {
    // sin^2 ground state of a 50 nm box: variance L^2 (1/12 - 1/(2 pi^2))
    const double L = 50.0;
    const auto sol = solve_eigen(line(-200, 401, L / 400, 0.19, [](double) { return 0.0; }), 2);
    const auto dm = dot_metrics(sol);
    EXPECT_NEAR(dm.x, 0.0, 1e-9);
    EXPECT_NEAR(dm.dx, 4.0 * L * std::sqrt(1.0 / 12.0 - 1.0 / (2.0 * kPi * kPi)), 1e-2);
    EXPECT_NEAR(dm.gap, sol.energies[1] - sol.energies[0], 0.0);
    EXPECT_NEAR(dm.p_max, 2.0 / L, 1e-6);
}

TEST(Eigen, GridConvergence) {
    const double exact = box_level(1, 50, 0.19);
    double err[3];
    int i = 0;
    for (int n : {51, 101, 201}) {
        const auto sol = solve_eigen(line(0, n, 50.0 / (n - 1), 0.19, [](double) { return 0.0; }), 2);
        err[i++] = std::abs(sol.energies[0] - exact);
    }
    EXPECT_GE(err[0] / err[1], 3.5);
    EXPECT_GE(err[1] / err[2], 3.5);
}

TEST(Eigen, OrthonormalAndNormalized) {
    const auto sol = solve_eigen(line(0, 301, 0.5, 0.19, [](double x) { return 2e-6 * (x - 60) * (x - 60) - 0.01; }), 4);
    for (int a = 0; a < 4; ++a)
        for (int b = 0; b < 4; ++b) EXPECT_NEAR(inner(sol, a, b), a == b ? 1.0 : 0.0, 1e-10) << a << b;
    for (int a = 1; a < 4; ++a) EXPECT_GT(sol.energies[a], sol.energies[a - 1]);
    for (const auto& psi : sol.wavefunctions) {
        EXPECT_EQ(psi.front(), 0.0);
        EXPECT_EQ(psi.back(), 0.0);
    }
    for (double r : sol.residuals) EXPECT_LE(r, 1e-10);
}

TEST(Eigen, SymmetricDoubleWell) {
    double last_split = 1.0;
    for (double barrier : {0.002, 0.005, 0.01}) {
        auto v = [&](double x) { return std::abs(x - 100.0) < 10.0 ? barrier : 0.0; };
        const auto sol = solve_eigen(line(0, 401, 0.5, 0.19, v), 2);
        const auto& p0 = sol.wavefunctions[0];
        const auto& p1 = sol.wavefunctions[1];
        for (int i = 0; i <= 200; ++i) {
            EXPECT_NEAR(p0[i], p0[400 - i], 1e-8);
            EXPECT_NEAR(p1[i], -p1[400 - i], 1e-8);
        }
        const double split = sol.energies[1] - sol.energies[0];
        EXPECT_GT(split, 0.0);
        EXPECT_LT(split, last_split);
        last_split = split;
        const auto dm = dot_metrics(sol);
        EXPECT_LT(dm.x, 100.0);  // left peak wins the tie
        EXPECT_GT(dm.dx, 100.0);  // spans both wells
    }
}

TEST(Eigen, VariationalMonotonicity) {
    auto base = line(0, 201, 0.5, 0.19, [](double x) { return 1e-5 * (x - 50) * (x - 50) / 10.0; });
    const double e0 = solve_eigen(base, 2).energies[0];
    auto pert = base;
    for (std::size_t i = 0; i < pert.values.size(); ++i) pert.values[i] -= 1e-3 * std::exp(-0.01 * (i - 120.0) * (i - 120.0));
    EXPECT_LE(solve_eigen(pert, 2).energies[0], e0);
}

TEST(Eigen, ConstantMassStencil) {
    const auto v = line(0, 11, 0.5, 0.3, [](double x) { return 0.01 * x; });
    std::vector<double> d, e;
    line_hamiltonian(v, d, e);
    const double c = kKin / 0.3 / 0.25;
    for (std::size_t i = 0; i < d.size(); ++i) EXPECT_EQ(d[i], v.values[i + 1] + 2.0 * c);
    for (double x : e) EXPECT_EQ(x, -c);

    const auto s = parse(box2d(20, 10, 21, 11, 0.3, 0.3));
    const auto dom = make_quantum_domain(s, build_grid(s), QuantumMode::plane);
    GridFunction g{dom, std::vector<double>(dom->size(), 0.0)};
    const auto h = plane_hamiltonian(g);
    const double cx = kKin / 0.3;  // unit spacing
    EXPECT_EQ(h.coeff(0, 0), 4.0 * cx);
    EXPECT_EQ(h.coeff(0, 1), -cx);
    EXPECT_EQ(h.coeff(0, 19), -cx);
}

TEST(Eigen, HamiltonianIsSymmetric) {
    json j = box2d(40, 20, 41, 21, 0.19, 0.98);
    j["regions"][0]["box_nm"]["z"] = {0, 8};
    json r2 = region2d("sige", 0, 40, 8, 20, 13.0, 0.15);
    r2["mass"] = {0.21, 0.5};
    j["regions"].push_back(r2);
    const auto s = parse(j);
    const auto dom = make_quantum_domain(s, build_grid(s), QuantumMode::plane);
    GridFunction g{dom, std::vector<double>(dom->size())};
    for (std::size_t i = 0; i < g.values.size(); ++i) g.values[i] = 1e-3 * std::sin(0.37 * i);
    const Eigen::SparseMatrix<double> h = plane_hamiltonian(g);
    const Eigen::SparseMatrix<double> ht = h.transpose();
    EXPECT_EQ((h - ht).norm(), 0.0);
}

TEST(Eigen, HalfPointMassIsHarmonicMeanOfInverse) {
    EXPECT_DOUBLE_EQ(half_point_inverse_mass(0.2, 0.2), 5.0);
    EXPECT_DOUBLE_EQ(half_point_inverse_mass(0.1, 0.3), 2.0 / 0.4);
}

TEST(Eigen, PlaneBoxLevels) {
    const double lx = 60, lz = 20, mx = 0.19, mz = 0.98;
    const auto s = parse(box2d(lx, lz, 121, 41, mx, mz));
    const auto dom = make_quantum_domain(s, build_grid(s), QuantumMode::plane);
    GridFunction g{dom, std::vector<double>(dom->size(), 0.0)};
    const auto t0 = std::chrono::steady_clock::now();
    const auto sol = solve_eigen(g, 3);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const auto level = [&](int n, int m) {
        return kPi * kPi * kKin * (n * n / (mx * lx * lx) + m * m / (mz * lz * lz));
    };
    EXPECT_NEAR(sol.energies[0] / level(1, 1), 1.0, 5e-3);
    EXPECT_NEAR(sol.energies[1] / level(2, 1), 1.0, 5e-3);
    EXPECT_NEAR(sol.energies[2] / level(1, 2), 1.0, 5e-3);  // heavy z mass: (1,2) below (3,1)
    for (int a = 0; a < 3; ++a)
        for (int b = 0; b < 3; ++b) EXPECT_NEAR(inner(sol, a, b), a == b ? 1.0 : 0.0, 1e-10);
    for (double r : sol.residuals) EXPECT_LE(r, 1e-10);
    const auto dm = dot_metrics(sol);
    EXPECT_NEAR(dm.x, 30.0, 1e-9);
    EXPECT_LT(secs, 5.0);
}

TEST(Confinement, OffsetsPassThrough) {
    json j = box2d(40, 30, 41, 31, 0.19, 0.19);
    j["regions"][0]["box_nm"]["z"] = {0, 20};
    j["regions"].push_back(region2d("ox", 0, 40, 20, 30, 3.9, 3.0));
    j["gates"][0]["voltage_V"] = 0.0;
    j["quantum"]["box_nm"]["z"] = {0, 30};
    const auto s = parse(j);
    PoissonSolver solver(s);
    const auto f = solver.solve(hold_bias(s));  // no charge, zero boundary data
    const auto v = confinement_potential(f, s, QuantumMode::plane);
    const auto& q = *v.domain;
    EXPECT_EQ(v.values[q.index(5, 10)], 0.0);
    EXPECT_EQ(v.values[q.index(5, 25)], 3.0);
    EXPECT_EQ(v.values[q.index(5, 20)], 3.0);  // interface nodes belong to the upper region
    const auto l = confinement_potential(f, s, QuantumMode::line);
    EXPECT_EQ(l.values.size(), 41u);
    EXPECT_EQ(l.values[7], 0.0);
}

TEST(Confinement, EmptySubdomainRejected) {
    json j = box2d(40, 20, 41, 21, 0.19, 0.19);
    j["quantum"]["box_nm"]["x"] = {10, 12};
    const auto s = parse(j);
    EXPECT_THROW(make_quantum_domain(s, build_grid(s), QuantumMode::line), SetupError);
    EXPECT_THROW(solve_eigen(line(0, 11, 1.0, 0.2, [](double) { return 0.0; }), 1), SetupError);
}

TEST(Eigen, CsvHeader) {
    const auto g = line(0, 11, 1.0, 0.2, [](double) { return 0.0; });
    std::ostringstream os;
    write_eigen_csv(os, g, solve_eigen(g, 2));
    EXPECT_EQ(os.str().substr(0, os.str().find('\n')), "x_nm,vconf_eV,psi0,psi1");
}
