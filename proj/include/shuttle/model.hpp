#ifndef SHUTTLE_MODEL_HPP
#define SHUTTLE_MODEL_HPP

#include <algorithm>
#include <cmath>
#include <concepts>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "shuttle/device.hpp"
#include "shuttle/poisson.hpp"
#include "shuttle/schrodinger.hpp"

namespace shuttle {

/// What the search algorithms need to know about the gates.
struct ModelLayout {
    std::vector<std::string> names;
    std::vector<GateRole> roles;
    std::vector<double> centers;    // nm, along the transport axis
    std::vector<std::size_t> path;  // shuttling gates in transport order
    std::vector<bool> driven;       // per path position: ramped (true) or solved companion (false)
    BiasPoint hold;                 // every gate at its hold voltage

    /// Mean spacing of adjacent path gate centers.
    double pitch() const {
        if (path.size() < 2) return 0.0;
        return (centers[path.back()] - centers[path.front()]) / static_cast<double>(path.size() - 1);
    }
    std::size_t path_position(std::size_t gate) const {
        for (std::size_t k = 0; k < path.size(); ++k)
            if (path[k] == gate) return k;
        throw InputError("gate '" + names[gate] + "' is not on the shuttling path");
    }
};

/// Driven gates are plungers when the path alternates plunger/tunnel;
/// otherwise plain alternation along the path starting with the first gate.
inline std::vector<bool> gate_parity(const std::vector<GateRole>& roles, const std::vector<std::size_t>& path) {
    std::vector<bool> driven(path.size());
    bool alternates = path.size() >= 2;
    for (std::size_t k = 1; k < path.size(); ++k) alternates &= roles[path[k]] != roles[path[k - 1]];
    for (std::size_t k = 0; k < path.size(); ++k)
        driven[k] = alternates ? roles[path[k]] == GateRole::plunger : k % 2 == 0;
    return driven;
}

inline ModelLayout make_layout(const DeviceSpec& spec) {
    ModelLayout l;
    for (const auto& g : spec.gates) {
        l.names.push_back(g.name);
        l.roles.push_back(g.role);
        l.centers.push_back(spec.is_2d() ? g.footprint.center() : spec.quantum.line_nm);
    }
    l.path = shuttle_path(spec);
    l.driven = gate_parity(l.roles, l.path);
    l.hold = hold_bias(spec);
    return l;
}

struct LineProfile {
    std::vector<double> x;   // nm
    std::vector<double> ec;  // eV
};

/// Interface every search algorithm is written against; the device-backed
/// simulator below is one model, tests add affine and analytic ones.
template <class M>
concept ShuttleModel = requires(const M& m, const BiasPoint& b, std::size_t g) {
    { m.layout() } -> std::convertible_to<const ModelLayout&>;
    { m.probe_ec(b, g) } -> std::convertible_to<double>;
    { m.line_profile(b) } -> std::convertible_to<LineProfile>;
    { m.dot(b) } -> std::convertible_to<DotMetrics>;
};

/// Device-backed simulator: Poisson + Schrodinger per bias. For frozen or
/// charge-free devices every observation is an affine function of the
/// terminal voltages, so the unit responses are contracted once onto the
/// observation points and a bias costs a small matrix-vector product.
class DeviceModel {
public:
    DeviceModel(const DeviceSpec& spec, QuantumMode mode)
        : solver_(std::make_shared<PoissonSolver>(spec)), mode_(mode), layout_(make_layout(spec)) {
        const Grid& g = solver_->grid();
        domain_ = make_quantum_domain(spec, g, mode);

        // taps: (node, weight) lists per observation
        const auto point = [&](double x, double z) {
            std::vector<std::pair<std::size_t, double>> taps;
            const auto locate = [](double v, double h, int n, int& i, double& t) {
                const double s = std::clamp(v / h, 0.0, static_cast<double>(n - 1));
                i = std::min(static_cast<int>(std::floor(s)), n - 2);
                t = s - i;
            };
            int i = 0, j = 0;
            double tx = 0.0, tz = 0.0;
            locate(x, g.hx, g.nx, i, tx);
            if (!g.is_2d()) {
                taps.emplace_back(g.index(i, 0), 1.0 - tx);
                taps.emplace_back(g.index(i + 1, 0), tx);
                return taps;
            }
            locate(z, g.hz, g.nz, j, tz);
            taps.emplace_back(g.index(i, j), (1.0 - tx) * (1.0 - tz));
            taps.emplace_back(g.index(i + 1, j), tx * (1.0 - tz));
            taps.emplace_back(g.index(i, j + 1), (1.0 - tx) * tz);
            taps.emplace_back(g.index(i + 1, j + 1), tx * tz);
            return taps;
        };
        const double zq = spec.quantum.line_nm;
        std::vector<std::vector<std::pair<std::size_t, double>>> probe_taps, line_taps, quantum_taps;
        for (std::size_t k = 0; k < spec.gates.size(); ++k) probe_taps.push_back(point(layout_.centers[k], zq));
        for (int i = 0; i < g.nx; ++i) {
            line_x_.push_back(g.x(i));
            line_taps.push_back(point(g.x(i), g.is_2d() ? zq : 0.0));
        }
        if (mode == QuantumMode::line) {
            for (int a = 0; a < domain_->nx(); ++a) {
                const int i = domain_->i0 + a;
                if (!g.is_2d()) {
                    quantum_taps.push_back({{g.index(i, 0), 1.0}});
                } else if (domain_->tl == 0.0) {
                    quantum_taps.push_back({{g.index(i, domain_->jl), 1.0}});
                } else {
                    quantum_taps.push_back({{g.index(i, domain_->jl), 1.0 - domain_->tl},
                                            {g.index(i, domain_->jl + 1), domain_->tl}});
                }
            }
        } else {
            for (int b = 0; b < domain_->nz(); ++b)
                for (int a = 0; a < domain_->nx(); ++a)
                    quantum_taps.push_back({{g.index(domain_->i0 + a, domain_->j0 + b), 1.0}});
        }
        probes_ = Observer(std::move(probe_taps));
        line_ = Observer(std::move(line_taps));
        quantum_ = Observer(std::move(quantum_taps));

        if (solver_->is_linear()) {
            const LinearResponse response(*solver_);
            for (Observer* o : {&probes_, &line_, &quantum_}) o->contract(*solver_, response);
        }
    }

    const ModelLayout& layout() const { return layout_; }
    const DeviceSpec& spec() const { return solver_->spec(); }
    const PoissonSolver& solver() const { return *solver_; }
    QuantumMode mode() const { return mode_; }
    std::shared_ptr<const QuantumDomain> domain() const { return domain_; }

    PotentialField field(const BiasPoint& bias) const { return solver_->solve(bias); }

    double probe_ec(const BiasPoint& bias, std::size_t gate) const {
        return probes_.one(gate, *solver_, terminals(bias), cached_field(bias));
    }

    LineProfile line_profile(const BiasPoint& bias) const {
        return {line_x_, line_.all(*solver_, terminals(bias), cached_field(bias))};
    }

    GridFunction vconf(const BiasPoint& bias) const {
        return {domain_, quantum_.all(*solver_, terminals(bias), cached_field(bias))};
    }

    EigenSolution states(const BiasPoint& bias, int k = 2) const { return solve_eigen(vconf(bias), k); }

    DotMetrics dot(const BiasPoint& bias) const { return dot_metrics(states(bias, 2)); }

private:
    struct Observer {
        std::vector<std::vector<std::pair<std::size_t, double>>> taps;
        bool contracted = false;
        std::vector<double> base;
        std::vector<double> unit;  // row-major, observations x terminals
        std::size_t terminals = 0;

        Observer() = default;
        explicit Observer(std::vector<std::vector<std::pair<std::size_t, double>>> t) : taps(std::move(t)) {}

        void contract(const PoissonSolver& solver, const LinearResponse& response) {
            const Grid& g = solver.grid();
            const auto& regions = solver.spec().regions;
            terminals = solver.terminal_count();
            base.assign(taps.size(), 0.0);
            unit.assign(taps.size() * terminals, 0.0);
            for (std::size_t o = 0; o < taps.size(); ++o)
                for (const auto& [node, w] : taps[o]) {
                    base[o] += w * (regions[g.node_region[node]].band_offset_eV - response.base()[node]);
                    for (std::size_t t = 0; t < terminals; ++t) unit[o * terminals + t] -= w * response.unit(t)[node];
                }
            contracted = true;
        }

        double one(std::size_t o, const PoissonSolver& solver, const std::vector<double>& v,
                   const std::optional<PotentialField>& field) const {
            if (contracted) {
                double s = base[o];
                for (std::size_t t = 0; t < terminals; ++t) s += unit[o * terminals + t] * v[t];
                return s;
            }
            (void)solver;
            double s = 0.0;
            for (const auto& [node, w] : taps[o]) s += w * field->ec[node];
            return s;
        }

        std::vector<double> all(const PoissonSolver& solver, const std::vector<double>& v,
                                const std::optional<PotentialField>& field) const {
            std::vector<double> out(taps.size());
            for (std::size_t o = 0; o < taps.size(); ++o) out[o] = one(o, solver, v, field);
            return out;
        }
    };

    std::vector<double> terminals(const BiasPoint& bias) const { return solver_->terminal_values(bias); }

    // full solve only when the superposition shortcut is unavailable
    std::optional<PotentialField> cached_field(const BiasPoint& bias) const {
        if (solver_->is_linear()) return std::nullopt;
        return solver_->solve(bias);
    }

    std::shared_ptr<const PoissonSolver> solver_;
    QuantumMode mode_;
    ModelLayout layout_;
    std::shared_ptr<const QuantumDomain> domain_;
    std::vector<double> line_x_;
    Observer probes_, line_, quantum_;
};

static_assert(ShuttleModel<DeviceModel>);

}  // namespace shuttle

#endif
