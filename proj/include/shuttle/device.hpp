#ifndef SHUTTLE_DEVICE_HPP
#define SHUTTLE_DEVICE_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "shuttle/error.hpp"
#include "shuttle/units.hpp"

namespace shuttle {

using json = nlohmann::json;

inline constexpr int device_schema_version = 1;

enum class Dimension { one, two };
enum class ChargeModel { frozen, semiclassical };
enum class GateRole { plunger, tunnel, accumulation, screening, reservoir };
enum class Boundary { left, right, bottom, top };

struct Interval {
    double lo = 0.0;
    double hi = 0.0;

    double length() const { return hi - lo; }
    double center() const { return 0.5 * (lo + hi); }
    bool operator==(const Interval&) const = default;
};

/// Axis-aligned box in nm. In 1D devices only `x` is meaningful.
struct Box {
    Interval x;
    Interval z;
    bool operator==(const Box&) const = default;
};

struct Doping {
    double donor_cm3 = 0.0;
    double acceptor_cm3 = 0.0;
    bool operator==(const Doping&) const = default;
};

struct MaterialRegion {
    std::string name;
    Box box;
    double epsilon_r = 1.0;
    double band_offset_eV = 0.0;
    std::array<double, 2> mass{1.0, 1.0};  // (m_x, m_z) in units of m_e
    Doping doping;
    double fixed_charge_Ccm3 = 0.0;
    ChargeModel charge_model = ChargeModel::frozen;
    // statistics parameters, only read for semiclassical regions
    double band_gap_eV = units::si_band_gap_eV;
    double nc_300K_cm3 = units::si_nc_300K_cm3;
    double nv_300K_cm3 = units::si_nv_300K_cm3;

    bool operator==(const MaterialRegion&) const = default;
};

struct GateSpec {
    std::string name;
    Interval footprint;  // x interval on the top boundary; [L, L] in 1D
    double work_function_offset_V = 0.0;
    GateRole role = GateRole::plunger;
    double voltage_V = 0.0;  // hold voltage for gates the search does not drive
    double width_y_nm = 0.0;  // out-of-plane extent, informational

    bool operator==(const GateSpec&) const = default;
};

struct ContactSpec {
    std::string name;
    Boundary boundary = Boundary::bottom;
    Interval range;  // along the boundary; ignored in 1D
    double voltage_V = 0.0;

    bool operator==(const ContactSpec&) const = default;
};

/// Where the Schrodinger problem lives. `line_nm` is the vertical position of
/// the 1D quantum line (2D devices) or the probe coordinate (1D devices).
struct QuantumSpec {
    Box box;
    double line_nm = 0.0;
    bool operator==(const QuantumSpec&) const = default;
};

struct DeviceSpec {
    int schema_version = device_schema_version;
    std::string name;
    Dimension dimension = Dimension::one;
    std::array<double, 2> extent_nm{0.0, 0.0};
    std::array<int, 2> grid{0, 1};
    double temperature_K = 0.0;
    double statistics_floor_K = 1.0;
    std::vector<MaterialRegion> regions;
    std::vector<GateSpec> gates;
    std::vector<ContactSpec> contacts;
    QuantumSpec quantum;
    json search = json::object();  // optional search-config defaults shipped with the device

    bool operator==(const DeviceSpec&) const = default;

    bool is_2d() const { return dimension == Dimension::two; }
    double top() const { return is_2d() ? extent_nm[1] : extent_nm[0]; }

    std::optional<std::size_t> gate_index(const std::string& gate) const {
        for (std::size_t i = 0; i < gates.size(); ++i)
            if (gates[i].name == gate) return i;
        return std::nullopt;
    }

    double statistics_temperature() const { return std::max(temperature_K, statistics_floor_K); }
};

inline bool is_shuttling(GateRole r) { return r == GateRole::plunger || r == GateRole::tunnel; }

// --------------------------------------------------------------------------
// enum <-> text

inline const char* to_string(Dimension d) { return d == Dimension::one ? "1D" : "2D"; }
inline const char* to_string(ChargeModel m) { return m == ChargeModel::frozen ? "frozen" : "semiclassical"; }
inline const char* to_string(GateRole r) {
    switch (r) {
        case GateRole::plunger: return "plunger";
        case GateRole::tunnel: return "tunnel";
        case GateRole::accumulation: return "accumulation";
        case GateRole::screening: return "screening";
        case GateRole::reservoir: return "reservoir";
    }
    return "plunger";
}
inline const char* to_string(Boundary b) {
    switch (b) {
        case Boundary::left: return "left";
        case Boundary::right: return "right";
        case Boundary::bottom: return "bottom";
        case Boundary::top: return "top";
    }
    return "bottom";
}

namespace detail {

/// Walks a json document while remembering where it is, so that schema
/// errors can name the offending path.
class Reader {
public:
    Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {}

    const json& raw() const { return j_; }
    const std::string& path() const { return path_; }

    bool has(const char* key) const { return j_.is_object() && j_.contains(key); }

    Reader at(const char* key) const {
        if (!j_.is_object()) fail("expected an object");
        auto it = j_.find(key);
        if (it == j_.end()) throw ParseError(join(key), "missing required key");
        return Reader(*it, join(key));
    }

    Reader at(std::size_t i) const {
        if (!j_.is_array() || i >= j_.size()) fail("index out of range");
        return Reader(j_[i], path_ + "[" + std::to_string(i) + "]");
    }

    std::size_t size() const {
        if (!j_.is_array()) fail("expected an array");
        return j_.size();
    }

    double number() const {
        if (!j_.is_number()) fail("expected a number");
        double v = j_.get<double>();
        if (!std::isfinite(v)) fail("expected a finite number");
        return v;
    }

    int integer() const {
        if (!j_.is_number_integer()) fail("expected an integer");
        return j_.get<int>();
    }

    std::string text() const {
        if (!j_.is_string()) fail("expected a string");
        return j_.get<std::string>();
    }

    double number_or(const char* key, double fallback) const { return has(key) ? at(key).number() : fallback; }

    Interval interval() const {
        if (!j_.is_array() || j_.size() != 2) fail("expected a [lo, hi] pair");
        return {at(std::size_t{0}).number(), at(std::size_t{1}).number()};
    }

    [[noreturn]] void fail(const std::string& what) const { throw ParseError(path_, what); }

private:
    std::string join(const char* key) const { return path_.empty() ? std::string(key) : path_ + "." + key; }

    const json& j_;
    std::string path_;
};

template <class E, std::size_t N>
E parse_enum(const Reader& r, const std::array<std::pair<const char*, E>, N>& table) {
    const std::string s = r.text();
    for (const auto& [name, value] : table)
        if (s == name) return value;
    std::string options;
    for (const auto& [name, value] : table) options += std::string(options.empty() ? "" : ", ") + name;
    r.fail("unknown value '" + s + "' (expected one of: " + options + ")");
}

inline Box parse_box(const Reader& r, Dimension dim) {
    Box b;
    b.x = r.at("x").interval();
    if (dim == Dimension::two) b.z = r.at("z").interval();
    return b;
}

inline json box_to_json(const Box& b, Dimension dim) {
    json j;
    j["x"] = {b.x.lo, b.x.hi};
    if (dim == Dimension::two) j["z"] = {b.z.lo, b.z.hi};
    return j;
}

inline bool intervals_overlap_open(const Interval& a, const Interval& b) { return a.lo < b.hi && b.lo < a.hi; }
inline bool intervals_touch_closed(const Interval& a, const Interval& b) { return a.lo <= b.hi && b.lo <= a.hi; }

}  // namespace detail

// --------------------------------------------------------------------------
// validation

/// Checks every DeviceSpec invariant; throws ValidationError naming the
/// offenders on the first violated rule.
inline void validate(const DeviceSpec& s) {
    const bool two = s.is_2d();
    const double lx = s.extent_nm[0];
    const double lz = two ? s.extent_nm[1] : 0.0;

    if (s.schema_version != device_schema_version)
        throw ValidationError("unsupported schema_version " + std::to_string(s.schema_version));
    if (!(lx > 0.0) || (two && !(lz > 0.0))) throw ValidationError("extents must be positive");
    if (s.grid[0] < 3 || (two && s.grid[1] < 3)) throw ValidationError("grid needs at least 3 nodes per axis");
    if (!two && s.grid[1] != 1) throw ValidationError("1D devices have a single node row");
    if (!(s.temperature_K >= 0.0)) throw ValidationError("temperature must be non-negative");
    if (!(s.statistics_floor_K > 0.0)) throw ValidationError("statistics floor must be positive");
    if (s.regions.empty()) throw ValidationError("device has no regions");

    std::set<std::string> region_names;
    for (const auto& r : s.regions) {
        if (!region_names.insert(r.name).second) throw ValidationError("duplicate region name", {r.name});
        if (!(r.epsilon_r >= 1.0)) throw ValidationError("epsilon_r must be >= 1", {r.name});
        if (!(r.mass[0] > 0.0) || !(r.mass[1] > 0.0)) throw ValidationError("mass components must be > 0", {r.name});
        if (r.doping.donor_cm3 < 0.0 || r.doping.acceptor_cm3 < 0.0)
            throw ValidationError("concentrations must be >= 0", {r.name});
        if (r.charge_model == ChargeModel::semiclassical && (!(r.nc_300K_cm3 > 0.0) || !(r.nv_300K_cm3 > 0.0)))
            throw ValidationError("effective densities of states must be > 0", {r.name});
        if (!(r.box.x.lo < r.box.x.hi) || r.box.x.lo < 0.0 || r.box.x.hi > lx)
            throw ValidationError("region box outside the domain or empty along x", {r.name});
        if (two && (!(r.box.z.lo < r.box.z.hi) || r.box.z.lo < 0.0 || r.box.z.hi > lz))
            throw ValidationError("region box outside the domain or empty along z", {r.name});
    }

    // tiling: pairwise disjoint interiors and total measure equal to the domain
    double measure = 0.0;
    for (std::size_t a = 0; a < s.regions.size(); ++a) {
        const auto& ra = s.regions[a];
        measure += ra.box.x.length() * (two ? ra.box.z.length() : 1.0);
        for (std::size_t b = a + 1; b < s.regions.size(); ++b) {
            const auto& rb = s.regions[b];
            bool overlap = detail::intervals_overlap_open(ra.box.x, rb.box.x) &&
                           (!two || detail::intervals_overlap_open(ra.box.z, rb.box.z));
            if (overlap) throw ValidationError("overlapping regions", {ra.name, rb.name});
        }
    }
    const double domain = lx * (two ? lz : 1.0);
    if (std::abs(measure - domain) > 1e-9 * domain) {
        // locate a point nobody claims, for the message
        std::string where = "unknown";
        const int probe = 64;
        for (int j = 0; j < (two ? probe : 1) && where == "unknown"; ++j)
            for (int i = 0; i < probe; ++i) {
                double x = (i + 0.5) * lx / probe, z = two ? (j + 0.5) * lz / probe : 0.0;
                bool claimed = false;
                for (const auto& r : s.regions)
                    if (x >= r.box.x.lo && x <= r.box.x.hi && (!two || (z >= r.box.z.lo && z <= r.box.z.hi)))
                        claimed = true;
                if (!claimed) {
                    std::ostringstream os;
                    os << "(" << x << (two ? ", " + std::to_string(z) : std::string()) << ")";
                    where = os.str();
                    break;
                }
            }
        throw ValidationError("regions leave a gap in the domain near " + where, {where});
    }

    std::set<std::string> terminal_names;
    for (const auto& g : s.gates) {
        if (g.name.empty() || !terminal_names.insert(g.name).second)
            throw ValidationError("duplicate gate or contact name", {g.name});
        if (!std::isfinite(g.voltage_V) || !std::isfinite(g.work_function_offset_V))
            throw ValidationError("gate voltages must be finite", {g.name});
        if (two) {
            if (!(g.footprint.lo < g.footprint.hi) || g.footprint.lo < 0.0 || g.footprint.hi > lx)
                throw ValidationError("gate footprint outside the top boundary", {g.name});
        } else if (g.footprint.lo != lx || g.footprint.hi != lx) {
            throw ValidationError("1D gates sit on the top end of the axis", {g.name});
        }
    }
    for (std::size_t a = 0; a < s.gates.size(); ++a)
        for (std::size_t b = a + 1; b < s.gates.size(); ++b)
            if (detail::intervals_touch_closed(s.gates[a].footprint, s.gates[b].footprint))
                throw ValidationError("overlapping gates", {s.gates[a].name, s.gates[b].name});

    for (const auto& c : s.contacts) {
        if (c.name.empty() || !terminal_names.insert(c.name).second)
            throw ValidationError("duplicate gate or contact name", {c.name});
        if (!two) {
            if (c.boundary != Boundary::bottom && c.boundary != Boundary::top)
                throw ValidationError("1D contacts sit on the bottom or top end", {c.name});
            if (c.boundary == Boundary::top)
                for (const auto& g : s.gates) throw ValidationError("overlapping gates", {g.name, c.name});
            continue;
        }
        const bool horizontal = c.boundary == Boundary::bottom || c.boundary == Boundary::top;
        const double len = horizontal ? lx : lz;
        if (!(c.range.lo <= c.range.hi) || c.range.lo < 0.0 || c.range.hi > len)
            throw ValidationError("contact range outside its boundary", {c.name});
        if (c.boundary == Boundary::top)
            for (const auto& g : s.gates)
                if (detail::intervals_touch_closed(g.footprint, c.range))
                    throw ValidationError("overlapping gates", {g.name, c.name});
    }
    for (std::size_t a = 0; a < s.contacts.size(); ++a)
        for (std::size_t b = a + 1; b < s.contacts.size(); ++b)
            if (two && s.contacts[a].boundary == s.contacts[b].boundary &&
                detail::intervals_touch_closed(s.contacts[a].range, s.contacts[b].range))
                throw ValidationError("overlapping contacts", {s.contacts[a].name, s.contacts[b].name});

    const auto& q = s.quantum.box;
    if (!(q.x.lo < q.x.hi) || q.x.lo < 0.0 || q.x.hi > lx)
        throw ValidationError("quantum box outside the domain", {"quantum"});
    if (two) {
        if (!(q.z.lo < q.z.hi) || q.z.lo < 0.0 || q.z.hi > lz)
            throw ValidationError("quantum box outside the domain", {"quantum"});
        if (s.quantum.line_nm < q.z.lo || s.quantum.line_nm > q.z.hi)
            throw ValidationError("quantum line outside the quantum box", {"quantum"});
    } else if (s.quantum.line_nm < q.x.lo || s.quantum.line_nm > q.x.hi) {
        throw ValidationError("probe coordinate outside the quantum interval", {"quantum"});
    }
    if (!s.search.is_object()) throw ValidationError("search defaults must be an object", {"search"});
}

// --------------------------------------------------------------------------
// parsing / serialization

inline DeviceSpec parse_device_json(const json& root) {
    using detail::Reader;
    Reader r(root, "");
    if (!root.is_object()) r.fail("device document must be an object");

    DeviceSpec s;
    s.schema_version = r.at("schema_version").integer();
    s.name = r.at("name").text();
    s.dimension = detail::parse_enum<Dimension, 2>(
        r.at("dimension"), {{{"1D", Dimension::one}, {"2D", Dimension::two}}});
    const bool two = s.is_2d();

    {
        Reader e = r.at("extent_nm");
        if (e.size() != (two ? 2u : 1u)) e.fail(two ? "expected [x, z]" : "expected [x]");
        s.extent_nm[0] = e.at(std::size_t{0}).number();
        s.extent_nm[1] = two ? e.at(std::size_t{1}).number() : 0.0;
    }
    {
        Reader g = r.at("grid");
        if (g.size() != (two ? 2u : 1u)) g.fail(two ? "expected [nx, nz]" : "expected [nx]");
        s.grid[0] = g.at(std::size_t{0}).integer();
        s.grid[1] = two ? g.at(std::size_t{1}).integer() : 1;
    }
    s.temperature_K = r.at("temperature_K").number();
    s.statistics_floor_K = r.number_or("statistics_floor_K", 1.0);

    Reader regions = r.at("regions");
    for (std::size_t i = 0; i < regions.size(); ++i) {
        Reader m = regions.at(i);
        MaterialRegion reg;
        reg.name = m.at("name").text();
        reg.box = detail::parse_box(m.at("box_nm"), s.dimension);
        reg.epsilon_r = m.at("epsilon_r").number();
        reg.band_offset_eV = m.at("band_offset_eV").number();
        Reader mass = m.at("mass");
        if (mass.raw().is_number()) {
            reg.mass = {mass.number(), mass.number()};
        } else {
            if (mass.size() != (two ? 2u : 1u)) mass.fail(two ? "expected [m_x, m_z]" : "expected [m_x]");
            reg.mass[0] = mass.at(std::size_t{0}).number();
            reg.mass[1] = two ? mass.at(std::size_t{1}).number() : reg.mass[0];
        }
        if (m.has("doping_cm3")) {
            Reader d = m.at("doping_cm3");
            reg.doping.donor_cm3 = d.number_or("donor", 0.0);
            reg.doping.acceptor_cm3 = d.number_or("acceptor", 0.0);
        }
        reg.fixed_charge_Ccm3 = m.number_or("fixed_charge_Ccm3", 0.0);
        if (m.has("charge_model"))
            reg.charge_model = detail::parse_enum<ChargeModel, 2>(
                m.at("charge_model"),
                {{{"frozen", ChargeModel::frozen}, {"semiclassical", ChargeModel::semiclassical}}});
        reg.band_gap_eV = m.number_or("band_gap_eV", units::si_band_gap_eV);
        reg.nc_300K_cm3 = m.number_or("nc_300K_cm3", units::si_nc_300K_cm3);
        reg.nv_300K_cm3 = m.number_or("nv_300K_cm3", units::si_nv_300K_cm3);
        s.regions.push_back(std::move(reg));
    }

    Reader gates = r.at("gates");
    for (std::size_t i = 0; i < gates.size(); ++i) {
        Reader g = gates.at(i);
        GateSpec gate;
        gate.name = g.at("name").text();
        if (two)
            gate.footprint = g.at("footprint_nm").interval();
        else
            gate.footprint = g.has("footprint_nm") ? g.at("footprint_nm").interval()
                                                   : Interval{s.extent_nm[0], s.extent_nm[0]};
        gate.work_function_offset_V = g.number_or("work_function_offset_V", 0.0);
        gate.role = detail::parse_enum<GateRole, 5>(
            g.at("role"), {{{"plunger", GateRole::plunger},
                            {"tunnel", GateRole::tunnel},
                            {"accumulation", GateRole::accumulation},
                            {"screening", GateRole::screening},
                            {"reservoir", GateRole::reservoir}}});
        gate.voltage_V = g.number_or("voltage_V", 0.0);
        gate.width_y_nm = g.number_or("width_y_nm", 0.0);
        s.gates.push_back(std::move(gate));
    }

    if (r.has("contacts")) {
        Reader contacts = r.at("contacts");
        for (std::size_t i = 0; i < contacts.size(); ++i) {
            Reader c = contacts.at(i);
            ContactSpec contact;
            contact.name = c.at("name").text();
            contact.boundary = detail::parse_enum<Boundary, 4>(
                c.at("boundary"), {{{"left", Boundary::left},
                                    {"right", Boundary::right},
                                    {"bottom", Boundary::bottom},
                                    {"top", Boundary::top}}});
            if (two) {
                const bool horizontal = contact.boundary == Boundary::bottom || contact.boundary == Boundary::top;
                contact.range = c.has("range_nm")
                                    ? c.at("range_nm").interval()
                                    : Interval{0.0, horizontal ? s.extent_nm[0] : s.extent_nm[1]};
            }
            contact.voltage_V = c.at("voltage_V").number();
            s.contacts.push_back(std::move(contact));
        }
    }

    Reader q = r.at("quantum");
    s.quantum.box = detail::parse_box(q.at("box_nm"), s.dimension);
    const Interval& vertical = two ? s.quantum.box.z : s.quantum.box.x;
    s.quantum.line_nm = q.number_or("line_nm", vertical.center());

    if (r.has("search")) {
        if (!root["search"].is_object()) r.at("search").fail("expected an object");
        s.search = root["search"];
    }

    validate(s);
    return s;
}

inline DeviceSpec parse_device(const std::string& text, const std::string& origin = "") {
    json root;
    try {
        root = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ParseError(origin, std::string("malformed JSON: ") + e.what());
    }
    try {
        return parse_device_json(root);
    } catch (const ParseError& e) {
        if (origin.empty()) throw;
        throw ParseError(origin + ":" + e.path(), e.message());
    }
}

inline DeviceSpec load_device(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open device file '" + path + "'");
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_device(buf.str(), path);
}

inline json to_json(const DeviceSpec& s) {
    const bool two = s.is_2d();
    json j;
    j["schema_version"] = s.schema_version;
    j["name"] = s.name;
    j["dimension"] = to_string(s.dimension);
    j["extent_nm"] = two ? json{s.extent_nm[0], s.extent_nm[1]} : json{s.extent_nm[0]};
    j["grid"] = two ? json{s.grid[0], s.grid[1]} : json{s.grid[0]};
    j["temperature_K"] = s.temperature_K;
    j["statistics_floor_K"] = s.statistics_floor_K;
    j["regions"] = json::array();
    for (const auto& r : s.regions) {
        json m;
        m["name"] = r.name;
        m["box_nm"] = detail::box_to_json(r.box, s.dimension);
        m["epsilon_r"] = r.epsilon_r;
        m["band_offset_eV"] = r.band_offset_eV;
        m["mass"] = two ? json{r.mass[0], r.mass[1]} : json{r.mass[0]};
        m["doping_cm3"] = {{"donor", r.doping.donor_cm3}, {"acceptor", r.doping.acceptor_cm3}};
        m["fixed_charge_Ccm3"] = r.fixed_charge_Ccm3;
        m["charge_model"] = to_string(r.charge_model);
        m["band_gap_eV"] = r.band_gap_eV;
        m["nc_300K_cm3"] = r.nc_300K_cm3;
        m["nv_300K_cm3"] = r.nv_300K_cm3;
        j["regions"].push_back(m);
    }
    j["gates"] = json::array();
    for (const auto& g : s.gates) {
        json gj;
        gj["name"] = g.name;
        gj["footprint_nm"] = {g.footprint.lo, g.footprint.hi};
        gj["work_function_offset_V"] = g.work_function_offset_V;
        gj["role"] = to_string(g.role);
        gj["voltage_V"] = g.voltage_V;
        gj["width_y_nm"] = g.width_y_nm;
        j["gates"].push_back(gj);
    }
    j["contacts"] = json::array();
    for (const auto& c : s.contacts) {
        json cj;
        cj["name"] = c.name;
        cj["boundary"] = to_string(c.boundary);
        if (two) cj["range_nm"] = {c.range.lo, c.range.hi};
        cj["voltage_V"] = c.voltage_V;
        j["contacts"].push_back(cj);
    }
    j["quantum"] = {{"box_nm", detail::box_to_json(s.quantum.box, s.dimension)}, {"line_nm", s.quantum.line_nm}};
    j["search"] = s.search;
    return j;
}

/// 64-bit FNV-1a of the canonical serialization; identifies a device in
/// run manifests and stage records.
inline std::string device_hash(const DeviceSpec& s) {
    const std::string text = to_json(s).dump();
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

/// Shuttling gates (plunger / tunnel roles) sorted along the transport axis.
inline std::vector<std::size_t> shuttle_path(const DeviceSpec& s) {
    std::vector<std::size_t> path;
    for (std::size_t i = 0; i < s.gates.size(); ++i)
        if (is_shuttling(s.gates[i].role)) path.push_back(i);
    std::stable_sort(path.begin(), path.end(), [&](std::size_t a, std::size_t b) {
        return s.gates[a].footprint.center() < s.gates[b].footprint.center();
    });
    return path;
}

// --------------------------------------------------------------------------
// grid

/// Rectilinear node set with material attribution. Node (i, j) has index
/// j * nx + i; 1D grids have nz == 1. Cells are the rectangles between
/// neighbouring nodes and carry the material used by the Poisson stencil.
struct Grid {
    Dimension dimension = Dimension::one;
    int nx = 0;
    int nz = 1;
    double hx = 0.0;
    double hz = 0.0;

    std::vector<int> node_region;
    std::vector<int> cell_region;
    // -1: free node; [0, G): gate index; [G, G + C): contact G + c
    std::vector<int> dirichlet;

    bool is_2d() const { return dimension == Dimension::two; }
    std::size_t size() const { return static_cast<std::size_t>(nx) * static_cast<std::size_t>(nz); }
    std::size_t index(int i, int j) const { return static_cast<std::size_t>(j) * nx + i; }
    double x(int i) const { return i * hx; }
    double z(int j) const { return j * hz; }
    int cells_x() const { return nx - 1; }
    int cells_z() const { return is_2d() ? nz - 1 : 1; }
    int cell(int i, int j) const { return cell_region[static_cast<std::size_t>(j) * cells_x() + i]; }
};

namespace detail {

inline double snap(double v, double h) { return std::round(v / h) * h; }

inline int grid_lines_within(double lo, double hi, double h) {
    const double eps = 1e-9;
    const long first = static_cast<long>(std::ceil(lo / h - eps));
    const long last = static_cast<long>(std::floor(hi / h + eps));
    return static_cast<int>(std::max(0L, last - first + 1));
}

inline bool claims(const Interval& iv, double v, double h, double extent) {
    const double lo = snap(iv.lo, h), hi = snap(iv.hi, h);
    const double eps = 1e-9 * h;
    if (v < lo - eps) return false;
    if (v < hi - eps) return true;
    return std::abs(hi - extent) <= eps && v <= hi + eps;
}

}  // namespace detail

inline Grid build_grid(const DeviceSpec& s) {
    validate(s);
    Grid g;
    g.dimension = s.dimension;
    g.nx = s.grid[0];
    g.nz = s.is_2d() ? s.grid[1] : 1;
    g.hx = s.extent_nm[0] / (g.nx - 1);
    g.hz = s.is_2d() ? s.extent_nm[1] / (g.nz - 1) : 0.0;
    const bool two = s.is_2d();

    for (const auto& r : s.regions) {
        if (detail::grid_lines_within(r.box.x.lo, r.box.x.hi, g.hx) < 3)
            throw ResolutionError("grid too coarse to resolve region '" + r.name + "' along x");
        if (two && detail::grid_lines_within(r.box.z.lo, r.box.z.hi, g.hz) < 3)
            throw ResolutionError("grid too coarse to resolve region '" + r.name + "' along z");
    }

    const auto region_at = [&](double x, double z) {
        int found = -1;
        for (std::size_t k = 0; k < s.regions.size(); ++k) {
            const auto& b = s.regions[k].box;
            if (detail::claims(b.x, x, g.hx, s.extent_nm[0]) &&
                (!two || detail::claims(b.z, z, g.hz, s.extent_nm[1]))) {
                if (found >= 0)
                    throw ValidationError("grid node claimed by two regions",
                                          {s.regions[found].name, s.regions[k].name});
                found = static_cast<int>(k);
            }
        }
        if (found < 0) throw ValidationError("grid node claimed by no region");
        return found;
    };

    g.node_region.resize(g.size());
    for (int j = 0; j < g.nz; ++j)
        for (int i = 0; i < g.nx; ++i) g.node_region[g.index(i, j)] = region_at(g.x(i), two ? g.z(j) : 0.0);

    g.cell_region.resize(static_cast<std::size_t>(g.cells_x()) * g.cells_z());
    for (int j = 0; j < g.cells_z(); ++j)
        for (int i = 0; i < g.cells_x(); ++i)
            g.cell_region[static_cast<std::size_t>(j) * g.cells_x() + i] =
                region_at((i + 0.5) * g.hx, two ? (j + 0.5) * g.hz : 0.0);

    g.dirichlet.assign(g.size(), -1);
    const auto assign = [&](std::size_t node, int owner, const std::string& name) {
        if (g.dirichlet[node] >= 0 && g.dirichlet[node] != owner) {
            const int other = g.dirichlet[node];
            const std::string other_name = other < static_cast<int>(s.gates.size())
                                               ? s.gates[other].name
                                               : s.contacts[other - s.gates.size()].name;
            throw ValidationError("boundary node claimed by two terminals", {other_name, name});
        }
        g.dirichlet[node] = owner;
    };
    const double tol = 1e-9;
    const int top_row = g.nz - 1;
    for (std::size_t k = 0; k < s.gates.size(); ++k) {
        const auto& gate = s.gates[k];
        int claimed = 0;
        if (!two) {
            assign(g.index(g.nx - 1, 0), static_cast<int>(k), gate.name);
            continue;
        }
        for (int i = 0; i < g.nx; ++i) {
            const double x = g.x(i);
            if (x >= gate.footprint.lo - tol * g.hx && x <= gate.footprint.hi + tol * g.hx) {
                assign(g.index(i, top_row), static_cast<int>(k), gate.name);
                ++claimed;
            }
        }
        if (claimed == 0) throw ResolutionError("gate '" + gate.name + "' covers no grid node");
    }
    for (std::size_t c = 0; c < s.contacts.size(); ++c) {
        const auto& ct = s.contacts[c];
        const int owner = static_cast<int>(s.gates.size() + c);
        if (!two) {
            assign(ct.boundary == Boundary::bottom ? g.index(0, 0) : g.index(g.nx - 1, 0), owner, ct.name);
            continue;
        }
        int claimed = 0;
        const bool horizontal = ct.boundary == Boundary::bottom || ct.boundary == Boundary::top;
        const int n = horizontal ? g.nx : g.nz;
        const double h = horizontal ? g.hx : g.hz;
        for (int k = 0; k < n; ++k) {
            const double v = k * h;
            if (v < ct.range.lo - tol * h || v > ct.range.hi + tol * h) continue;
            std::size_t node = 0;
            switch (ct.boundary) {
                case Boundary::bottom: node = g.index(k, 0); break;
                case Boundary::top: node = g.index(k, top_row); break;
                case Boundary::left: node = g.index(0, k); break;
                case Boundary::right: node = g.index(g.nx - 1, k); break;
            }
            assign(node, owner, ct.name);
            ++claimed;
        }
        if (claimed == 0) throw ResolutionError("contact '" + ct.name + "' covers no grid node");
    }
    return g;
}

/// True when every gate footprint edge falls on a grid line.
inline bool gate_edges_aligned(const DeviceSpec& s, const Grid& g) {
    if (!s.is_2d()) return true;
    for (const auto& gate : s.gates)
        for (double e : {gate.footprint.lo, gate.footprint.hi})
            if (std::abs(e - detail::snap(e, g.hx)) > 1e-9 * g.hx) return false;
    return true;
}

}  // namespace shuttle

#endif
