#include "hiergeo/geo.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <unordered_set>

#include <json.hpp>

#include "hiergeo/errors.hpp"
#include "hiergeo/parallel.hpp"

namespace hiergeo {

namespace {

constexpr double kEarthRadiusMeters = 6'371'000.0;
constexpr double kDegToRad = 3.141592653589793238462643383279502884 / 180.0;

void check_coord(const Coord& c, CoordSystem system) {
    if (!std::isfinite(c.a) || !std::isfinite(c.b))
        throw InputError("non-finite coordinate");
    if (system == CoordSystem::geographic) {
        if (c.a < -90.0 || c.a > 90.0)
            throw InputError("latitude out of [-90, 90]");
        if (c.b < -180.0 || c.b > 180.0)
            throw InputError("longitude out of [-180, 180]");
    }
}

double haversine(const Coord& a, const Coord& b) {
    const double lat1 = a.a * kDegToRad;
    const double lat2 = b.a * kDegToRad;
    const double dlat = (b.a - a.a) * kDegToRad;
    const double dlon = (b.b - a.b) * kDegToRad;
    const double s1 = std::sin(dlat * 0.5);
    const double s2 = std::sin(dlon * 0.5);
    const double h = s1 * s1 + std::cos(lat1) * std::cos(lat2) * s2 * s2;
    return 2.0 * kEarthRadiusMeters * std::asin(std::min(1.0, std::sqrt(h)));
}

}  // namespace

double geodesic_distance(const Coord& a, const Coord& b, CoordSystem system) {
    check_coord(a, system);
    check_coord(b, system);
    if (a.a == b.a && a.b == b.b) return 0.0;
    if (system == CoordSystem::planar)
        return std::hypot(a.a - b.a, a.b - b.b);
    return haversine(a, b);
}

double geodesic_distance(const Coord& a, CoordSystem system_a, const Coord& b,
                         CoordSystem system_b) {
    if (system_a != system_b)
        throw ConfigError("mixed coordinate systems");
    return geodesic_distance(a, b, system_a);
}

std::optional<std::size_t> CampusRegistry::find(std::int64_t building_id) const {
    for (std::size_t i = 0; i < buildings.size(); ++i)
        if (buildings[i].building_id == building_id) return i;
    return std::nullopt;
}

const BuildingRecord& CampusRegistry::at(std::int64_t building_id) const {
    auto idx = find(building_id);
    if (!idx)
        throw InputError("unknown building_id " + std::to_string(building_id));
    return buildings[*idx];
}

void CampusRegistry::validate() const {
    std::unordered_set<std::int64_t> seen;
    for (const auto& b : buildings) {
        if (!seen.insert(b.building_id).second)
            throw InputError("duplicate building_id " +
                             std::to_string(b.building_id));
        check_coord(b.coord, system);
    }
}

CampusRegistry CampusRegistry::subset(Split split) const {
    CampusRegistry out;
    out.system = system;
    for (const auto& b : buildings)
        if (b.split == split) out.buildings.push_back(b);
    return out;
}

void ScaleConfig::validate() const {
    if (thresholds.empty()) throw ConfigError("thresholds must be non-empty");
    if (thresholds.front() < 0.0)
        throw ConfigError("thresholds[0] must be >= 0");
    for (std::size_t i = 1; i < thresholds.size(); ++i)
        if (!(thresholds[i] > thresholds[i - 1]))
            throw ConfigError("thresholds must be strictly increasing");
}

int ScalePartition::level_of(std::int64_t building_id) const {
    auto it = levels.find(building_id);
    if (it == levels.end())
        throw InputError("building_id " + std::to_string(building_id) +
                         " not in partition");
    return it->second;
}

Matrix pairwise_distances(const CampusRegistry& registry) {
    if (registry.buildings.empty())
        throw InputError("pairwise_distances: empty registry");
    registry.validate();
    const std::size_t n = registry.buildings.size();
    Matrix out(n, n);
    parallel_for(n, [&](std::size_t i) {
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            out.at(i, j) = geodesic_distance(registry.buildings[i].coord,
                                             registry.buildings[j].coord,
                                             registry.system);
        }
    });
    return out;
}

int relevance_level(double d, const ScaleConfig& config) {
    config.validate();
    if (!(d >= 0.0)) throw InputError("relevance_level: negative distance");
    for (std::size_t l = 0; l < config.thresholds.size(); ++l)
        if (d <= config.thresholds[l]) return static_cast<int>(l);
    return config.levels();
}

ScalePartition build_scale_partition(std::int64_t anchor,
                                     const CampusRegistry& registry,
                                     const ScaleConfig& config) {
    config.validate();
    const BuildingRecord& ref = registry.at(anchor);
    ScalePartition out;
    out.anchor_building_id = anchor;
    out.levels.reserve(registry.buildings.size());
    for (const auto& b : registry.buildings) {
        const double d =
            geodesic_distance(ref.coord, b.coord, registry.system);
        out.levels.emplace(b.building_id, relevance_level(d, config));
    }
    out.levels[anchor] = 0;
    return out;
}

std::vector<std::int64_t> distance_ranking(std::int64_t anchor,
                                           const CampusRegistry& registry) {
    const BuildingRecord& ref = registry.at(anchor);
    std::vector<std::pair<double, std::int64_t>> order;
    order.reserve(registry.buildings.size());
    for (const auto& b : registry.buildings) {
        if (b.building_id == anchor) continue;
        order.emplace_back(
            geodesic_distance(ref.coord, b.coord, registry.system),
            b.building_id);
    }
    std::sort(order.begin(), order.end());
    std::vector<std::int64_t> out;
    out.reserve(order.size());
    for (const auto& [d, id] : order) out.push_back(id);
    return out;
}

CampusRegistry load_registry_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open registry file: " + path);
    CampusRegistry reg;
    bool first = true;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw InputError(path + ":" + std::to_string(lineno) + ": " +
                             e.what());
        }
        BuildingRecord b;
        try {
            b.building_id = j.at("building_id").get<std::int64_t>();
            if (j.contains("name") && !j.at("name").is_null())
                b.name = j.at("name").get<std::string>();
            const auto& c = j.at("coord");
            b.coord = Coord{c.at(0).get<double>(), c.at(1).get<double>()};
            const std::string sys = j.at("system").get<std::string>();
            CoordSystem parsed;
            if (sys == "planar")
                parsed = CoordSystem::planar;
            else if (sys == "geo")
                parsed = CoordSystem::geographic;
            else
                throw InputError("unknown coordinate system: " + sys);
            if (first) {
                reg.system = parsed;
                first = false;
            } else if (parsed != reg.system) {
                throw InputError("mixed coordinate systems in registry");
            }
            const std::string split = j.at("split").get<std::string>();
            if (split == "train")
                b.split = Split::train;
            else if (split == "test")
                b.split = Split::test;
            else
                throw InputError("unknown split: " + split);
        } catch (const nlohmann::json::exception& e) {
            throw InputError(path + ":" + std::to_string(lineno) + ": " +
                             e.what());
        }
        reg.buildings.push_back(std::move(b));
    }
    reg.validate();
    return reg;
}

void save_registry_jsonl(const CampusRegistry& registry,
                         const std::string& path) {
    registry.validate();
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write registry file: " + path);
    for (const auto& b : registry.buildings) {
        nlohmann::json j;
        j["building_id"] = b.building_id;
        if (b.name)
            j["name"] = *b.name;
        else
            j["name"] = nullptr;
        j["coord"] = {b.coord.a, b.coord.b};
        j["system"] =
            registry.system == CoordSystem::planar ? "planar" : "geo";
        j["split"] = b.split == Split::train ? "train" : "test";
        out << j.dump() << '\n';
    }
    if (!out) throw IoError("write failed: " + path);
}

}  // namespace hiergeo
