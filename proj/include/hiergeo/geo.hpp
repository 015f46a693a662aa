#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "hiergeo/matrix.hpp"

namespace hiergeo {

enum class CoordSystem { planar, geographic };
enum class Split { train, test };

// (x, y) in meters for planar, (lat, lon) in degrees for geographic.
struct Coord {
    double a = 0.0;
    double b = 0.0;
};

struct BuildingRecord {
    std::int64_t building_id = 0;
    std::optional<std::string> name;
    Coord coord;
    Split split = Split::train;
};

struct CampusRegistry {
    CoordSystem system = CoordSystem::planar;
    std::vector<BuildingRecord> buildings;

    std::optional<std::size_t> find(std::int64_t building_id) const;
    const BuildingRecord& at(std::int64_t building_id) const;  // InputError if absent
    void validate() const;

    CampusRegistry subset(Split split) const;
};

// Distance thresholds in meters, strictly increasing, thresholds[0] >= 0.
// Levels run 0..levels() where level levels() is the pure-negative tier.
struct ScaleConfig {
    std::vector<double> thresholds{0.0, 200.0, 500.0};

    int levels() const { return static_cast<int>(thresholds.size()); }
    void validate() const;
};

// Anchor-specific level assignment over a whole registry.
struct ScalePartition {
    std::int64_t anchor_building_id = 0;
    std::unordered_map<std::int64_t, int> levels;

    int level_of(std::int64_t building_id) const;  // InputError if absent
};

double geodesic_distance(const Coord& a, const Coord& b, CoordSystem system);

// ConfigError when the two systems differ.
double geodesic_distance(const Coord& a, CoordSystem system_a, const Coord& b,
                         CoordSystem system_b);

// Square, symmetric, zero diagonal; entry (i, j) follows registry order.
Matrix pairwise_distances(const CampusRegistry& registry);

// Smallest l with d <= thresholds[l]; levels() if beyond the last threshold.
int relevance_level(double d, const ScaleConfig& config);

ScalePartition build_scale_partition(std::int64_t anchor,
                                     const CampusRegistry& registry,
                                     const ScaleConfig& config);

// Remaining buildings by ascending distance, ties by ascending building_id.
std::vector<std::int64_t> distance_ranking(std::int64_t anchor,
                                           const CampusRegistry& registry);

// JSON-lines registry file, one building per line.
CampusRegistry load_registry_jsonl(const std::string& path);
void save_registry_jsonl(const CampusRegistry& registry, const std::string& path);

}  // namespace hiergeo
