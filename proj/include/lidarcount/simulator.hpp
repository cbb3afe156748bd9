#pragma once

#include "lidarcount/pointcloud.hpp"
#include "lidarcount/projection.hpp"

#include <cstdint>
#include <iosfwd>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace lidarcount::sim {

/// Pole-mounted spinning LiDAR restricted to a horizontal sector. The sensor
/// sits at the origin; the ground plane is z = ground_z.
struct SensorModel {
    int n_channels = 32;
    double elevation_min_deg = -45.0;
    double elevation_max_deg = 45.0;
    double azimuth_center_deg = 0.0;   // +x axis, along the walkway
    double azimuth_sector_deg = 90.0;
    int azimuth_steps = 128;           // 512 per revolution prorated to the sector
    double max_range = 35.0;
    double min_range = 0.3;
    double range_noise_sigma = 0.01;
    double range_resolution = 0.003;
    double ground_z = -3.0;

    void validate() const;
    Eigen::Vector3d ray_direction(int channel, int step) const;
};

enum class ObjectKind { Human, Box, Pole, Bush };

std::string to_string(ObjectKind kind);
ObjectKind object_kind_from_string(const std::string& name);

inline ObjectClass object_class(ObjectKind k) { return k == ObjectKind::Human ? ObjectClass::Human : ObjectClass::NonHuman; }

/// Ground-standing object. `size` meaning per kind:
///   human: (height, -, -); box: (length, width, height);
///   pole: (radius, -, height); bush: semi-axes (a, b, c).
struct ObjectSpec {
    ObjectKind kind = ObjectKind::Human;
    double x = 0.0;
    double y = 0.0;
    double heading = 0.0;  // radians about +z
    Eigen::Vector3d size = Eigen::Vector3d::Zero();
};

struct SceneTruth {
    std::vector<int> point_object;  // object index per point, -1 for ground
    std::vector<int> point_class;   // 1 human, 0 other, -1 ground
    std::vector<ObjectClass> object_class;
};

struct Scan {
    Frame frame;
    SceneTruth truth;
};

/// Nearest analytic hit along every (channel, step) ray, with seeded Gaussian
/// range noise applied along the ray and quantized to the range resolution.
Scan raycast(const SensorModel& sensor, const std::vector<ObjectSpec>& objects, std::uint64_t seed,
             std::int64_t frame_id = 0, double timestamp = 0.0);

/// Distance along a unit ray from the origin to the nearest surface of the
/// object, or +inf.
double intersect(const ObjectSpec& object, const Eigen::Vector3d& dir, double ground_z);

struct SimConfig {
    SensorModel sensor;
    RoiConfig roi;
    double place_x_min = 1.5;
    double place_x_max = 10.0;
    double place_y_abs = 2.0;
    int min_cluster_points = 5;   // placements yielding fewer returns are redrawn
    double min_separation = 2.0;  // meters between object centers in multi-object scenes
    double min_azimuth_gap_deg = 6.0;
};

ObjectSpec random_human(std::mt19937_64& rng, double x, double y);
ObjectSpec random_clutter(std::mt19937_64& rng, double x, double y);
ObjectSpec random_clutter(std::mt19937_64& rng, ObjectKind kind, double x, double y);
/// Low box (0.45-0.75 m) or low bush (0.25-0.4 m semi-height): ground-level structure.
ObjectSpec random_ground_clutter(std::mt19937_64& rng, double x, double y);

/// Ground removal followed by the region of interest, keeping truth aligned.
Scan preprocess(const Scan& scan, const RoiConfig& roi);

struct LabeledClusters {
    std::vector<PointMatrix> clusters;
    std::vector<int> labels;  // 1 human, 0 other
    std::vector<ObjectKind> kinds;

    std::size_t size() const { return clusters.size(); }
    Eigen::Index max_cluster_size() const;
};

/// n_human single-human scenes then n_clutter single-clutter scenes, each
/// reduced to the object's returns after preprocessing.
LabeledClusters gen_labeled_dataset(int n_human, int n_clutter, std::uint64_t seed, const SimConfig& cfg = {});

/// All preprocessed returns of human-free scenes holding 1-3 low clutter objects.
GroundPool gen_ground_pool(int n_scenes, std::uint64_t seed, const SimConfig& cfg = {});

/// Preprocessed returns of the given scenes pooled together.
GroundPool pool_from_scenes(const std::vector<std::vector<ObjectSpec>>& scenes, std::uint64_t seed,
                            const SimConfig& cfg = {});

struct CountScene {
    Scan scan;  // raw, not preprocessed
    std::vector<ObjectSpec> objects;
    int n_humans = 0;
};

/// Scene with `n_humans` humans and `n_clutter` clutter objects, pairwise
/// separated by min_separation meters and min_azimuth_gap_deg degrees.
CountScene gen_count_scene(int n_humans, int n_clutter, std::uint64_t seed, const SimConfig& cfg = {},
                           std::int64_t frame_id = 0);

// Labeled cluster NDJSON: {"label":L,"kind":"human","points":[[x,y,z],...]} per line.
void write_clusters_ndjson(std::ostream& out, const LabeledClusters& data);
LabeledClusters read_clusters_ndjson(std::istream& in);

/// Seeded shuffle of the sample indices split into (train, test) subsets;
/// the test part holds round(test_fraction * n) samples.
std::pair<LabeledClusters, LabeledClusters> split_dataset(const LabeledClusters& data, double test_fraction,
                                                          std::uint64_t seed);

/// Labels CSV rows: frame_id,object_id,class
void write_labels_csv(std::ostream& out, const std::vector<std::int64_t>& frame_ids,
                      const std::vector<std::vector<ObjectKind>>& objects);

}  // namespace lidarcount::sim
