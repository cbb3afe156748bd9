#pragma once

#include "lidarcount/types.hpp"

#include <unordered_map>
#include <vector>

namespace lidarcount {

inline constexpr int kNoise = -1;

struct DbscanParams {
    double epsilon = 0.1;  // neighborhood radius, meters
    int min_pts = 5;       // neighbors (self included) needed for a core point

    void validate() const;
};

struct ClusterAssignment {
    std::vector<int> labels;  // cluster id >= 0, or kNoise
    int n_clusters = 0;

    std::size_t noise_count() const;
};

/// k-th nearest neighbor distance of every point, sorted non-increasing.
struct KDistanceCurve {
    int k = 0;
    Eigen::VectorXd distances;
};

struct Elbow {
    double epsilon = 0.0;
    Eigen::Index index = 0;
    bool degenerate = false;  // constant curve, no knee
};

/// Uniform voxel grid for fixed-radius neighbor queries. Results are the
/// same as an exhaustive scan, returned in ascending index order.
class RadiusIndex {
public:
    RadiusIndex(const PointMatrix& points, double radius);

    std::vector<Eigen::Index> neighbors(Eigen::Index i) const;

private:
    struct Cell {
        std::int64_t x, y, z;
        bool operator==(const Cell&) const = default;
    };
    struct CellHash {
        std::size_t operator()(const Cell& c) const noexcept;
    };

    Cell cell_of(Eigen::Index i) const;

    const PointMatrix& points_;
    double radius_;
    double radius_sq_;
    std::vector<Cell> cells_;
    std::unordered_map<Cell, std::vector<Eigen::Index>, CellHash> grid_;
};

KDistanceCurve knn_distance_curve(const PointMatrix& points, int k);

/// Knee of a non-increasing curve: the point farthest from the chord joining
/// its endpoints after both axes are scaled to [0, 1]. Ties go to the larger index.
Elbow find_elbow(const KDistanceCurve& curve);

ClusterAssignment dbscan(const PointMatrix& points, const DbscanParams& params);

std::vector<PointMatrix> extract_clusters(const PointMatrix& points, const ClusterAssignment& assignment);

/// Mean silhouette over non-noise points. Throws PreconditionError when fewer
/// than two clusters exist.
double silhouette(const PointMatrix& points, const ClusterAssignment& assignment);

/// Per-capture clustering: epsilon from the k-distance elbow with k = min_pts - 1.
struct AdaptiveClustering {
    Elbow elbow;
    DbscanParams params;
    ClusterAssignment assignment;
};

struct AdaptiveDbscanConfig {
    int min_pts = 5;
    double epsilon_min = 0.02;  // floor applied to the elbow value
    double epsilon_max = 1.0;   // cap applied to the elbow value
};

AdaptiveClustering cluster_adaptive(const PointMatrix& points, const AdaptiveDbscanConfig& cfg);

}  // namespace lidarcount
