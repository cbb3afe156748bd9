#pragma once

#include "lidarcount/types.hpp"

#include <cstdint>
#include <iosfwd>
#include <vector>

namespace lidarcount {

inline constexpr int kImageSide = 18;
inline constexpr int kImageChannels = 6;
inline constexpr int kTargetPoints = kImageSide * kImageSide;                 // 324
inline constexpr int kImageValues = kTargetPoints * kImageChannels;           // 1944

/// 18x18x6 stack of the top (x,y), front (y,z) and side (x,z) views, stored
/// row-major as (row, col, channel).
struct ProjectionImage {
    Eigen::VectorXd values = Eigen::VectorXd::Zero(kImageValues);

    double& at(int row, int col, int channel) { return values((row * kImageSide + col) * kImageChannels + channel); }
    double at(int row, int col, int channel) const {
        return values((row * kImageSide + col) * kImageChannels + channel);
    }
    bool operator==(const ProjectionImage& o) const { return values == o.values; }
};

/// Human-free environment returns used to pad clusters to a fixed size.
struct GroundPool {
    PointMatrix points = PointMatrix(0, 3);
};

/// Smallest perfect square >= n.
std::int64_t next_perfect_square(std::int64_t n);

/// Pads `cluster` to `target` rows with rows drawn uniformly (with
/// replacement) from the pool, keeping the cluster as a prefix. Larger
/// clusters are subsampled without replacement, order kept.
PointMatrix enlarge(const PointMatrix& cluster, std::int64_t target, const GroundPool& pool, std::uint64_t seed);

/// Sorts the 324 rows by (z, x, y) and reshapes each coordinate pair into two
/// 18x18 channels: channels 0-1 top view, 2-3 front view, 4-5 side view.
ProjectionImage project_views(const PointMatrix& points);

ProjectionImage cluster_to_image(const PointMatrix& cluster, const GroundPool& pool, std::uint64_t seed);

// Image dataset NDJSON: {"label":L,"image":[1944 values]} per line.
struct ImageDataset {
    std::vector<ProjectionImage> images;
    std::vector<int> labels;
};

void write_image_ndjson(std::ostream& out, const ImageDataset& data);
ImageDataset read_image_ndjson(std::istream& in);

}  // namespace lidarcount
