#pragma once

#include "lidarcount/types.hpp"

#include <array>
#include <iosfwd>
#include <string>
#include <vector>

namespace lidarcount {

inline constexpr int kFeatureDim = 94;
inline constexpr int kGlobalFeatures = 14;
inline constexpr int kSliceFeatures = 10;
inline constexpr int kSliceStatistics = 8;

static_assert(kGlobalFeatures + kSliceFeatures * kSliceStatistics == kFeatureDim);

using FeatureVector = Eigen::Matrix<double, kFeatureDim, 1>;

struct SliceSpec {
    double dz = 0.02;  // slab thickness along z, meters

    void validate() const;
};

struct FeatureStats {
    FeatureVector mean = FeatureVector::Zero();
    FeatureVector std = FeatureVector::Ones();
};

/// Horizontal slabs of thickness dz starting at the lowest point. The top
/// point always falls in the last slab; empty slabs are kept.
std::vector<PointMatrix> slice_cluster(const PointMatrix& cluster, const SliceSpec& spec);

/// Fixed 94-value descriptor of one cluster.
///
/// Layout:
///  [0,14)  global: n_points, extent xyz, std xyz, centroid planar range to
///          the sensor, centroid z, density, non-empty slab count, mean
///          points per non-empty slab, fraction of points above and at/below
///          mid-height.
///  [14,94) ten per-slab features, each summarized over non-empty slabs by
///          mean, std, min, max, median, p25, p75, IQR (feature-major).
///
/// Per-slab features: count, x/y extent, x/y std, slab-centroid x/y offset
/// from the cluster centroid, mean and max planar distance to the slab
/// centroid, mean planar range to the sensor.
FeatureVector extract_features(const PointMatrix& cluster, const SliceSpec& spec,
                               const Point3& sensor_origin = Point3::Zero());

const std::array<std::string, kFeatureDim>& feature_names();

FeatureStats fit_normalizer(const std::vector<FeatureVector>& train);
FeatureVector apply_normalizer(const FeatureVector& v, const FeatureStats& stats);

/// Linear interpolation between order statistics of a sorted sample (q in [0,1]).
double percentile_sorted(const std::vector<double>& sorted, double q);

// Feature dataset CSV: 94 columns f0..f93 then `label` (1 human, 0 other).
struct FeatureDataset {
    std::vector<FeatureVector> features;
    std::vector<int> labels;
};

void write_feature_csv(std::ostream& out, const FeatureDataset& data);
FeatureDataset read_feature_csv(std::istream& in);

}  // namespace lidarcount
