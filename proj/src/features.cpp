#include "lidarcount/features.hpp"

#include "lidarcount/pointcloud.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>

namespace lidarcount {

namespace {

constexpr double kStdFloor = 1e-8;

// Row order (z, x, y) ascending, so every downstream sum runs in a fixed order.
PointMatrix canonical_order(const PointMatrix& pts) {
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(pts.rows()));
    std::iota(idx.begin(), idx.end(), Eigen::Index{0});
    std::stable_sort(idx.begin(), idx.end(), [&](Eigen::Index a, Eigen::Index b) {
        if (pts(a, 2) != pts(b, 2)) return pts(a, 2) < pts(b, 2);
        if (pts(a, 0) != pts(b, 0)) return pts(a, 0) < pts(b, 0);
        return pts(a, 1) < pts(b, 1);
    });
    return pts(idx, Eigen::all);
}

template <typename Derived>
double population_std(const Eigen::DenseBase<Derived>& v) {
    const double mean = v.mean();
    return std::sqrt((v.derived().array() - mean).square().mean());
}

struct Summary {
    double mean, std, min, max, median, p25, p75, iqr;
};

Summary summarize(std::vector<double> values) {
    std::sort(values.begin(), values.end());
    const Eigen::Map<const Eigen::VectorXd> v(values.data(), static_cast<Eigen::Index>(values.size()));
    Summary s{};
    s.mean = v.mean();
    s.std = population_std(v);
    s.min = values.front();
    s.max = values.back();
    s.median = percentile_sorted(values, 0.5);
    s.p25 = percentile_sorted(values, 0.25);
    s.p75 = percentile_sorted(values, 0.75);
    s.iqr = s.p75 - s.p25;
    return s;
}

}  // namespace

void SliceSpec::validate() const {
    if (!(dz > 0.0) || !std::isfinite(dz)) throw PreconditionError("slice spec: dz must be > 0");
}

double percentile_sorted(const std::vector<double>& sorted, double q) {
    if (sorted.empty()) throw PreconditionError("percentile of empty sample");
    const double pos = q * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, sorted.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return sorted[lo] + (sorted[hi] - sorted[lo]) * frac;
}

std::vector<PointMatrix> slice_cluster(const PointMatrix& cluster, const SliceSpec& spec) {
    spec.validate();
    if (cluster.rows() == 0) throw PreconditionError("slice_cluster: empty cluster");
    const double z_lo = cluster.col(2).minCoeff();
    const double z_hi = cluster.col(2).maxCoeff();
    const auto n_slices = static_cast<std::size_t>(std::floor((z_hi - z_lo) / spec.dz)) + 1;

    std::vector<std::vector<Eigen::Index>> members(n_slices);
    for (Eigen::Index i = 0; i < cluster.rows(); ++i) {
        auto s = static_cast<std::size_t>(std::floor((cluster(i, 2) - z_lo) / spec.dz));
        members[std::min(s, n_slices - 1)].push_back(i);
    }
    std::vector<PointMatrix> slices;
    slices.reserve(n_slices);
    for (const auto& m : members) slices.emplace_back(cluster(m, Eigen::all));
    return slices;
}

FeatureVector extract_features(const PointMatrix& raw, const SliceSpec& spec, const Point3& sensor_origin) {
    if (raw.rows() == 0) throw PreconditionError("extract_features: empty cluster");
    const PointMatrix pts = canonical_order(raw);
    const auto n = static_cast<double>(pts.rows());

    const Eigen::RowVector3d lo = pts.colwise().minCoeff();
    const Eigen::RowVector3d hi = pts.colwise().maxCoeff();
    const Eigen::RowVector3d extent = hi - lo;
    const Eigen::RowVector3d centroid = pts.colwise().mean();
    const auto planar_range = [&](double x, double y) { return std::hypot(x - sensor_origin.x(), y - sensor_origin.y()); };

    const auto slices = slice_cluster(pts, spec);
    std::size_t nonempty = 0;
    for (const auto& s : slices) nonempty += s.rows() > 0 ? 1 : 0;

    const double mid = 0.5 * (lo(2) + hi(2));
    const double upper = static_cast<double>((pts.col(2).array() > mid).count());

    FeatureVector f;
    f(0) = n;
    f(1) = extent(0);
    f(2) = extent(1);
    f(3) = extent(2);
    f(4) = population_std(pts.col(0));
    f(5) = population_std(pts.col(1));
    f(6) = population_std(pts.col(2));
    f(7) = planar_range(centroid(0), centroid(1));
    f(8) = centroid(2);
    f(9) = n / (extent(0) * extent(1) * extent(2) + 1e-6);
    f(10) = static_cast<double>(nonempty);
    f(11) = n / static_cast<double>(nonempty);
    f(12) = upper / n;
    f(13) = (n - upper) / n;

    std::array<std::vector<double>, kSliceFeatures> per_slice;
    for (auto& v : per_slice) v.reserve(nonempty);
    for (const auto& s : slices) {
        if (s.rows() == 0) continue;
        const Eigen::RowVector3d c = s.colwise().mean();
        const Eigen::ArrayXd planar =
            ((s.col(0).array() - c(0)).square() + (s.col(1).array() - c(1)).square()).sqrt();
        double range_sum = 0.0;
        for (Eigen::Index i = 0; i < s.rows(); ++i) range_sum += planar_range(s(i, 0), s(i, 1));

        per_slice[0].push_back(static_cast<double>(s.rows()));
        per_slice[1].push_back(s.col(0).maxCoeff() - s.col(0).minCoeff());
        per_slice[2].push_back(s.col(1).maxCoeff() - s.col(1).minCoeff());
        per_slice[3].push_back(population_std(s.col(0)));
        per_slice[4].push_back(population_std(s.col(1)));
        per_slice[5].push_back(c(0) - centroid(0));
        per_slice[6].push_back(c(1) - centroid(1));
        per_slice[7].push_back(planar.mean());
        per_slice[8].push_back(planar.maxCoeff());
        per_slice[9].push_back(range_sum / static_cast<double>(s.rows()));
    }

    for (int k = 0; k < kSliceFeatures; ++k) {
        const Summary s = summarize(std::move(per_slice[static_cast<std::size_t>(k)]));
        const int base = kGlobalFeatures + k * kSliceStatistics;
        f(base + 0) = s.mean;
        f(base + 1) = s.std;
        f(base + 2) = s.min;
        f(base + 3) = s.max;
        f(base + 4) = s.median;
        f(base + 5) = s.p25;
        f(base + 6) = s.p75;
        f(base + 7) = s.iqr;
    }
    return f;
}

const std::array<std::string, kFeatureDim>& feature_names() {
    static const std::array<std::string, kFeatureDim> names = [] {
        std::array<std::string, kFeatureDim> out;
        const char* global[kGlobalFeatures] = {"n_points",      "extent_x",        "extent_y",       "extent_z",
                                               "std_x",         "std_y",           "std_z",          "centroid_range",
                                               "centroid_z",    "density",         "nonempty_slices", "points_per_slice",
                                               "frac_upper",    "frac_lower"};
        const char* slice[kSliceFeatures] = {"count",    "extent_x", "extent_y", "std_x",    "std_y",
                                             "offset_x", "offset_y", "spread",   "spread_max", "range"};
        const char* stats[kSliceStatistics] = {"mean", "std", "min", "max", "median", "p25", "p75", "iqr"};
        for (int i = 0; i < kGlobalFeatures; ++i) out[static_cast<std::size_t>(i)] = global[i];
        for (int k = 0; k < kSliceFeatures; ++k)
            for (int s = 0; s < kSliceStatistics; ++s)
                out[static_cast<std::size_t>(kGlobalFeatures + k * kSliceStatistics + s)] =
                    std::string("slice_") + slice[k] + "_" + stats[s];
        return out;
    }();
    return names;
}

FeatureStats fit_normalizer(const std::vector<FeatureVector>& train) {
    if (train.size() < 2) throw PreconditionError("fit_normalizer: need at least 2 vectors");
    FeatureStats stats;
    stats.mean.setZero();
    for (const auto& v : train) stats.mean += v;
    stats.mean /= static_cast<double>(train.size());
    FeatureVector var = FeatureVector::Zero();
    for (const auto& v : train) var += (v - stats.mean).cwiseAbs2();
    stats.std = (var / static_cast<double>(train.size())).cwiseSqrt();
    return stats;
}

FeatureVector apply_normalizer(const FeatureVector& v, const FeatureStats& stats) {
    return (v - stats.mean).cwiseQuotient(stats.std.cwiseMax(kStdFloor));
}

void write_feature_csv(std::ostream& out, const FeatureDataset& data) {
    if (data.features.size() != data.labels.size()) throw PreconditionError("feature dataset: label count mismatch");
    for (int i = 0; i < kFeatureDim; ++i) out << 'f' << i << ',';
    out << "label\n";
    for (std::size_t r = 0; r < data.features.size(); ++r) {
        for (int i = 0; i < kFeatureDim; ++i) out << format_double(data.features[r](i)) << ',';
        out << data.labels[r] << '\n';
    }
}

FeatureDataset read_feature_csv(std::istream& in) {
    FeatureDataset data;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (line_no == 1 && line.rfind("f0,", 0) == 0) continue;
        FeatureVector v;
        std::size_t pos = 0;
        auto next_field = [&]() -> std::string_view {
            auto end = line.find(',', pos);
            std::string_view field(line.data() + pos, (end == std::string::npos ? line.size() : end) - pos);
            pos = end == std::string::npos ? line.size() + 1 : end + 1;
            return field;
        };
        auto bad = [&](const std::string& what) {
            return DataError("line " + std::to_string(line_no) + ": " + what);
        };
        for (int i = 0; i < kFeatureDim; ++i) {
            if (pos > line.size()) throw bad("expected 95 fields");
            auto field = next_field();
            auto [p, ec] = std::from_chars(field.data(), field.data() + field.size(), v(i));
            if (ec != std::errc() || p != field.data() + field.size()) throw bad("bad number in column f" + std::to_string(i));
        }
        if (pos > line.size()) throw bad("missing label");
        auto field = next_field();
        int label = -1;
        auto [p, ec] = std::from_chars(field.data(), field.data() + field.size(), label);
        if (ec != std::errc() || p != field.data() + field.size() || (label != 0 && label != 1))
            throw bad("label must be 0 or 1");
        if (pos <= line.size()) throw bad("too many fields");
        data.features.push_back(v);
        data.labels.push_back(label);
    }
    return data;
}

}  // namespace lidarcount
