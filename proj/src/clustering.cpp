#include "lidarcount/clustering.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <string>

namespace lidarcount {

namespace {
constexpr int kUnvisited = -2;
}

void DbscanParams::validate() const {
    if (!(epsilon > 0.0) || !std::isfinite(epsilon)) throw PreconditionError("dbscan: epsilon must be > 0");
    if (min_pts < 1) throw PreconditionError("dbscan: min_pts must be >= 1");
}

std::size_t ClusterAssignment::noise_count() const {
    return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), kNoise));
}

std::size_t RadiusIndex::CellHash::operator()(const Cell& c) const noexcept {
    auto h = static_cast<std::uint64_t>(c.x) * 73856093ULL;
    h ^= static_cast<std::uint64_t>(c.y) * 19349663ULL;
    h ^= static_cast<std::uint64_t>(c.z) * 83492791ULL;
    return static_cast<std::size_t>(h);
}

RadiusIndex::RadiusIndex(const PointMatrix& points, double radius)
    : points_(points), radius_(radius), radius_sq_(radius * radius) {
    cells_.reserve(static_cast<std::size_t>(points.rows()));
    for (Eigen::Index i = 0; i < points.rows(); ++i) {
        cells_.push_back(cell_of(i));
        grid_[cells_.back()].push_back(i);
    }
}

RadiusIndex::Cell RadiusIndex::cell_of(Eigen::Index i) const {
    return Cell{static_cast<std::int64_t>(std::floor(points_(i, 0) / radius_)),
                static_cast<std::int64_t>(std::floor(points_(i, 1) / radius_)),
                static_cast<std::int64_t>(std::floor(points_(i, 2) / radius_))};
}

std::vector<Eigen::Index> RadiusIndex::neighbors(Eigen::Index i) const {
    std::vector<Eigen::Index> out;
    const Cell c = cells_[static_cast<std::size_t>(i)];
    const auto p = points_.row(i);
    for (std::int64_t dx = -1; dx <= 1; ++dx)
        for (std::int64_t dy = -1; dy <= 1; ++dy)
            for (std::int64_t dz = -1; dz <= 1; ++dz) {
                auto it = grid_.find(Cell{c.x + dx, c.y + dy, c.z + dz});
                if (it == grid_.end()) continue;
                for (auto j : it->second)
                    if ((points_.row(j) - p).squaredNorm() <= radius_sq_) out.push_back(j);
            }
    std::sort(out.begin(), out.end());
    return out;
}

KDistanceCurve knn_distance_curve(const PointMatrix& points, int k) {
    const Eigen::Index n = points.rows();
    if (k < 1) throw PreconditionError("knn_distance_curve: k must be >= 1");
    if (k >= n)
        throw PreconditionError("knn_distance_curve: need more than k=" + std::to_string(k) + " points, got " +
                                std::to_string(n));
    KDistanceCurve curve{k, Eigen::VectorXd(n)};
    std::vector<double> d(static_cast<std::size_t>(n - 1));
    for (Eigen::Index i = 0; i < n; ++i) {
        std::size_t m = 0;
        for (Eigen::Index j = 0; j < n; ++j)
            if (j != i) d[m++] = (points.row(j) - points.row(i)).squaredNorm();
        std::nth_element(d.begin(), d.begin() + (k - 1), d.end());
        curve.distances(i) = std::sqrt(d[static_cast<std::size_t>(k - 1)]);
    }
    std::sort(curve.distances.begin(), curve.distances.end(), std::greater<>());
    return curve;
}

Elbow find_elbow(const KDistanceCurve& curve) {
    const auto& y = curve.distances;
    const Eigen::Index n = y.size();
    if (n < 3) throw PreconditionError("find_elbow: curve needs at least 3 points");
    const double first = y(0);
    const double last = y(n - 1);
    const double span = first - last;
    if (!(span > 0.0)) return Elbow{first, 0, true};

    // With x = i/(n-1) and y' = (y - last)/span the chord is x + y' = 1; the
    // perpendicular distance is proportional to |1 - x - y'|.
    Eigen::Index best = 0;
    double best_dist = -1.0;
    const double denom = static_cast<double>(n - 1);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double xn = static_cast<double>(i) / denom;
        const double yn = (y(i) - last) / span;
        const double dist = std::abs(1.0 - xn - yn);
        if (dist >= best_dist) {
            best_dist = dist;
            best = i;
        }
    }
    return Elbow{y(best), best, false};
}

ClusterAssignment dbscan(const PointMatrix& points, const DbscanParams& params) {
    params.validate();
    const Eigen::Index n = points.rows();
    ClusterAssignment out;
    out.labels.assign(static_cast<std::size_t>(n), kUnvisited);
    if (n == 0) return out;

    RadiusIndex index(points, params.epsilon);
    const auto min_pts = static_cast<std::size_t>(params.min_pts);
    auto& labels = out.labels;

    for (Eigen::Index i = 0; i < n; ++i) {
        if (labels[static_cast<std::size_t>(i)] != kUnvisited) continue;
        auto seeds = index.neighbors(i);
        if (seeds.size() < min_pts) {
            labels[static_cast<std::size_t>(i)] = kNoise;
            continue;
        }
        const int cluster = out.n_clusters++;
        labels[static_cast<std::size_t>(i)] = cluster;
        std::deque<Eigen::Index> queue(seeds.begin(), seeds.end());
        while (!queue.empty()) {
            const auto j = static_cast<std::size_t>(queue.front());
            queue.pop_front();
            if (labels[j] == kNoise) {
                // previously judged non-core: border point
                labels[j] = cluster;
                continue;
            }
            if (labels[j] != kUnvisited) continue;
            labels[j] = cluster;
            auto nj = index.neighbors(static_cast<Eigen::Index>(j));
            if (nj.size() >= min_pts) queue.insert(queue.end(), nj.begin(), nj.end());
        }
    }
    return out;
}

std::vector<PointMatrix> extract_clusters(const PointMatrix& points, const ClusterAssignment& assignment) {
    if (static_cast<std::size_t>(points.rows()) != assignment.labels.size())
        throw PreconditionError("extract_clusters: " + std::to_string(assignment.labels.size()) + " labels for " +
                                std::to_string(points.rows()) + " points");
    std::vector<std::vector<Eigen::Index>> members(static_cast<std::size_t>(assignment.n_clusters));
    for (std::size_t i = 0; i < assignment.labels.size(); ++i) {
        const int l = assignment.labels[i];
        if (l == kNoise) continue;
        if (l < 0 || l >= assignment.n_clusters) throw PreconditionError("extract_clusters: label out of range");
        members[static_cast<std::size_t>(l)].push_back(static_cast<Eigen::Index>(i));
    }
    std::vector<PointMatrix> out;
    out.reserve(members.size());
    for (const auto& idx : members) {
        if (idx.empty()) continue;
        out.emplace_back(points(idx, Eigen::all));
    }
    return out;
}

double silhouette(const PointMatrix& points, const ClusterAssignment& assignment) {
    if (static_cast<std::size_t>(points.rows()) != assignment.labels.size())
        throw PreconditionError("silhouette: label count does not match point count");
    if (assignment.n_clusters < 2)
        throw PreconditionError("silhouette: undefined for fewer than two clusters");

    const auto k = static_cast<std::size_t>(assignment.n_clusters);
    std::vector<Eigen::Index> idx;
    std::vector<std::size_t> sizes(k, 0);
    for (std::size_t i = 0; i < assignment.labels.size(); ++i) {
        const int l = assignment.labels[i];
        if (l == kNoise) continue;
        idx.push_back(static_cast<Eigen::Index>(i));
        ++sizes[static_cast<std::size_t>(l)];
    }
    if (idx.empty()) throw PreconditionError("silhouette: no clustered points");

    double total = 0.0;
    std::vector<double> sums(k);
    for (auto i : idx) {
        const auto ci = static_cast<std::size_t>(assignment.labels[static_cast<std::size_t>(i)]);
        if (sizes[ci] == 1) continue;  // S(i) = 0 for singletons
        std::fill(sums.begin(), sums.end(), 0.0);
        for (auto j : idx) {
            if (j == i) continue;
            sums[static_cast<std::size_t>(assignment.labels[static_cast<std::size_t>(j)])] +=
                (points.row(i) - points.row(j)).norm();
        }
        const double a = sums[ci] / static_cast<double>(sizes[ci] - 1);
        double b = std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < k; ++c)
            if (c != ci && sizes[c] > 0) b = std::min(b, sums[c] / static_cast<double>(sizes[c]));
        const double m = std::max(a, b);
        total += m > 0.0 ? (b - a) / m : 0.0;
    }
    return total / static_cast<double>(idx.size());
}

AdaptiveClustering cluster_adaptive(const PointMatrix& points, const AdaptiveDbscanConfig& cfg) {
    AdaptiveClustering out;
    out.params.min_pts = cfg.min_pts;
    const int k = std::max(cfg.min_pts - 1, 1);
    if (points.rows() >= std::max<Eigen::Index>(k + 1, 3)) {
        out.elbow = find_elbow(knn_distance_curve(points, k));
        out.params.epsilon = std::clamp(out.elbow.epsilon, cfg.epsilon_min, cfg.epsilon_max);
    } else {
        out.elbow.degenerate = true;
        out.params.epsilon = cfg.epsilon_max;
    }
    out.assignment = dbscan(points, out.params);
    return out;
}

}  // namespace lidarcount
