#include "lidarcount/projection.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>
#include <random>
#include <string>

namespace lidarcount {

std::int64_t next_perfect_square(std::int64_t n) {
    if (n < 1) throw PreconditionError("next_perfect_square: n must be >= 1");
    auto v = static_cast<std::int64_t>(std::ceil(std::sqrt(static_cast<double>(n))));
    // guard against sqrt rounding for large n
    while (v * v < n) ++v;
    while (v > 1 && (v - 1) * (v - 1) >= n) --v;
    return v * v;
}

PointMatrix enlarge(const PointMatrix& cluster, std::int64_t target, const GroundPool& pool, std::uint64_t seed) {
    if (target < 1 || next_perfect_square(target) != target)
        throw PreconditionError("enlarge: target " + std::to_string(target) + " is not a perfect square");
    const auto n = static_cast<std::int64_t>(cluster.rows());
    std::mt19937_64 rng(seed);

    if (n > target) {
        std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
        std::iota(idx.begin(), idx.end(), Eigen::Index{0});
        for (std::int64_t i = 0; i < target; ++i) {
            std::uniform_int_distribution<std::int64_t> pick(i, n - 1);
            std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(pick(rng))]);
        }
        idx.resize(static_cast<std::size_t>(target));
        std::sort(idx.begin(), idx.end());
        return cluster(idx, Eigen::all);
    }

    PointMatrix out(target, 3);
    out.topRows(n) = cluster;
    const std::int64_t diff = target - n;
    if (diff == 0) return out;
    if (pool.points.rows() == 0) throw PreconditionError("enlarge: ground pool is empty");
    std::uniform_int_distribution<Eigen::Index> pick(0, pool.points.rows() - 1);
    for (std::int64_t r = n; r < target; ++r) out.row(r) = pool.points.row(pick(rng));
    return out;
}

ProjectionImage project_views(const PointMatrix& points) {
    if (points.rows() != kTargetPoints)
        throw PreconditionError("project_views: expected " + std::to_string(kTargetPoints) + " rows, got " +
                                std::to_string(points.rows()));
    std::vector<Eigen::Index> order(kTargetPoints);
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
        if (points(a, 2) != points(b, 2)) return points(a, 2) < points(b, 2);
        if (points(a, 0) != points(b, 0)) return points(a, 0) < points(b, 0);
        return points(a, 1) < points(b, 1);
    });

    // (first, second) coordinate column for the top, front and side views
    constexpr int kViews[3][2] = {{0, 1}, {1, 2}, {0, 2}};
    ProjectionImage img;
    for (int i = 0; i < kTargetPoints; ++i) {
        const auto src = order[static_cast<std::size_t>(i)];
        const int row = i / kImageSide;
        const int col = i % kImageSide;
        for (int v = 0; v < 3; ++v) {
            img.at(row, col, 2 * v) = points(src, kViews[v][0]);
            img.at(row, col, 2 * v + 1) = points(src, kViews[v][1]);
        }
    }
    return img;
}

ProjectionImage cluster_to_image(const PointMatrix& cluster, const GroundPool& pool, std::uint64_t seed) {
    if (cluster.rows() == 0) throw PreconditionError("cluster_to_image: empty cluster");
    return project_views(enlarge(cluster, kTargetPoints, pool, seed));
}

void write_image_ndjson(std::ostream& out, const ImageDataset& data) {
    if (data.images.size() != data.labels.size()) throw PreconditionError("image dataset: label count mismatch");
    for (std::size_t i = 0; i < data.images.size(); ++i) {
        const auto& v = data.images[i].values;
        nlohmann::json j = {{"label", data.labels[i]},
                            {"image", std::vector<double>(v.data(), v.data() + v.size())}};
        out << j.dump() << '\n';
    }
}

ImageDataset read_image_ndjson(std::istream& in) {
    ImageDataset data;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        auto j = nlohmann::json::parse(line, nullptr, false);
        const auto where = "line " + std::to_string(line_no) + ": ";
        if (j.is_discarded() || !j.is_object()) throw DataError(where + "invalid JSON object");
        if (!j.contains("label") || !j.contains("image") || !j["image"].is_array())
            throw DataError(where + "expected 'label' and 'image'");
        const auto& arr = j["image"];
        if (arr.size() != static_cast<std::size_t>(kImageValues))
            throw DataError(where + "image must have " + std::to_string(kImageValues) + " values");
        ProjectionImage img;
        for (int i = 0; i < kImageValues; ++i) img.values(i) = arr[static_cast<std::size_t>(i)].get<double>();
        data.images.push_back(std::move(img));
        data.labels.push_back(j["label"].get<int>());
    }
    return data;
}

}  // namespace lidarcount
