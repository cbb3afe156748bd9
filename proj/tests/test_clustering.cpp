#include "lidarcount/clustering.hpp"

#include "oracles.hpp"

#include <doctest.h>

#include <array>
#include <random>
#include <set>

using namespace lidarcount;

namespace {

PointMatrix random_points(std::mt19937_64& rng, int n, double span) {
    std::uniform_real_distribution<double> u(0.0, span);
    PointMatrix p(n, 3);
    for (Eigen::Index k = 0; k < p.size(); ++k) p.data()[k] = u(rng);
    return p;
}

PointMatrix blob(std::mt19937_64& rng, int n, const Point3& c, double sigma) {
    std::normal_distribution<double> g(0.0, sigma);
    PointMatrix p(n, 3);
    for (int i = 0; i < n; ++i) p.row(i) = (c + Point3(g(rng), g(rng), g(rng))).transpose();
    return p;
}

KDistanceCurve curve_of(std::vector<double> v) {
    KDistanceCurve c;
    c.k = 1;
    c.distances = Eigen::Map<Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
    return c;
}

}  // namespace

TEST_CASE("knn curve of collinear points") {
    const PointMatrix p = stack_points({{0, 0, 0}, {1, 0, 0}, {2, 0, 0}});
    const auto c = knn_distance_curve(p, 1);
    CHECK(c.distances.size() == 3);
    CHECK(c.distances.isApproxToConstant(1.0));
    CHECK_THROWS_AS(knn_distance_curve(p, 3), PreconditionError);
}

TEST_CASE("knn curve matches brute force") {
    std::mt19937_64 rng(3);
    const auto p = random_points(rng, 50, 2.0);
    const auto c = knn_distance_curve(p, 4);
    const auto ref = oracle::knn_curve(p, 4);
    REQUIRE(c.distances.size() == 50);
    for (int i = 0; i < 50; ++i) CHECK(c.distances(i) == doctest::Approx(ref[i]).epsilon(1e-12));
}

TEST_CASE("elbow of a constructed knee") {
    std::vector<double> v;
    for (int i = 0; i < 10; ++i) v.push_back(10.0 - i);
    for (int i = 10; i < 100; ++i) v.push_back(1.0);
    const auto e = find_elbow(curve_of(v));
    CHECK_FALSE(e.degenerate);
    CHECK(std::abs(e.index - 9) <= 2);
    CHECK(e.epsilon == doctest::Approx(1.0).epsilon(0.5));
    const auto scaled = find_elbow(curve_of([&] {
        auto w = v;
        for (auto& x : w) x *= 3.5;
        return w;
    }()));
    CHECK(scaled.epsilon == doctest::Approx(3.5 * e.epsilon));
}

TEST_CASE("elbow of a constant curve is degenerate") {
    const auto e = find_elbow(curve_of(std::vector<double>(20, 0.5)));
    CHECK(e.degenerate);
    CHECK(e.epsilon == 0.5);
    CHECK_THROWS_AS(find_elbow(curve_of({1.0, 0.5})), PreconditionError);
}

TEST_CASE("dbscan separates two far blobs") {
    std::mt19937_64 rng(5);
    PointMatrix p(40, 3);
    p << blob(rng, 20, Point3(0, 0, 0), 0.05), blob(rng, 20, Point3(10, 0, 0), 0.05);
    const auto a = dbscan(p, {0.5, 4});
    CHECK(a.n_clusters == 2);
    CHECK(a.noise_count() == 0);
    CHECK(oracle::check_dbscan(p, 0.5, 4, a.labels, a.n_clusters).empty());
    CHECK(a.labels[0] == 0);
    CHECK(a.labels[20] == 1);
}

TEST_CASE("dbscan trivial cases") {
    const PointMatrix iso = stack_points({{0, 0, 0}, {5, 0, 0}, {10, 0, 0}});
    const auto a = dbscan(iso, {0.5, 4});
    CHECK(a.n_clusters == 0);
    CHECK(a.noise_count() == 3);

    const PointMatrix tight = stack_points({{0, 0, 0}, {0.1, 0, 0}, {0, 0.1, 0}, {0, 0, 0.1}, {0.05, 0.05, 0}});
    CHECK(dbscan(tight, {0.5, 5}).n_clusters == 1);

    CHECK(dbscan(PointMatrix(0, 3), {0.5, 4}).n_clusters == 0);
    CHECK_THROWS_AS(dbscan(tight, {0.0, 4}), PreconditionError);
    CHECK_THROWS_AS(dbscan(tight, {0.5, 0}), PreconditionError);
}

TEST_CASE("dbscan closed ball boundary") {
    const PointMatrix p = stack_points({{0, 0, 0}, {0.5, 0, 0}});
    CHECK(dbscan(p, {0.5, 2}).n_clusters == 1);
    CHECK(dbscan(p, {0.4999, 2}).n_clusters == 0);
}

TEST_CASE("dbscan matches brute-force reference on random instances") {
    std::mt19937_64 rng(11);
    for (int t = 0; t < 30; ++t) {
        const auto p = random_points(rng, 20 + t * 5, 3.0);
        const double eps = 0.2 + 0.02 * t;
        const auto a = dbscan(p, {eps, 3 + t % 4});
        CHECK(oracle::check_dbscan(p, eps, 3 + t % 4, a.labels, a.n_clusters).empty());
    }
}

TEST_CASE("radius index agrees with exhaustive scan") {
    std::mt19937_64 rng(13);
    const auto p = random_points(rng, 150, 2.0);
    const RadiusIndex idx(p, 0.3);
    for (Eigen::Index i = 0; i < p.rows(); ++i) {
        std::vector<Eigen::Index> ref;
        for (Eigen::Index j = 0; j < p.rows(); ++j)
            if ((p.row(i) - p.row(j)).squaredNorm() <= 0.09) ref.push_back(j);
        CHECK(idx.neighbors(i) == ref);
    }
}

TEST_CASE("extract clusters") {
    const PointMatrix p = stack_points({{0, 0, 0}, {1, 0, 0}, {2, 0, 0}, {3, 0, 0}});
    ClusterAssignment a{{0, 0, -1, 1}, 2};
    const auto cs = extract_clusters(p, a);
    REQUIRE(cs.size() == 2);
    CHECK(cs[0].rows() == 2);
    CHECK(cs[1].rows() == 1);
    CHECK(cs[1](0, 0) == 3.0);
    CHECK(extract_clusters(p, {{-1, -1, -1, -1}, 0}).empty());
    CHECK_THROWS_AS(extract_clusters(p, {{0, 0}, 1}), PreconditionError);
}

TEST_CASE("extract clusters partitions random labelings") {
    std::mt19937_64 rng(17);
    const auto p = random_points(rng, 60, 1.0);
    std::uniform_int_distribution<int> lab(-1, 4);
    ClusterAssignment a;
    a.n_clusters = 5;
    for (int i = 0; i < 60; ++i) a.labels.push_back(lab(rng));
    std::multiset<std::array<double, 3>> in, out;
    for (int i = 0; i < 60; ++i) {
        in.insert({p(i, 0), p(i, 1), p(i, 2)});
        if (a.labels[i] < 0) out.insert({p(i, 0), p(i, 1), p(i, 2)});
    }
    for (const auto& c : extract_clusters(p, a))
        for (Eigen::Index i = 0; i < c.rows(); ++i) out.insert({c(i, 0), c(i, 1), c(i, 2)});
    CHECK(in == out);
}

TEST_CASE("silhouette") {
    const PointMatrix p = stack_points({{0, 0, 0}, {0, 0, 1}, {10, 0, 0}, {10, 0, 1}});
    const ClusterAssignment a{{0, 0, 1, 1}, 2};
    const double s = silhouette(p, a);
    CHECK(s == doctest::Approx(oracle::silhouette_direct(p, a.labels)).epsilon(1e-12));
    const double b = (10.0 + std::sqrt(101.0)) / 2.0;
    CHECK(s == doctest::Approx((b - 1.0) / b).epsilon(1e-12));
    CHECK(s > 0.9);
    CHECK_THROWS_AS(silhouette(p, {{0, 0, 0, 0}, 1}), PreconditionError);
}

TEST_CASE("silhouette ignores noise and scores singletons 0") {
    const PointMatrix p = stack_points({{0, 0, 0}, {0, 0, 1}, {10, 0, 0}, {50, 0, 0}});
    const ClusterAssignment a{{0, 0, 1, -1}, 2};
    CHECK(silhouette(p, a) == doctest::Approx(oracle::silhouette_direct(p, a.labels)).epsilon(1e-12));
}

TEST_CASE("adaptive clustering clamps epsilon") {
    std::mt19937_64 rng(19);
    PointMatrix p(60, 3);
    p << blob(rng, 30, Point3(3, 0, -1), 0.1), blob(rng, 30, Point3(6, 1, -1), 0.1);
    const auto r = cluster_adaptive(p, {5, 0.02, 1.0});
    CHECK(r.params.epsilon >= 0.02);
    CHECK(r.params.epsilon <= 1.0);
    CHECK(r.assignment.n_clusters == 2);
    const auto floored = cluster_adaptive(p, {5, 1.5, 1.5});
    CHECK(floored.params.epsilon == 1.5);
}
