#include "lidarcount/simulator.hpp"

#include <doctest.h>

#include <random>
#include <sstream>

using namespace lidarcount;
using namespace lidarcount::sim;

namespace {

ObjectSpec human_at(double x, double y) {
    ObjectSpec h;
    h.kind = ObjectKind::Human;
    h.x = x;
    h.y = y;
    h.size = {1.75, 0, 0};
    return h;
}

}  // namespace

TEST_CASE("empty scene returns only ground") {
    const SensorModel sensor;
    const auto scan = raycast(sensor, {}, 1);
    REQUIRE(scan.frame.size() > 0);
    CHECK((scan.frame.points.col(2).array() + 3.0).abs().maxCoeff() < 0.1);
    for (int c : scan.truth.point_class) CHECK(c == -1);
}

TEST_CASE("returns lie on ray directions") {
    const SensorModel sensor;
    const auto scan = raycast(sensor, {human_at(4, 0)}, 2);
    for (Eigen::Index i = 0; i < scan.frame.points.rows(); ++i) {
        const Eigen::Vector3d p = scan.frame.points.row(i).transpose();
        double best = 1.0;
        for (int ch = 0; ch < sensor.n_channels; ++ch)
            for (int st = 0; st < sensor.azimuth_steps; ++st)
                best = std::min(best, (p.normalized() - sensor.ray_direction(ch, st)).norm());
        CHECK(best < 1e-9);
    }
}

TEST_CASE("nearer humans give more returns") {
    const SensorModel sensor;
    const auto count = [&](double x) {
        const auto s = raycast(sensor, {human_at(x, 0)}, 3);
        return std::count(s.truth.point_class.begin(), s.truth.point_class.end(), 1);
    };
    CHECK(count(4) > count(11));
}

TEST_CASE("sphere range along a ray") {
    SensorModel sensor;
    const int ch = sensor.n_channels / 2;
    const int st = sensor.azimuth_steps / 2;
    const Eigen::Vector3d dir = sensor.ray_direction(ch, st);
    const double d = 6.0;
    const double r = 0.4;
    const Eigen::Vector3d c = d * dir;
    ObjectSpec ball;
    ball.kind = ObjectKind::Bush;
    ball.x = c.x();
    ball.y = c.y();
    ball.size = {r, r, r};
    sensor.ground_z = c.z() - 0.9 * r;
    CHECK(intersect(ball, dir, sensor.ground_z) == doctest::Approx(d - r).epsilon(1e-9));
    const auto scan = raycast(sensor, {ball}, 4);
    bool found = false;
    for (Eigen::Index i = 0; i < scan.frame.points.rows(); ++i) {
        const Eigen::Vector3d p = scan.frame.points.row(i).transpose();
        if ((p.normalized() - dir).norm() < 1e-9) {
            found = true;
            CHECK(std::abs(p.norm() - (d - r)) <= 3 * sensor.range_noise_sigma + sensor.range_resolution);
        }
    }
    CHECK(found);
}

TEST_CASE("humans up to 8 m stay clusterable") {
    SimConfig cfg;
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> ux(1.5, 8.0), uy(-1.0, 1.0);
    int ok = 0;
    for (int i = 0; i < 100; ++i) {
        const auto h = random_human(rng, ux(rng), uy(rng));
        const auto s = preprocess(raycast(cfg.sensor, {h}, 100 + i), cfg.roi);
        ok += std::count(s.truth.point_class.begin(), s.truth.point_class.end(), 1) >= cfg.min_cluster_points;
    }
    CHECK(ok == 100);
}

TEST_CASE("labeled datasets") {
    CHECK(gen_labeled_dataset(0, 0, 1).size() == 0);
    const auto a = gen_labeled_dataset(6, 4, 9);
    const auto b = gen_labeled_dataset(6, 4, 9);
    REQUIRE(a.size() == 10);
    CHECK(std::count(a.labels.begin(), a.labels.end(), 1) == 6);
    CHECK(a.labels == b.labels);
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a.clusters[i] == b.clusters[i]);
        CHECK(a.clusters[i].rows() >= 5);
    }
    std::stringstream ss;
    write_clusters_ndjson(ss, a);
    const auto r = read_clusters_ndjson(ss);
    CHECK(r.labels == a.labels);
    CHECK(r.kinds == a.kinds);
    CHECK(r.clusters[3] == a.clusters[3]);
}

TEST_CASE("split is seeded and sized") {
    const auto d = gen_labeled_dataset(5, 5, 2);
    const auto [train, test] = split_dataset(d, 0.2, 4);
    CHECK(test.size() == 2);
    CHECK(train.size() == 8);
    const auto [train2, test2] = split_dataset(d, 0.2, 4);
    CHECK(test2.labels == test.labels);
    CHECK(test2.clusters[0] == test.clusters[0]);
}

TEST_CASE("ground pool") {
    SimConfig cfg;
    const auto empty = pool_from_scenes({{}}, 1, cfg);
    for (Eigen::Index i = 0; i < empty.points.rows(); ++i) CHECK(empty.points(i, 2) >= cfg.roi.z_min);
    const auto small = gen_ground_pool(2, 3, cfg);
    const auto big = gen_ground_pool(6, 3, cfg);
    CHECK(small.points.rows() > 0);
    CHECK(big.points.rows() >= small.points.rows());
    const auto& p = big.points;
    CHECK(p.col(0).minCoeff() >= cfg.roi.x_min);
    CHECK(p.col(0).maxCoeff() <= cfg.roi.x_max);
    CHECK(p.col(1).minCoeff() >= cfg.roi.y_min);
    CHECK(p.col(1).maxCoeff() <= cfg.roi.y_max);
    CHECK(p.col(2).minCoeff() >= cfg.roi.z_min);
    CHECK(gen_ground_pool(2, 3, cfg).points == small.points);
}

TEST_CASE("count scenes respect separation") {
    const SimConfig cfg;
    const auto s = gen_count_scene(3, 2, 11, cfg, 4);
    CHECK(s.n_humans == 3);
    CHECK(s.objects.size() == 5);
    CHECK(s.scan.frame.frame_id == 4);
    for (std::size_t i = 0; i < s.objects.size(); ++i)
        for (std::size_t j = i + 1; j < s.objects.size(); ++j)
            CHECK(std::hypot(s.objects[i].x - s.objects[j].x, s.objects[i].y - s.objects[j].y) >= cfg.min_separation);
    const auto again = gen_count_scene(3, 2, 11, cfg, 4);
    CHECK(again.scan.frame == s.scan.frame);
}

TEST_CASE("labels csv") {
    std::ostringstream out;
    write_labels_csv(out, {0, 1}, {{ObjectKind::Human, ObjectKind::Box}, {}});
    CHECK(out.str() == "frame_id,object_id,class\n0,0,human\n0,1,box\n");
}
