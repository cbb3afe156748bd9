#include "lidarcount/simulator.hpp"

#include "lidarcount/random.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <json.hpp>
#include <limits>
#include <numbers>
#include <ostream>
#include <random>

namespace lidarcount::sim {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kDeg = std::numbers::pi / 180.0;
constexpr int kMaxAttempts = 200;

// Torso and limb proportions of the human model.
constexpr double kTorsoWidth = 0.22;
constexpr double kTorsoDepth = 0.15;
constexpr double kTorsoHalfHeight = 0.35;
constexpr double kTorsoCenter = 0.6;
constexpr double kHeadRadius = 0.11;
constexpr double kLegRadius = 0.07;
constexpr double kLegOffset = 0.09;
constexpr double kHipHeight = 0.5;

struct LocalRay {
    Eigen::Vector3d o;
    Eigen::Vector3d d;
};

// Ray from the sensor expressed in the object's frame: origin at the object's
// ground contact point, x along the heading.
LocalRay to_local(const ObjectSpec& obj, const Eigen::Vector3d& dir, double ground_z) {
    const double c = std::cos(obj.heading), s = std::sin(obj.heading);
    auto rot = [&](const Eigen::Vector3d& v) { return Eigen::Vector3d(c * v.x() + s * v.y(), -s * v.x() + c * v.y(), v.z()); };
    return {rot(Eigen::Vector3d(-obj.x, -obj.y, -ground_z)), rot(dir)};
}

double hit_ellipsoid(const LocalRay& r, const Eigen::Vector3d& center, const Eigen::Vector3d& axes) {
    const Eigen::Vector3d o = (r.o - center).cwiseQuotient(axes);
    const Eigen::Vector3d d = r.d.cwiseQuotient(axes);
    const double a = d.squaredNorm();
    const double b = 2.0 * o.dot(d);
    const double c = o.squaredNorm() - 1.0;
    const double disc = b * b - 4.0 * a * c;
    if (disc < 0.0) return kInf;
    const double sq = std::sqrt(disc);
    const double t0 = (-b - sq) / (2.0 * a);
    if (t0 > 0.0) return t0;
    const double t1 = (-b + sq) / (2.0 * a);
    return t1 > 0.0 ? t1 : kInf;
}

// Vertical cylinder with a closed top, standing on z = z0.
double hit_cylinder(const LocalRay& r, double cx, double cy, double radius, double z0, double z1) {
    double best = kInf;
    const double ox = r.o.x() - cx, oy = r.o.y() - cy;
    const double a = r.d.x() * r.d.x() + r.d.y() * r.d.y();
    if (a > 0.0) {
        const double b = 2.0 * (ox * r.d.x() + oy * r.d.y());
        const double c = ox * ox + oy * oy - radius * radius;
        const double disc = b * b - 4.0 * a * c;
        if (disc >= 0.0) {
            const double sq = std::sqrt(disc);
            for (double t : {(-b - sq) / (2.0 * a), (-b + sq) / (2.0 * a)}) {
                if (t <= 0.0) continue;
                const double z = r.o.z() + t * r.d.z();
                if (z >= z0 && z <= z1) {
                    best = std::min(best, t);
                    break;
                }
            }
        }
    }
    if (r.d.z() != 0.0) {
        const double t = (z1 - r.o.z()) / r.d.z();
        if (t > 0.0 && t < best) {
            const double x = ox + t * r.d.x(), y = oy + t * r.d.y();
            if (x * x + y * y <= radius * radius) best = t;
        }
    }
    return best;
}

double hit_box(const LocalRay& r, const Eigen::Vector3d& lo, const Eigen::Vector3d& hi) {
    double tmin = -kInf, tmax = kInf;
    for (int k = 0; k < 3; ++k) {
        if (r.d(k) == 0.0) {
            if (r.o(k) < lo(k) || r.o(k) > hi(k)) return kInf;
            continue;
        }
        double t0 = (lo(k) - r.o(k)) / r.d(k);
        double t1 = (hi(k) - r.o(k)) / r.d(k);
        if (t0 > t1) std::swap(t0, t1);
        tmin = std::max(tmin, t0);
        tmax = std::min(tmax, t1);
    }
    if (tmax < tmin || tmax <= 0.0) return kInf;
    return tmin > 0.0 ? tmin : tmax;
}

double uniform(std::mt19937_64& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

}  // namespace

void SensorModel::validate() const {
    if (n_channels < 1 || azimuth_steps < 1) throw PreconditionError("sensor: channel and step counts must be positive");
    if (!(elevation_min_deg <= elevation_max_deg)) throw PreconditionError("sensor: elevation_min > elevation_max");
    if (!(azimuth_sector_deg > 0.0 && azimuth_sector_deg <= 360.0))
        throw PreconditionError("sensor: azimuth sector must lie in (0, 360]");
    if (!(min_range >= 0.0 && max_range > min_range)) throw PreconditionError("sensor: invalid range limits");
    if (!(range_noise_sigma >= 0.0) || !(range_resolution >= 0.0))
        throw PreconditionError("sensor: noise and resolution must be non-negative");
}

Eigen::Vector3d SensorModel::ray_direction(int channel, int step) const {
    const double el =
        n_channels == 1 ? elevation_min_deg
                        : elevation_min_deg + (elevation_max_deg - elevation_min_deg) * channel / (n_channels - 1);
    const double az = azimuth_center_deg - 0.5 * azimuth_sector_deg + azimuth_sector_deg * (step + 0.5) / azimuth_steps;
    const double ce = std::cos(el * kDeg);
    return {ce * std::cos(az * kDeg), ce * std::sin(az * kDeg), std::sin(el * kDeg)};
}

std::string to_string(ObjectKind kind) {
    switch (kind) {
        case ObjectKind::Human: return "human";
        case ObjectKind::Box: return "box";
        case ObjectKind::Pole: return "pole";
        case ObjectKind::Bush: return "bush";
    }
    return "?";
}

ObjectKind object_kind_from_string(const std::string& name) {
    if (name == "human") return ObjectKind::Human;
    if (name == "box") return ObjectKind::Box;
    if (name == "pole") return ObjectKind::Pole;
    if (name == "bush") return ObjectKind::Bush;
    throw DataError("unknown object kind '" + name + "'");
}

double intersect(const ObjectSpec& obj, const Eigen::Vector3d& dir, double ground_z) {
    const LocalRay r = to_local(obj, dir, ground_z);
    switch (obj.kind) {
        case ObjectKind::Human: {
            const double h = obj.size.x();
            double t = hit_ellipsoid(r, {0.0, 0.0, kTorsoCenter * h}, {kTorsoDepth, kTorsoWidth, kTorsoHalfHeight});
            t = std::min(t, hit_ellipsoid(r, {0.0, 0.0, h - kHeadRadius}, Eigen::Vector3d::Constant(kHeadRadius)));
            for (double side : {-1.0, 1.0})
                t = std::min(t, hit_cylinder(r, 0.0, side * kLegOffset, kLegRadius, 0.0, kHipHeight * h));
            return t;
        }
        case ObjectKind::Box: {
            const Eigen::Vector3d half(0.5 * obj.size.x(), 0.5 * obj.size.y(), 0.0);
            return hit_box(r, {-half.x(), -half.y(), 0.0}, {half.x(), half.y(), obj.size.z()});
        }
        case ObjectKind::Pole:
            return hit_cylinder(r, 0.0, 0.0, obj.size.x(), 0.0, obj.size.z());
        case ObjectKind::Bush:
            return hit_ellipsoid(r, {0.0, 0.0, 0.9 * obj.size.z()}, obj.size);
    }
    return kInf;
}

Scan raycast(const SensorModel& sensor, const std::vector<ObjectSpec>& objects, std::uint64_t seed,
             std::int64_t frame_id, double timestamp) {
    sensor.validate();
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> noise(0.0, 1.0);

    Scan scan;
    scan.frame.frame_id = frame_id;
    scan.frame.timestamp = timestamp;
    for (const auto& o : objects) scan.truth.object_class.push_back(object_class(o.kind));

    std::vector<Point3> pts;
    for (int ch = 0; ch < sensor.n_channels; ++ch) {
        for (int st = 0; st < sensor.azimuth_steps; ++st) {
            const Eigen::Vector3d d = sensor.ray_direction(ch, st);
            double best = d.z() < 0.0 ? sensor.ground_z / d.z() : kInf;
            int hit = -1;
            for (std::size_t k = 0; k < objects.size(); ++k) {
                const double t = intersect(objects[k], d, sensor.ground_z);
                if (t < best) {
                    best = t;
                    hit = static_cast<int>(k);
                }
            }
            if (!(best >= sensor.min_range && best <= sensor.max_range)) continue;
            double range = best + sensor.range_noise_sigma * noise(rng);
            if (sensor.range_resolution > 0.0) range = std::round(range / sensor.range_resolution) * sensor.range_resolution;
            if (range > sensor.max_range || range <= 0.0) continue;
            pts.push_back(range * d);
            scan.truth.point_object.push_back(hit);
            scan.truth.point_class.push_back(hit < 0 ? -1 : static_cast<int>(object_class(objects[hit].kind)));
        }
    }
    scan.frame.points = stack_points(pts);
    return scan;
}

ObjectSpec random_human(std::mt19937_64& rng, double x, double y) {
    ObjectSpec o;
    o.kind = ObjectKind::Human;
    o.x = x;
    o.y = y;
    o.heading = uniform(rng, 0.0, 2.0 * std::numbers::pi);
    o.size = {uniform(rng, 1.5, 1.9), 0.0, 0.0};
    return o;
}

ObjectSpec random_clutter(std::mt19937_64& rng, ObjectKind kind, double x, double y) {
    ObjectSpec o;
    o.kind = kind;
    o.x = x;
    o.y = y;
    o.heading = uniform(rng, 0.0, 2.0 * std::numbers::pi);
    switch (kind) {
        case ObjectKind::Box: o.size = {uniform(rng, 0.4, 1.2), uniform(rng, 0.3, 0.8), uniform(rng, 0.5, 1.1)}; break;
        case ObjectKind::Pole: o.size = {uniform(rng, 0.04, 0.12), 0.0, uniform(rng, 2.0, 3.0)}; break;
        case ObjectKind::Bush: o.size = {uniform(rng, 0.3, 0.7), uniform(rng, 0.3, 0.7), uniform(rng, 0.3, 0.6)}; break;
        case ObjectKind::Human: return random_human(rng, x, y);
    }
    return o;
}

ObjectSpec random_clutter(std::mt19937_64& rng, double x, double y) {
    static constexpr ObjectKind kinds[] = {ObjectKind::Box, ObjectKind::Pole, ObjectKind::Bush};
    const auto k = std::uniform_int_distribution<int>(0, 2)(rng);
    return random_clutter(rng, kinds[k], x, y);
}

ObjectSpec random_ground_clutter(std::mt19937_64& rng, double x, double y) {
    const bool box = std::uniform_int_distribution<int>(0, 1)(rng) == 0;
    ObjectSpec o = random_clutter(rng, box ? ObjectKind::Box : ObjectKind::Bush, x, y);
    o.size.z() = box ? uniform(rng, 0.45, 0.75) : uniform(rng, 0.25, 0.4);
    return o;
}

Scan preprocess(const Scan& scan, const RoiConfig& roi) {
    roi.validate();
    Scan out;
    out.frame.frame_id = scan.frame.frame_id;
    out.frame.timestamp = scan.frame.timestamp;
    out.truth.object_class = scan.truth.object_class;
    std::vector<Point3> pts;
    const auto& p = scan.frame.points;
    for (Eigen::Index i = 0; i < p.rows(); ++i) {
        const double x = p(i, 0), y = p(i, 1), z = p(i, 2);
        if (z < roi.z_min || x < roi.x_min || x > roi.x_max || y < roi.y_min || y > roi.y_max) continue;
        pts.push_back(p.row(i).transpose());
        out.truth.point_object.push_back(scan.truth.point_object[static_cast<std::size_t>(i)]);
        out.truth.point_class.push_back(scan.truth.point_class[static_cast<std::size_t>(i)]);
    }
    out.frame.points = stack_points(pts);
    return out;
}

Eigen::Index LabeledClusters::max_cluster_size() const {
    Eigen::Index m = 0;
    for (const auto& c : clusters) m = std::max(m, c.rows());
    return m;
}

namespace {

std::pair<double, double> random_position(std::mt19937_64& rng, const SimConfig& cfg) {
    const double x = uniform(rng, cfg.place_x_min, cfg.place_x_max);
    // Keep the object center inside the sensor sector with some margin.
    const double half = 0.5 * cfg.sensor.azimuth_sector_deg * kDeg;
    const double y_lim = std::min(cfg.place_y_abs, x * std::tan(std::min(half, 1.5)) - 0.5);
    const double y = y_lim > 0.0 ? uniform(rng, -y_lim, y_lim) : 0.0;
    return {x, y};
}

PointMatrix object_points(const Scan& s, int object) {
    std::vector<Point3> pts;
    for (std::size_t i = 0; i < s.truth.point_object.size(); ++i)
        if (s.truth.point_object[i] == object) pts.push_back(s.frame.points.row(static_cast<Eigen::Index>(i)).transpose());
    return stack_points(pts);
}

void validate_config(const SimConfig& cfg) {
    cfg.sensor.validate();
    cfg.roi.validate();
    if (!(cfg.place_x_min > 0.0 && cfg.place_x_max >= cfg.place_x_min))
        throw PreconditionError("simulator: invalid placement range");
    if (cfg.min_cluster_points < 1) throw PreconditionError("simulator: min_cluster_points must be >= 1");
}

}  // namespace

LabeledClusters gen_labeled_dataset(int n_human, int n_clutter, std::uint64_t seed, const SimConfig& cfg) {
    if (n_human < 0 || n_clutter < 0) throw PreconditionError("gen_labeled_dataset: counts must be >= 0");
    validate_config(cfg);
    LabeledClusters out;
    const int total = n_human + n_clutter;
    for (int i = 0; i < total; ++i) {
        std::mt19937_64 rng(derive_seed(seed, static_cast<std::uint64_t>(i)));
        const bool human = i < n_human;
        for (int attempt = 0;; ++attempt) {
            if (attempt == kMaxAttempts)
                throw PreconditionError("gen_labeled_dataset: no placement yields enough returns");
            const auto [x, y] = random_position(rng, cfg);
            const ObjectSpec obj = human ? random_human(rng, x, y) : random_clutter(rng, x, y);
            const Scan scan = preprocess(raycast(cfg.sensor, {obj}, rng(), i), cfg.roi);
            PointMatrix pts = object_points(scan, 0);
            if (pts.rows() < cfg.min_cluster_points) continue;
            out.clusters.push_back(std::move(pts));
            out.labels.push_back(human ? 1 : 0);
            out.kinds.push_back(obj.kind);
            break;
        }
    }
    return out;
}

GroundPool pool_from_scenes(const std::vector<std::vector<ObjectSpec>>& scenes, std::uint64_t seed,
                            const SimConfig& cfg) {
    validate_config(cfg);
    std::vector<Point3> pts;
    for (std::size_t i = 0; i < scenes.size(); ++i) {
        for (const auto& o : scenes[i])
            if (o.kind == ObjectKind::Human) throw PreconditionError("ground pool scenes must be human-free");
        const Scan s = preprocess(raycast(cfg.sensor, scenes[i], derive_seed(seed, i)), cfg.roi);
        for (Eigen::Index r = 0; r < s.frame.points.rows(); ++r) pts.push_back(s.frame.points.row(r).transpose());
    }
    return GroundPool{stack_points(pts)};
}

GroundPool gen_ground_pool(int n_scenes, std::uint64_t seed, const SimConfig& cfg) {
    if (n_scenes < 1) throw PreconditionError("gen_ground_pool: n_scenes must be >= 1");
    std::vector<std::vector<ObjectSpec>> scenes;
    for (int i = 0; i < n_scenes; ++i) {
        std::mt19937_64 rng(derive_seed(seed, static_cast<std::uint64_t>(i)));
        const int n = std::uniform_int_distribution<int>(1, 3)(rng);
        std::vector<ObjectSpec> objs;
        for (int k = 0; k < n; ++k) {
            const auto [x, y] = random_position(rng, cfg);
            objs.push_back(random_ground_clutter(rng, x, y));
        }
        scenes.push_back(std::move(objs));
    }
    return pool_from_scenes(scenes, derive_seed(seed, 0x9001), cfg);
}

CountScene gen_count_scene(int n_humans, int n_clutter, std::uint64_t seed, const SimConfig& cfg,
                           std::int64_t frame_id) {
    if (n_humans < 0 || n_clutter < 0) throw PreconditionError("gen_count_scene: counts must be >= 0");
    validate_config(cfg);
    std::mt19937_64 rng(seed);
    const int total = n_humans + n_clutter;
    for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
        std::vector<ObjectSpec> objs;
        bool placed = true;
        for (int k = 0; k < total && placed; ++k) {
            placed = false;
            for (int tries = 0; tries < kMaxAttempts && !placed; ++tries) {
                const auto [x, y] = random_position(rng, cfg);
                bool ok = true;
                for (const auto& o : objs) {
                    const double gap = std::abs(std::atan2(y, x) - std::atan2(o.y, o.x)) / kDeg;
                    if (std::hypot(x - o.x, y - o.y) < cfg.min_separation || gap < cfg.min_azimuth_gap_deg) ok = false;
                }
                if (!ok) continue;
                objs.push_back(k < n_humans ? random_human(rng, x, y) : random_clutter(rng, x, y));
                placed = true;
            }
        }
        if (!placed) continue;
        CountScene scene;
        scene.scan = raycast(cfg.sensor, objs, rng(), frame_id);
        const Scan pre = preprocess(scene.scan, cfg.roi);
        std::vector<int> counts(objs.size(), 0);
        for (int id : pre.truth.point_object)
            if (id >= 0) ++counts[static_cast<std::size_t>(id)];
        bool visible = true;
        for (int c : counts) visible = visible && c >= cfg.min_cluster_points;
        if (!visible) continue;
        scene.objects = std::move(objs);
        scene.n_humans = n_humans;
        return scene;
    }
    throw PreconditionError("gen_count_scene: could not place objects with the requested separation");
}

void write_clusters_ndjson(std::ostream& out, const LabeledClusters& data) {
    for (std::size_t i = 0; i < data.size(); ++i) {
        out << "{\"label\":" << data.labels[i] << ",\"kind\":\"" << to_string(data.kinds[i]) << "\",\"points\":[";
        const auto& p = data.clusters[i];
        for (Eigen::Index r = 0; r < p.rows(); ++r) {
            if (r) out << ',';
            out << '[' << format_double(p(r, 0)) << ',' << format_double(p(r, 1)) << ',' << format_double(p(r, 2)) << ']';
        }
        out << "]}\n";
    }
}

LabeledClusters read_clusters_ndjson(std::istream& in) {
    LabeledClusters data;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const std::string where = "line " + std::to_string(line_no) + ": ";
        try {
            const auto j = nlohmann::json::parse(line);
            const int label = j.at("label").get<int>();
            if (label != 0 && label != 1) throw DataError(where + "label must be 0 or 1");
            const ObjectKind kind = j.contains("kind") ? object_kind_from_string(j.at("kind").get<std::string>())
                                                       : (label == 1 ? ObjectKind::Human : ObjectKind::Box);
            const auto& pts = j.at("points");
            PointMatrix p(static_cast<Eigen::Index>(pts.size()), 3);
            for (std::size_t r = 0; r < pts.size(); ++r) {
                if (pts[r].size() != 3) throw DataError(where + "points need three coordinates");
                for (int k = 0; k < 3; ++k) {
                    const double v = pts[r][static_cast<std::size_t>(k)].get<double>();
                    if (!std::isfinite(v)) throw DataError(where + "non-finite coordinate");
                    p(static_cast<Eigen::Index>(r), k) = v;
                }
            }
            if (p.rows() == 0) throw DataError(where + "empty cluster");
            data.clusters.push_back(std::move(p));
            data.labels.push_back(label);
            data.kinds.push_back(kind);
        } catch (const nlohmann::json::exception& e) {
            throw DataError(where + e.what());
        }
    }
    return data;
}

std::pair<LabeledClusters, LabeledClusters> split_dataset(const LabeledClusters& data, double test_fraction,
                                                          std::uint64_t seed) {
    if (!(test_fraction >= 0.0 && test_fraction <= 1.0)) throw PreconditionError("split: test_fraction must be in [0, 1]");
    std::vector<std::size_t> idx(data.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::mt19937_64 rng(seed);
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(idx.size())));
    std::pair<LabeledClusters, LabeledClusters> out;
    for (std::size_t k = 0; k < idx.size(); ++k) {
        auto& dst = k < idx.size() - n_test ? out.first : out.second;
        dst.clusters.push_back(data.clusters[idx[k]]);
        dst.labels.push_back(data.labels[idx[k]]);
        dst.kinds.push_back(data.kinds[idx[k]]);
    }
    return out;
}

void write_labels_csv(std::ostream& out, const std::vector<std::int64_t>& frame_ids,
                      const std::vector<std::vector<ObjectKind>>& objects) {
    if (frame_ids.size() != objects.size()) throw PreconditionError("write_labels_csv: size mismatch");
    out << "frame_id,object_id,class\n";
    for (std::size_t f = 0; f < frame_ids.size(); ++f)
        for (std::size_t k = 0; k < objects[f].size(); ++k)
            out << frame_ids[f] << ',' << k << ',' << to_string(objects[f][k]) << '\n';
}

}  // namespace lidarcount::sim
