#include "lidarcount/pipeline.hpp"

#include "lidarcount/random.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <charconv>
#include <fstream>
#include <functional>
#include <istream>
#include <ostream>

namespace lidarcount {

namespace {

struct ConfigEntry {
    std::string key;  // section.name
    std::function<std::string()> get;
    std::function<void(std::string_view)> set;
};

template <typename T>
T parse_number(std::string_view key, std::string_view text) {
    T v{};
    const auto* end = text.data() + text.size();
    const auto [p, ec] = std::from_chars(text.data(), end, v);
    if (ec != std::errc() || p != end) throw UsageError("config " + std::string(key) + ": bad value '" + std::string(text) + "'");
    if constexpr (std::is_floating_point_v<T>)
        if (!std::isfinite(v)) throw UsageError("config " + std::string(key) + ": value must be finite");
    return v;
}

template <typename T>
ConfigEntry bind(std::string key, T& field) {
    ConfigEntry e;
    e.key = key;
    e.get = [&field]() {
        if constexpr (std::is_floating_point_v<T>) return format_double(field);
        else return std::to_string(field);
    };
    e.set = [&field, key](std::string_view text) { field = parse_number<T>(key, text); };
    return e;
}

std::vector<ConfigEntry> config_table(PipelineConfig& c) {
    return {
        bind("roi.x_min", c.roi.x_min),
        bind("roi.x_max", c.roi.x_max),
        bind("roi.y_min", c.roi.y_min),
        bind("roi.y_max", c.roi.y_max),
        bind("roi.z_min", c.roi.z_min),
        bind("clustering.min_pts", c.clustering.min_pts),
        bind("clustering.epsilon_min", c.clustering.epsilon_min),
        bind("clustering.epsilon_max", c.clustering.epsilon_max),
        bind("features.dz", c.slices.dz),
        bind("projection.target", c.projection_target),
        bind("sensor.channels", c.sensor.n_channels),
        bind("sensor.elevation_min", c.sensor.elevation_min_deg),
        bind("sensor.elevation_max", c.sensor.elevation_max_deg),
        bind("sensor.azimuth_center", c.sensor.azimuth_center_deg),
        bind("sensor.azimuth_sector", c.sensor.azimuth_sector_deg),
        bind("sensor.azimuth_steps", c.sensor.azimuth_steps),
        bind("sensor.min_range", c.sensor.min_range),
        bind("sensor.max_range", c.sensor.max_range),
        bind("sensor.noise_sigma", c.sensor.range_noise_sigma),
        bind("sensor.range_resolution", c.sensor.range_resolution),
        bind("sensor.ground_z", c.sensor.ground_z),
        bind("simulate.seed", c.simulate_seed),
        bind("simulate.n_human", c.n_human),
        bind("simulate.n_clutter", c.n_clutter),
        bind("simulate.pool_scenes", c.pool_scenes),
        bind("simulate.count_scenes", c.count_scenes),
        bind("simulate.max_scene_humans", c.max_scene_humans),
        bind("simulate.max_scene_clutter", c.max_scene_clutter),
        bind("simulate.test_fraction", c.test_fraction),
        bind("simulate.place_x_min", c.place_x_min),
        bind("simulate.place_x_max", c.place_x_max),
        bind("simulate.place_y_abs", c.place_y_abs),
        bind("simulate.min_cluster_points", c.min_cluster_points),
        bind("simulate.min_separation", c.min_separation),
        bind("simulate.min_azimuth_gap", c.min_azimuth_gap_deg),
        bind("train.seed", c.train.seed),
        bind("train.epochs", c.train.epochs),
        bind("train.learning_rate", c.train.learning_rate),
        bind("train.batch_size", c.train.batch_size),
        bind("train.beta1", c.train.beta1),
        bind("train.beta2", c.train.beta2),
        bind("train.adam_epsilon", c.train.adam_epsilon),
        bind("quantize.representative", c.representative),
        bind("count.seed", c.count_seed),
        bind("bench.warmup", c.bench_warmup),
        bind("bench.repetitions", c.bench_repetitions),
    };
}

}  // namespace

void PipelineConfig::set(std::string_view dotted_key, std::string_view value) {
    for (auto& e : config_table(*this)) {
        if (e.key == dotted_key) {
            e.set(value);
            return;
        }
    }
    throw UsageError("unknown config key '" + std::string(dotted_key) + "'");
}

std::vector<std::pair<std::string, std::string>> PipelineConfig::entries() const {
    PipelineConfig copy = *this;
    std::vector<std::pair<std::string, std::string>> out;
    for (auto& e : config_table(copy)) out.emplace_back(e.key, e.get());
    return out;
}

void PipelineConfig::validate() const {
    roi.validate();
    slices.validate();
    sensor.validate();
    if (clustering.min_pts < 2) throw PreconditionError("clustering.min_pts must be >= 2");
    if (!(clustering.epsilon_min > 0.0 && clustering.epsilon_max >= clustering.epsilon_min))
        throw PreconditionError("clustering: need 0 < epsilon_min <= epsilon_max");
    if (projection_target != kTargetPoints)
        throw PreconditionError("projection.target must be " + std::to_string(kTargetPoints) +
                                " (the CNN input is 18x18)");
    if (n_human < 0 || n_clutter < 0 || pool_scenes < 1 || count_scenes < 0)
        throw PreconditionError("simulate: counts must be non-negative and pool_scenes >= 1");
    if (max_scene_humans < 0 || max_scene_clutter < 0)
        throw PreconditionError("simulate: scene object limits must be >= 0");
    if (!(test_fraction >= 0.0 && test_fraction < 1.0)) throw PreconditionError("simulate.test_fraction must be in [0, 1)");
    if (!(place_x_min > 0.0 && place_x_max >= place_x_min && place_y_abs >= 0.0))
        throw PreconditionError("simulate: invalid placement range");
    if (min_cluster_points < 1) throw PreconditionError("simulate.min_cluster_points must be >= 1");
    train.validate();
    if (representative < 1) throw PreconditionError("quantize.representative must be >= 1");
    if (bench_warmup < 0 || bench_repetitions < 1 || bench_warmup + bench_repetitions < 30)
        throw PreconditionError("bench: need warmup >= 0, repetitions >= 1, at least 30 runs");
}

sim::SimConfig PipelineConfig::sim_config() const {
    sim::SimConfig s;
    s.sensor = sensor;
    s.roi = roi;
    s.place_x_min = place_x_min;
    s.place_x_max = place_x_max;
    s.place_y_abs = place_y_abs;
    s.min_cluster_points = min_cluster_points;
    s.min_separation = min_separation;
    s.min_azimuth_gap_deg = min_azimuth_gap_deg;
    return s;
}

PipelineConfig load_config(std::istream& in) {
    namespace pt = boost::property_tree;
    pt::ptree tree;
    try {
        pt::ini_parser::read_ini(in, tree);
    } catch (const pt::ini_parser_error& e) {
        throw UsageError("config line " + std::to_string(e.line()) + ": " + e.message());
    }
    PipelineConfig cfg;
    for (const auto& [section, body] : tree) {
        if (body.empty()) throw UsageError("config key '" + section + "' must be inside a [section]");
        for (const auto& [key, value] : body) cfg.set(section + "." + key, value.data());
    }
    cfg.validate();
    return cfg;
}

PipelineConfig load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw UsageError("cannot open config file '" + path + "'");
    return load_config(in);
}

void write_config(std::ostream& out, const PipelineConfig& cfg) {
    std::string section;
    for (const auto& [key, value] : cfg.entries()) {
        const auto dot = key.find('.');
        if (key.substr(0, dot) != section) {
            if (!section.empty()) out << '\n';
            section = key.substr(0, dot);
            out << '[' << section << "]\n";
        }
        out << key.substr(dot + 1) << " = " << value << '\n';
    }
}

// Datasets

FeatureStats fit_feature_stats(const sim::LabeledClusters& data, const SliceSpec& slices) {
    std::vector<FeatureVector> f;
    f.reserve(data.size());
    for (const auto& c : data.clusters) f.push_back(extract_features(c, slices));
    return fit_normalizer(f);
}

RowMatrix feature_matrix(const sim::LabeledClusters& data, const SliceSpec& slices, const FeatureStats& stats) {
    RowMatrix x(static_cast<Eigen::Index>(data.size()), kFeatureDim);
    for (std::size_t i = 0; i < data.size(); ++i)
        x.row(static_cast<Eigen::Index>(i)) = apply_normalizer(extract_features(data.clusters[i], slices), stats).transpose();
    return x;
}

RowMatrix image_matrix(const sim::LabeledClusters& data, const GroundPool& pool, std::uint64_t seed) {
    RowMatrix x(static_cast<Eigen::Index>(data.size()), kImageValues);
    for (std::size_t i = 0; i < data.size(); ++i)
        x.row(static_cast<Eigen::Index>(i)) = cluster_to_image(data.clusters[i], pool, derive_seed(seed, i)).values.transpose();
    return x;
}

nlohmann::json stats_to_json(const FeatureStats& stats) {
    return {{"mean", std::vector<double>(stats.mean.data(), stats.mean.data() + kFeatureDim)},
            {"std", std::vector<double>(stats.std.data(), stats.std.data() + kFeatureDim)}};
}

FeatureStats stats_from_json(const nlohmann::json& j) {
    try {
        const auto mean = j.at("mean").get<std::vector<double>>();
        const auto sd = j.at("std").get<std::vector<double>>();
        if (mean.size() != kFeatureDim || sd.size() != kFeatureDim)
            throw DataError("feature normalizer must hold " + std::to_string(kFeatureDim) + " values");
        FeatureStats s;
        for (int i = 0; i < kFeatureDim; ++i) {
            s.mean(i) = mean[static_cast<std::size_t>(i)];
            s.std(i) = sd[static_cast<std::size_t>(i)];
        }
        return s;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("feature normalizer: ") + e.what());
    }
}

nlohmann::json pool_to_json(const GroundPool& pool) {
    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index i = 0; i < pool.points.rows(); ++i)
        rows.push_back({pool.points(i, 0), pool.points(i, 1), pool.points(i, 2)});
    return rows;
}

GroundPool pool_from_json(const nlohmann::json& j) {
    try {
        GroundPool pool;
        pool.points.resize(static_cast<Eigen::Index>(j.size()), 3);
        for (std::size_t i = 0; i < j.size(); ++i)
            for (int k = 0; k < 3; ++k) pool.points(static_cast<Eigen::Index>(i), k) = j.at(i).at(static_cast<std::size_t>(k)).get<double>();
        return pool;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("ground pool: ") + e.what());
    }
}

namespace {

constexpr std::uint64_t kTrainPaddingStream = 0x70AD;

nlohmann::json history_json(const std::vector<double>& h) { return h; }

}  // namespace

nn::TrainedModel train_autoencoder(const sim::LabeledClusters& train, const PipelineConfig& cfg) {
    cfg.validate();
    if (train.size() == 0) throw DataError("training set is empty");
    const FeatureStats stats = fit_feature_stats(train, cfg.slices);
    const RowMatrix all = feature_matrix(train, cfg.slices, stats);
    std::vector<Eigen::Index> humans;
    for (std::size_t i = 0; i < train.size(); ++i)
        if (train.labels[i] == 1) humans.push_back(static_cast<Eigen::Index>(i));
    if (humans.empty()) throw DataError("autoencoder training needs human samples");
    const RowMatrix x = all(humans, Eigen::all);

    nn::TrainConfig tc = cfg.train;
    tc.loss = nn::Loss::Mse;
    auto result = nn::train(nn::build_autoencoder(), x, x, tc);
    nn::TrainedModel model = std::move(result.model);
    const auto choice = nn::choose_threshold(model, all, train.labels);
    model.threshold = choice.threshold;
    model.metadata["feature_stats"] = stats_to_json(stats);
    model.metadata["slice_dz"] = cfg.slices.dz;
    model.metadata["threshold_f1"] = choice.f1;
    model.metadata["loss_history"] = history_json(result.loss_history);
    return model;
}

nn::TrainedModel train_cnn2d(const sim::LabeledClusters& train, const GroundPool& pool, const PipelineConfig& cfg) {
    cfg.validate();
    if (train.size() == 0) throw DataError("training set is empty");
    const std::uint64_t padding_seed = derive_seed(cfg.train.seed, kTrainPaddingStream);
    RowMatrix x;
    const nn::EpochInputs epoch_images = [&](int epoch) -> const RowMatrix& {
        x = image_matrix(train, pool, derive_seed(padding_seed, static_cast<std::uint64_t>(epoch)));
        return x;
    };

    nn::TrainConfig tc = cfg.train;
    tc.loss = nn::Loss::SoftmaxCrossEntropy;
    auto result = nn::train(nn::build_cnn2d(), epoch_images, nn::one_hot(train.labels, 2), tc);
    nn::TrainedModel model = std::move(result.model);
    model.metadata["ground_pool"] = pool_to_json(pool);
    model.metadata["loss_history"] = history_json(result.loss_history);
    return model;
}

namespace {

bool is_autoencoder(const AnyModel& m) { return model_spec(m).name == "autoencoder"; }

FeatureStats model_stats(const AnyModel& m) {
    const auto& meta = model_metadata(m);
    if (!meta.contains("feature_stats")) throw DataError("autoencoder model lacks its feature normalizer");
    return stats_from_json(meta.at("feature_stats"));
}

SliceSpec model_slices(const AnyModel& m, const SliceSpec& fallback) {
    const auto& meta = model_metadata(m);
    if (meta.contains("slice_dz")) return SliceSpec{meta.at("slice_dz").get<double>()};
    return fallback;
}

GroundPool model_pool(const AnyModel& m) {
    const auto& meta = model_metadata(m);
    if (!meta.contains("ground_pool")) throw DataError("CNN model lacks its ground pool");
    return pool_from_json(meta.at("ground_pool"));
}

double model_cutoff(const AnyModel& m) {
    const auto t = model_threshold(m);
    if (!t) throw DataError("autoencoder model lacks a threshold");
    return *t;
}

}  // namespace

RowMatrix model_inputs(const AnyModel& model, const sim::LabeledClusters& data, std::uint64_t seed) {
    if (is_autoencoder(model)) return feature_matrix(data, model_slices(model, SliceSpec{}), model_stats(model));
    return image_matrix(data, model_pool(model), seed);
}

std::vector<int> predict_labels(const AnyModel& model, const sim::LabeledClusters& data, std::uint64_t seed) {
    const RowMatrix x = model_inputs(model, data, seed);
    std::vector<int> out(data.size());
    if (is_autoencoder(model)) {
        const double thr = model_cutoff(model);
        const Eigen::VectorXd err = std::holds_alternative<nn::TrainedModel>(model)
                                        ? nn::reconstruction_errors(std::get<nn::TrainedModel>(model), x)
                                        : quant::quantized_reconstruction_errors(std::get<quant::QuantizedModel>(model), x);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = err(static_cast<Eigen::Index>(i)) <= thr ? 1 : 0;
        return out;
    }
    const RowMatrix probs = std::holds_alternative<nn::TrainedModel>(model)
                                ? nn::predict(std::get<nn::TrainedModel>(model), x)
                                : quant::quantized_predict(std::get<quant::QuantizedModel>(model), x);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = nn::argmax(probs.row(static_cast<Eigen::Index>(i)));
    return out;
}

// Counting

nlohmann::json CountReport::to_json() const {
    nlohmann::json cl = nlohmann::json::array();
    for (const auto& c : clusters)
        cl.push_back({{"cluster", c.cluster},
                      {"n_points", c.n_points},
                      {"centroid", {c.centroid.x(), c.centroid.y(), c.centroid.z()}},
                      {"label", c.label == 1 ? "human" : "other"},
                      {"score", c.score}});
    return {{"report", "count"}, {"frame_id", frame_id}, {"timestamp", timestamp}, {"n_points", n_points}, {"epsilon", epsilon},
            {"n_clusters", n_clusters}, {"n_humans", n_humans}, {"clusters", cl}};
}

PeopleCounter::PeopleCounter(AnyModel model, PipelineConfig cfg) : model_(std::move(model)), cfg_(std::move(cfg)) {
    cfg_.validate();
    autoencoder_ = is_autoencoder(model_);
    if (autoencoder_) {
        stats_ = model_stats(model_);
        cfg_.slices = model_slices(model_, cfg_.slices);
        threshold_ = model_cutoff(model_);
    } else {
        pool_ = model_pool(model_);
    }
}

PeopleCounter::PeopleCounter(AnyModel model, PipelineConfig cfg, GroundPool pool)
    : model_(std::move(model)), cfg_(std::move(cfg)), pool_(std::move(pool)) {
    cfg_.validate();
    autoencoder_ = is_autoencoder(model_);
    if (autoencoder_) {
        stats_ = model_stats(model_);
        cfg_.slices = model_slices(model_, cfg_.slices);
        threshold_ = model_cutoff(model_);
    }
}

namespace {

// Re-raises a component error with the pipeline stage prefixed.
template <typename F>
auto stage(const char* name, F&& f) -> decltype(f()) {
    try {
        return f();
    } catch (const DataError& e) {
        throw DataError(std::string(name) + ": " + e.what());
    } catch (const PreconditionError& e) {
        throw PreconditionError(std::string(name) + ": " + e.what());
    }
}

}  // namespace

CountReport PeopleCounter::count(const Frame& frame) const {
    CountReport r;
    r.frame_id = frame.frame_id;
    r.timestamp = frame.timestamp;
    const Frame pre = stage("preprocess", [&] { return apply_roi(remove_ground(frame, cfg_.roi.z_min), cfg_.roi); });
    r.n_points = pre.size();
    if (pre.size() == 0) return r;

    const auto clustering = stage("cluster", [&] { return cluster_adaptive(pre.points, cfg_.clustering); });
    r.epsilon = clustering.params.epsilon;
    const auto clusters = extract_clusters(pre.points, clustering.assignment);
    r.n_clusters = static_cast<int>(clusters.size());

    const std::uint64_t frame_seed = derive_seed(cfg_.count_seed, static_cast<std::uint64_t>(frame.frame_id));
    stage("classify", [&] {
        for (std::size_t i = 0; i < clusters.size(); ++i) {
            const auto& c = clusters[i];
            ClusterDecision d;
            d.cluster = static_cast<int>(i);
            d.n_points = c.rows();
            d.centroid = c.colwise().mean().transpose();
            if (autoencoder_) {
                const RowMatrix v = apply_normalizer(extract_features(c, cfg_.slices), stats_).transpose();
                d.score = std::holds_alternative<nn::TrainedModel>(model_)
                              ? nn::reconstruction_errors(std::get<nn::TrainedModel>(model_), v)(0)
                              : quant::quantized_reconstruction_errors(std::get<quant::QuantizedModel>(model_), v)(0);
                d.label = d.score <= threshold_ ? 1 : 0;
            } else {
                const ProjectionImage img = cluster_to_image(c, pool_, derive_seed(frame_seed, i));
                if (std::holds_alternative<nn::TrainedModel>(model_)) {
                    const auto dec = nn::classify_cnn(std::get<nn::TrainedModel>(model_), img.values);
                    d.label = dec.label;
                    d.score = dec.probabilities(1);
                } else {
                    const auto dec = quant::quantized_forward(std::get<quant::QuantizedModel>(model_), img.values);
                    d.label = dec.label;
                    d.score = dec.probabilities(1);
                }
            }
            r.n_humans += d.label;
            r.clusters.push_back(d);
        }
        return 0;
    });
    return r;
}

CountReport count_people(const Frame& frame, const AnyModel& model, const PipelineConfig& cfg,
                         const GroundPool& pool) {
    return PeopleCounter(model, cfg, pool).count(frame);
}

}  // namespace lidarcount
