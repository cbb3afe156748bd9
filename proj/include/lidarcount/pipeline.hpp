#pragma once

#include "lidarcount/clustering.hpp"
#include "lidarcount/features.hpp"
#include "lidarcount/model_io.hpp"
#include "lidarcount/pointcloud.hpp"
#include "lidarcount/projection.hpp"
#include "lidarcount/simulator.hpp"

#include <json.hpp>

#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace lidarcount {

/// Settings shared by every subcommand. Loaded from an INI-style file
/// (`key = value` lines under `[section]` headers); see README for the keys.
struct PipelineConfig {
    RoiConfig roi;
    AdaptiveDbscanConfig clustering{5, 1.0, 1.5};
    SliceSpec slices;
    int projection_target = kTargetPoints;

    sim::SensorModel sensor;
    double place_x_min = 1.5;
    double place_x_max = 10.0;
    double place_y_abs = 2.0;
    int min_cluster_points = 5;
    double min_separation = 2.0;
    double min_azimuth_gap_deg = 6.0;
    int n_human = 500;
    int n_clutter = 500;
    int pool_scenes = 50;
    int count_scenes = 20;
    int max_scene_humans = 3;
    int max_scene_clutter = 2;
    double test_fraction = 0.2;
    std::uint64_t simulate_seed = 7;

    nn::TrainConfig train;  // loss is chosen per architecture

    int representative = 100;  // calibration samples for quantization

    std::uint64_t count_seed = 0;  // padding draws of the counting path

    int bench_warmup = 10;
    int bench_repetitions = 200;

    void validate() const;
    sim::SimConfig sim_config() const;

    /// Sets `section.key` from text. Throws UsageError for unknown keys or
    /// malformed values.
    void set(std::string_view dotted_key, std::string_view value);
    /// Every key with its current value, in file order.
    std::vector<std::pair<std::string, std::string>> entries() const;
};

PipelineConfig load_config(std::istream& in);
PipelineConfig load_config_file(const std::string& path);
void write_config(std::ostream& out, const PipelineConfig& cfg);

// Dataset preparation shared by training, evaluation and quantization.

/// Slice features of every cluster, normalized with `stats`.
RowMatrix feature_matrix(const sim::LabeledClusters& data, const SliceSpec& slices, const FeatureStats& stats);
FeatureStats fit_feature_stats(const sim::LabeledClusters& data, const SliceSpec& slices);

/// Padded projection images; sample i is padded with seed derive_seed(seed, i).
RowMatrix image_matrix(const sim::LabeledClusters& data, const GroundPool& pool, std::uint64_t seed);

/// Metadata embedded in trained models so that a model file is self-contained.
nlohmann::json stats_to_json(const FeatureStats& stats);
FeatureStats stats_from_json(const nlohmann::json& j);
nlohmann::json pool_to_json(const GroundPool& pool);
GroundPool pool_from_json(const nlohmann::json& j);

nn::TrainedModel train_autoencoder(const sim::LabeledClusters& train, const PipelineConfig& cfg);
/// The pool padding is drawn afresh every epoch.
nn::TrainedModel train_cnn2d(const sim::LabeledClusters& train, const GroundPool& pool, const PipelineConfig& cfg);

/// Class decisions (1 human) for a labeled set with a float or 8-bit model.
std::vector<int> predict_labels(const AnyModel& model, const sim::LabeledClusters& data, std::uint64_t seed);

/// Model inputs (normalized features or padded images) for `data`.
RowMatrix model_inputs(const AnyModel& model, const sim::LabeledClusters& data, std::uint64_t seed);

// Counting

struct ClusterDecision {
    int cluster = 0;
    Eigen::Index n_points = 0;
    Point3 centroid = Point3::Zero();
    int label = 0;
    double score = 0.0;  // reconstruction error (autoencoder) or P(human) (CNN)
};

struct CountReport {
    std::int64_t frame_id = 0;
    double timestamp = 0.0;
    Eigen::Index n_points = 0;  // after ground removal and ROI
    double epsilon = 0.0;
    int n_clusters = 0;
    int n_humans = 0;
    std::vector<ClusterDecision> clusters;

    nlohmann::json to_json() const;
};

/// Frame -> people count with one trained (float or 8-bit) model. Model
/// metadata supplies the feature normalizer or the ground pool.
class PeopleCounter {
public:
    PeopleCounter(AnyModel model, PipelineConfig cfg);
    PeopleCounter(AnyModel model, PipelineConfig cfg, GroundPool pool);

    CountReport count(const Frame& frame) const;
    const AnyModel& model() const { return model_; }

private:
    AnyModel model_;
    PipelineConfig cfg_;
    bool autoencoder_ = false;
    FeatureStats stats_;
    GroundPool pool_;
    double threshold_ = 0.0;
};

CountReport count_people(const Frame& frame, const AnyModel& model, const PipelineConfig& cfg,
                         const GroundPool& pool);

}  // namespace lidarcount
