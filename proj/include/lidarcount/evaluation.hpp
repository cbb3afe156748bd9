#pragma once

#include "lidarcount/clustering.hpp"
#include "lidarcount/pointcloud.hpp"
#include "lidarcount/quantization.hpp"

#include <json.hpp>

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace lidarcount::eval {

/// Binary classification metrics with human (label 1) as the positive class.
/// Ratios whose denominator is zero are reported as 0 and flagged.
struct MetricsReport {
    std::int64_t tp = 0, fp = 0, tn = 0, fn = 0;
    double accuracy = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    bool precision_undefined = false;
    bool recall_undefined = false;
    bool f1_undefined = false;

    std::int64_t n() const { return tp + fp + tn + fn; }
    nlohmann::json to_json() const;
};

MetricsReport compute_metrics(const std::vector<int>& predictions, const std::vector<int>& truth);

struct SilhouetteSummary {
    std::vector<double> scores;   // frames with at least two clusters, in input order
    std::optional<double> mean;   // empty when no frame qualifies
    std::optional<double> std;    // population standard deviation
    std::size_t n_excluded = 0;   // frames with one or no cluster

    nlohmann::json to_json() const;
};

/// Adaptive clustering per frame, then the silhouette of every frame holding
/// two or more clusters.
SilhouetteSummary silhouette_summary(const std::vector<Frame>& frames, const AdaptiveDbscanConfig& cfg);

/// Left-inclusive bins [k*w, (k+1)*w).
struct Histogram {
    double bin_width = 0.02;
    std::vector<std::int64_t> bins;    // occupied bin indices k, ascending
    std::vector<std::int64_t> counts;  // aligned with bins
    std::vector<double> values;        // binned values in input order
    std::size_t n_skipped = 0;         // frames too small for a k-distance curve

    nlohmann::json to_json() const;
};

/// Bin index of v; values within 1e-9 bins of an upper edge count as that edge.
std::int64_t bin_index(double v, double width);

Histogram histogram(const std::vector<double>& values, double bin_width);

/// Raw (unclamped) elbow epsilon per frame, binned.
Histogram elbow_histogram(const std::vector<Frame>& frames, int min_pts, double bin_width = 0.02);

inline constexpr double kRealTimeBudgetMs = 16.0;

struct LatencyReport {
    std::string label;
    int warmup = 0;
    int repetitions = 0;
    double mean_ms = 0.0;
    double p50_ms = 0.0;
    double p95_ms = 0.0;
    double max_ms = 0.0;
    double budget_ms = kRealTimeBudgetMs;
    bool pass = false;  // p95 < budget

    nlohmann::json to_json() const;
};

/// Times `infer(i)` for i = 0, 1, ... (callers cycle through their inputs).
/// The first `warmup` calls are not measured; the calling thread is pinned
/// to one CPU for the duration. Requires warmup + repetitions >= 30.
LatencyReport latency_bench(const std::function<void(std::size_t)>& infer, int warmup, int repetitions,
                            std::string label = {});

/// Single-sample inference over the rows of `inputs`: reconstruction error for
/// an autoencoder, class decision otherwise.
LatencyReport latency_bench(const nn::TrainedModel& model, const RowMatrix& inputs, int warmup, int repetitions);
LatencyReport latency_bench(const quant::QuantizedModel& model, const RowMatrix& inputs, int warmup,
                            int repetitions);

// Temperature logs

/// Seconds since the Unix epoch. Accepts YYYY-MM-DD[T ]HH[:MM[:SS[.frac]]]
/// with an optional Z or +-HH[:MM] offset; no offset means UTC.
std::optional<double> parse_iso8601(std::string_view text);

/// UTC hour as YYYY-MM-DDTHH:00:00Z.
std::string format_hour(std::int64_t hour_index);

struct TemperatureSample {
    double timestamp = 0.0;  // seconds since epoch
    double celsius = 0.0;
};

struct TemperatureLog {
    std::vector<TemperatureSample> samples;  // strictly increasing timestamps
    std::size_t n_skipped = 0;               // unparseable rows and repeated timestamps
};

/// `timestamp_iso8601,celsius` rows; an optional header line is ignored.
/// Rows are sorted by time; a repeated timestamp keeps its first occurrence.
TemperatureLog read_temperature_csv(std::istream& in);

struct HourlyMean {
    std::int64_t hour = 0;  // floor(timestamp / 3600)
    double mean = 0.0;
    std::size_t count = 0;
};

struct HourlyDifference {
    std::int64_t hour = 0;
    double pole = 0.0;
    double weather = 0.0;
    double difference = 0.0;  // pole - weather
};

struct TemperatureReport {
    std::size_t n_samples = 0;
    std::size_t n_skipped = 0;
    double max = 0.0;
    double min = 0.0;
    double mean = 0.0;
    std::vector<HourlyMean> hourly;
    std::optional<std::size_t> weather_skipped;
    std::vector<HourlyDifference> difference;  // hours present in both series

    nlohmann::json summary_json() const;
    /// Summary line followed by one line per hourly mean and per difference.
    void write_ndjson(std::ostream& out) const;
};

std::vector<HourlyMean> resample_hourly(const std::vector<TemperatureSample>& samples);

TemperatureReport temperature_analysis(const TemperatureLog& pole, const TemperatureLog* weather = nullptr);
TemperatureReport temperature_analysis(std::istream& pole_csv, std::istream* weather_csv = nullptr);

}  // namespace lidarcount::eval
