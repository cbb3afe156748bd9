#include "lidarcount/evaluation.hpp"

#include "lidarcount/features.hpp"

#include <algorithm>
#include <chrono>
#include <charconv>
#include <cmath>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>

#ifdef __linux__
#include <sched.h>
#endif

namespace lidarcount::eval {

using nlohmann::json;

json MetricsReport::to_json() const {
    return json{{"report", "metrics"},     {"n", n()},
                {"tp", tp},                {"fp", fp},
                {"tn", tn},                {"fn", fn},
                {"accuracy", accuracy},    {"precision", precision},
                {"recall", recall},        {"f1", f1},
                {"precision_undefined", precision_undefined},
                {"recall_undefined", recall_undefined},
                {"f1_undefined", f1_undefined}};
}

MetricsReport compute_metrics(const std::vector<int>& predictions, const std::vector<int>& truth) {
    if (predictions.size() != truth.size())
        throw PreconditionError("compute_metrics: " + std::to_string(predictions.size()) + " predictions vs " +
                                std::to_string(truth.size()) + " labels");
    if (truth.empty()) throw PreconditionError("compute_metrics: no samples");
    MetricsReport r;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        const bool p = predictions[i] == 1, t = truth[i] == 1;
        if (p && t) ++r.tp;
        else if (p) ++r.fp;
        else if (t) ++r.fn;
        else ++r.tn;
    }
    r.accuracy = static_cast<double>(r.tp + r.tn) / static_cast<double>(r.n());
    if (r.tp + r.fp > 0) r.precision = static_cast<double>(r.tp) / static_cast<double>(r.tp + r.fp);
    else r.precision_undefined = true;
    if (r.tp + r.fn > 0) r.recall = static_cast<double>(r.tp) / static_cast<double>(r.tp + r.fn);
    else r.recall_undefined = true;
    if (r.precision + r.recall > 0.0) r.f1 = 2.0 * r.precision * r.recall / (r.precision + r.recall);
    else r.f1_undefined = true;
    return r;
}

namespace {

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json("n/a"); }

}  // namespace

json SilhouetteSummary::to_json() const {
    return json{{"report", "silhouette"}, {"mean", optional_json(mean)}, {"std", optional_json(std)},
                {"n_scored", scores.size()}, {"n_excluded", n_excluded}};
}

SilhouetteSummary silhouette_summary(const std::vector<Frame>& frames, const AdaptiveDbscanConfig& cfg) {
    if (frames.empty()) throw PreconditionError("silhouette_summary: no frames");
    SilhouetteSummary s;
    for (const auto& f : frames) {
        const auto c = cluster_adaptive(f.points, cfg);
        if (c.assignment.n_clusters < 2) {
            ++s.n_excluded;
            continue;
        }
        s.scores.push_back(silhouette(f.points, c.assignment));
    }
    if (!s.scores.empty()) {
        const double n = static_cast<double>(s.scores.size());
        const double mean = std::accumulate(s.scores.begin(), s.scores.end(), 0.0) / n;
        double ss = 0.0;
        for (double v : s.scores) ss += (v - mean) * (v - mean);
        s.mean = mean;
        s.std = std::sqrt(ss / n);
    }
    return s;
}

json Histogram::to_json() const {
    json b = json::array();
    for (std::size_t i = 0; i < bins.size(); ++i)
        b.push_back({{"lo", static_cast<double>(bins[i]) * bin_width},
                     {"hi", static_cast<double>(bins[i] + 1) * bin_width},
                     {"count", counts[i]}});
    return json{{"report", "elbow_histogram"}, {"bin_width", bin_width}, {"n_values", values.size()},
                {"n_skipped", n_skipped}, {"bins", b}};
}

std::int64_t bin_index(double v, double width) {
    if (!(width > 0.0)) throw PreconditionError("histogram: bin width must be > 0");
    return static_cast<std::int64_t>(std::floor(v / width + 1e-9));
}

Histogram histogram(const std::vector<double>& values, double bin_width) {
    Histogram h;
    h.bin_width = bin_width;
    h.values = values;
    std::map<std::int64_t, std::int64_t> counts;
    for (double v : values) ++counts[bin_index(v, bin_width)];
    for (const auto& [k, c] : counts) {
        h.bins.push_back(k);
        h.counts.push_back(c);
    }
    return h;
}

Histogram elbow_histogram(const std::vector<Frame>& frames, int min_pts, double bin_width) {
    if (frames.empty()) throw PreconditionError("elbow_histogram: no frames");
    if (min_pts < 2) throw PreconditionError("elbow_histogram: min_pts must be >= 2");
    const int k = min_pts - 1;
    std::vector<double> values;
    std::size_t skipped = 0;
    for (const auto& f : frames) {
        if (f.points.rows() <= k) {
            ++skipped;
            continue;
        }
        values.push_back(find_elbow(knn_distance_curve(f.points, k)).epsilon);
    }
    Histogram h = histogram(values, bin_width);
    h.n_skipped = skipped;
    return h;
}

json LatencyReport::to_json() const {
    return json{{"report", "latency"}, {"label", label},   {"warmup", warmup},     {"repetitions", repetitions},
                {"mean_ms", mean_ms},  {"p50_ms", p50_ms}, {"p95_ms", p95_ms},     {"max_ms", max_ms},
                {"budget_ms", budget_ms}, {"pass", pass}};
}

namespace {

// Restricts the calling thread to the CPU it is currently running on.
class PinToCpu {
public:
    PinToCpu() {
#ifdef __linux__
        if (sched_getaffinity(0, sizeof(saved_), &saved_) != 0) return;
        const int cpu = sched_getcpu();
        if (cpu < 0) return;
        cpu_set_t one;
        CPU_ZERO(&one);
        CPU_SET(cpu, &one);
        active_ = sched_setaffinity(0, sizeof(one), &one) == 0;
#endif
    }
    ~PinToCpu() {
#ifdef __linux__
        if (active_) sched_setaffinity(0, sizeof(saved_), &saved_);
#endif
    }
    PinToCpu(const PinToCpu&) = delete;
    PinToCpu& operator=(const PinToCpu&) = delete;

private:
#ifdef __linux__
    cpu_set_t saved_{};
#endif
    bool active_ = false;
};

}  // namespace

LatencyReport latency_bench(const std::function<void(std::size_t)>& infer, int warmup, int repetitions,
                            std::string label) {
    if (warmup < 0 || repetitions < 1 || warmup + repetitions < 30)
        throw PreconditionError("latency_bench: need warmup >= 0, repetitions >= 1 and at least 30 runs in total");
    PinToCpu pin;
    std::size_t call = 0;
    for (int i = 0; i < warmup; ++i) infer(call++);
    std::vector<double> ms;
    ms.reserve(static_cast<std::size_t>(repetitions));
    for (int i = 0; i < repetitions; ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        infer(call++);
        const auto t1 = std::chrono::steady_clock::now();
        ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
    }
    LatencyReport r;
    r.label = std::move(label);
    r.warmup = warmup;
    r.repetitions = repetitions;
    r.mean_ms = std::accumulate(ms.begin(), ms.end(), 0.0) / static_cast<double>(ms.size());
    std::sort(ms.begin(), ms.end());
    r.p50_ms = percentile_sorted(ms, 0.50);
    r.p95_ms = percentile_sorted(ms, 0.95);
    r.max_ms = ms.back();
    r.pass = r.p95_ms < r.budget_ms;
    return r;
}

namespace {

// Keeps benchmark results observable so the work is not optimized away.
volatile double g_sink = 0.0;

void require_inputs(const RowMatrix& inputs, const nn::ModelSpec& spec) {
    if (inputs.rows() < 1) throw PreconditionError("latency_bench: no inputs");
    if (inputs.cols() != spec.input.size())
        throw PreconditionError("latency_bench: input width " + std::to_string(inputs.cols()) + " != model input " +
                                std::to_string(spec.input.size()));
}

}  // namespace

LatencyReport latency_bench(const nn::TrainedModel& model, const RowMatrix& inputs, int warmup, int repetitions) {
    require_inputs(inputs, model.spec);
    const bool ae = model.spec.name == "autoencoder";
    auto infer = [&](std::size_t i) {
        const Eigen::VectorXd v = inputs.row(static_cast<Eigen::Index>(i % inputs.rows())).transpose();
        g_sink = ae ? nn::reconstruction_error(model, v) : nn::classify_cnn(model, v).probabilities(1);
    };
    return latency_bench(infer, warmup, repetitions, model.spec.name + " float");
}

LatencyReport latency_bench(const quant::QuantizedModel& model, const RowMatrix& inputs, int warmup,
                            int repetitions) {
    require_inputs(inputs, model.spec);
    const bool ae = model.spec.name == "autoencoder";
    auto infer = [&](std::size_t i) {
        const Eigen::Index r = static_cast<Eigen::Index>(i % inputs.rows());
        if (ae) {
            g_sink = quant::quantized_reconstruction_errors(model, inputs.row(r))(0);
        } else {
            g_sink = quant::quantized_forward(model, inputs.row(r).transpose()).probabilities(1);
        }
    };
    return latency_bench(infer, warmup, repetitions, model.spec.name + " quantized");
}

// Temperature logs

namespace {

bool read_int(std::string_view& s, std::size_t digits, int& out) {
    if (s.size() < digits) return false;
    for (std::size_t i = 0; i < digits; ++i)
        if (s[i] < '0' || s[i] > '9') return false;
    std::from_chars(s.data(), s.data() + digits, out);
    s.remove_prefix(digits);
    return true;
}

bool expect(std::string_view& s, char c) {
    if (s.empty() || s.front() != c) return false;
    s.remove_prefix(1);
    return true;
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

}  // namespace

std::optional<double> parse_iso8601(std::string_view s) {
    s = trim(s);
    int y = 0, mo = 0, d = 0, h = 0, mi = 0, sec = 0;
    double frac = 0.0;
    if (!read_int(s, 4, y) || !expect(s, '-') || !read_int(s, 2, mo) || !expect(s, '-') || !read_int(s, 2, d))
        return std::nullopt;
    if (!s.empty() && (s.front() == 'T' || s.front() == ' ')) {
        s.remove_prefix(1);
        if (!read_int(s, 2, h)) return std::nullopt;
        if (!s.empty() && s.front() == ':') {
            s.remove_prefix(1);
            if (!read_int(s, 2, mi)) return std::nullopt;
            if (!s.empty() && s.front() == ':') {
                s.remove_prefix(1);
                if (!read_int(s, 2, sec)) return std::nullopt;
                if (!s.empty() && (s.front() == '.' || s.front() == ',')) {
                    std::size_t n = 1;
                    while (n < s.size() && s[n] >= '0' && s[n] <= '9') ++n;
                    if (n == 1) return std::nullopt;
                    std::string digits = "0." + std::string(s.substr(1, n - 1));
                    frac = std::stod(digits);
                    s.remove_prefix(n);
                }
            }
        }
    }
    int offset_min = 0;
    if (!s.empty()) {
        if (s == "Z" || s == "z") {
            s = {};
        } else if (s.front() == '+' || s.front() == '-') {
            const int sign = s.front() == '-' ? -1 : 1;
            s.remove_prefix(1);
            int oh = 0, om = 0;
            if (!read_int(s, 2, oh)) return std::nullopt;
            if (!s.empty()) {
                expect(s, ':');
                if (!read_int(s, 2, om)) return std::nullopt;
            }
            offset_min = sign * (oh * 60 + om);
        }
        if (!s.empty()) return std::nullopt;
    }
    if (mo < 1 || mo > 12 || h > 23 || mi > 59 || sec > 60) return std::nullopt;
    const std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{static_cast<unsigned>(mo)},
                                          std::chrono::day{static_cast<unsigned>(d)}};
    if (!ymd.ok()) return std::nullopt;
    const auto days = std::chrono::sys_days{ymd}.time_since_epoch().count();
    return static_cast<double>(days) * 86400.0 + h * 3600.0 + mi * 60.0 + sec + frac - offset_min * 60.0;
}

std::string format_hour(std::int64_t hour_index) {
    const std::int64_t day = hour_index >= 0 ? hour_index / 24 : -((-hour_index + 23) / 24);
    const int hour = static_cast<int>(hour_index - day * 24);
    const std::chrono::year_month_day ymd{std::chrono::sys_days{std::chrono::days{day}}};
    char buf[32];
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02d:00:00Z", static_cast<int>(ymd.year()),
                  static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()), hour);
    return buf;
}

TemperatureLog read_temperature_csv(std::istream& in) {
    TemperatureLog log;
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        const std::string_view row = trim(line);
        const bool was_first = first;
        first = false;
        if (row.empty()) continue;
        const auto comma = row.find(',');
        std::optional<double> ts;
        double value = 0.0;
        bool ok = false;
        if (comma != std::string_view::npos) {
            ts = parse_iso8601(row.substr(0, comma));
            const std::string_view v = trim(row.substr(comma + 1));
            const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), value);
            ok = ts && ec == std::errc() && p == v.data() + v.size() && std::isfinite(value);
        }
        if (!ok) {
            // A header is any unparseable first row whose first field is not a date.
            if (was_first && !(comma != std::string_view::npos && parse_iso8601(row.substr(0, comma)))) {
                const std::string_view head = row.substr(0, comma);
                if (!head.empty() && std::isalpha(static_cast<unsigned char>(head.front()))) continue;
            }
            ++log.n_skipped;
            continue;
        }
        log.samples.push_back({*ts, value});
    }
    std::stable_sort(log.samples.begin(), log.samples.end(),
                     [](const auto& a, const auto& b) { return a.timestamp < b.timestamp; });
    const auto last = std::unique(log.samples.begin(), log.samples.end(),
                                  [](const auto& a, const auto& b) { return a.timestamp == b.timestamp; });
    log.n_skipped += static_cast<std::size_t>(log.samples.end() - last);
    log.samples.erase(last, log.samples.end());
    return log;
}

std::vector<HourlyMean> resample_hourly(const std::vector<TemperatureSample>& samples) {
    std::map<std::int64_t, std::pair<double, std::size_t>> acc;
    for (const auto& s : samples) {
        auto& [sum, n] = acc[static_cast<std::int64_t>(std::floor(s.timestamp / 3600.0))];
        sum += s.celsius;
        ++n;
    }
    std::vector<HourlyMean> out;
    out.reserve(acc.size());
    for (const auto& [hour, v] : acc) out.push_back({hour, v.first / static_cast<double>(v.second), v.second});
    return out;
}

TemperatureReport temperature_analysis(const TemperatureLog& pole, const TemperatureLog* weather) {
    if (pole.samples.empty()) throw DataError("temperature log has no valid rows");
    TemperatureReport r;
    r.n_samples = pole.samples.size();
    r.n_skipped = pole.n_skipped;
    r.max = -std::numeric_limits<double>::infinity();
    r.min = std::numeric_limits<double>::infinity();
    double sum = 0.0;
    for (const auto& s : pole.samples) {
        r.max = std::max(r.max, s.celsius);
        r.min = std::min(r.min, s.celsius);
        sum += s.celsius;
    }
    r.mean = sum / static_cast<double>(r.n_samples);
    r.hourly = resample_hourly(pole.samples);
    if (weather) {
        r.weather_skipped = weather->n_skipped;
        const auto w = resample_hourly(weather->samples);
        std::size_t j = 0;
        for (const auto& h : r.hourly) {
            while (j < w.size() && w[j].hour < h.hour) ++j;
            if (j < w.size() && w[j].hour == h.hour) r.difference.push_back({h.hour, h.mean, w[j].mean, h.mean - w[j].mean});
        }
    }
    return r;
}

TemperatureReport temperature_analysis(std::istream& pole_csv, std::istream* weather_csv) {
    const TemperatureLog pole = read_temperature_csv(pole_csv);
    if (!weather_csv) return temperature_analysis(pole);
    const TemperatureLog weather = read_temperature_csv(*weather_csv);
    return temperature_analysis(pole, &weather);
}

json TemperatureReport::summary_json() const {
    json j{{"report", "temperature"}, {"n_samples", n_samples}, {"n_skipped", n_skipped}, {"max", max},
           {"min", min},              {"mean", mean},           {"n_hours", hourly.size()}};
    if (weather_skipped) {
        j["weather_skipped"] = *weather_skipped;
        j["n_difference_hours"] = difference.size();
    }
    return j;
}

void TemperatureReport::write_ndjson(std::ostream& out) const {
    out << summary_json().dump() << '\n';
    for (const auto& h : hourly)
        out << json{{"report", "hourly_mean"}, {"hour", format_hour(h.hour)}, {"mean", h.mean}, {"count", h.count}}.dump()
            << '\n';
    for (const auto& d : difference)
        out << json{{"report", "hourly_difference"},
                    {"hour", format_hour(d.hour)},
                    {"pole", d.pole},
                    {"weather", d.weather},
                    {"difference", d.difference}}
                   .dump()
            << '\n';
}

}  // namespace lidarcount::eval
