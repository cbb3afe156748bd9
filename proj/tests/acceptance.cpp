// Acceptance suite: one PASS/FAIL line per criterion.

#include "lidarcount/cli.hpp"
#include "lidarcount/clustering.hpp"
#include "lidarcount/evaluation.hpp"
#include "lidarcount/nn.hpp"
#include "lidarcount/pipeline.hpp"
#include "lidarcount/projection.hpp"
#include "lidarcount/quantization.hpp"
#include "lidarcount/random.hpp"

#include "oracles.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

using namespace lidarcount;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

int failures = 0;

void report(int id, bool pass, const std::string& title, const std::string& detail) {
    if (!pass) ++failures;
    std::printf("criterion %2d: %s  %s (%s)\n", id, pass ? "PASS" : "FAIL", title.c_str(), detail.c_str());
    std::fflush(stdout);
}

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

PointMatrix uniform_points(std::mt19937_64& rng, int n, double span) {
    std::uniform_real_distribution<double> u(0.0, span);
    PointMatrix p(n, 3);
    for (Eigen::Index k = 0; k < p.size(); ++k) p.data()[k] = u(rng);
    return p;
}

// Mixture of Gaussian blobs and uniform background.
PointMatrix clustered_points(std::mt19937_64& rng, int n) {
    std::uniform_int_distribution<int> nb(1, 5);
    std::uniform_real_distribution<double> u(0.0, 4.0), s(0.05, 0.3);
    const int blobs = nb(rng);
    std::vector<Point3> centers;
    std::vector<double> sigmas;
    for (int b = 0; b < blobs; ++b) {
        centers.emplace_back(u(rng), u(rng), u(rng));
        sigmas.push_back(s(rng));
    }
    std::uniform_int_distribution<int> pick(0, blobs);
    std::normal_distribution<double> g(0.0, 1.0);
    PointMatrix p(n, 3);
    for (int i = 0; i < n; ++i) {
        const int b = pick(rng);
        if (b == blobs) {
            p.row(i) << u(rng), u(rng), u(rng);
        } else {
            p.row(i) = (centers[b] + sigmas[b] * Point3(g(rng), g(rng), g(rng))).transpose();
        }
    }
    return p;
}

void criterion_dbscan() {
    std::mt19937_64 rng(101);
    std::uniform_int_distribution<int> nd(1, 200), md(1, 8);
    std::uniform_real_distribution<double> ed(0.05, 0.6);
    int agree = 0;
    double lib_seconds = 0.0;
    const auto t0 = Clock::now();
    for (int t = 0; t < 100; ++t) {
        const int n = nd(rng);
        const auto p = (t % 2) ? clustered_points(rng, n) : uniform_points(rng, n, 3.0);
        const double eps = ed(rng);
        const int min_pts = md(rng);
        const auto t1 = Clock::now();
        const auto a = dbscan(p, {eps, min_pts});
        lib_seconds += seconds_since(t1);
        agree += oracle::check_dbscan(p, eps, min_pts, a.labels, a.n_clusters).empty();
    }
    const double total = seconds_since(t0);
    report(1, agree == 100 && total < 5.0, "DBSCAN matches brute-force oracle",
           fmt("%d/100 instances agree, %.3f s total, %.3f s in dbscan", agree, total, lib_seconds));
}

void criterion_silhouette() {
    std::mt19937_64 rng(202);
    double worst = 0.0;
    for (int t = 0; t < 20; ++t) {
        const int n = 20 + 7 * t;
        const auto p = uniform_points(rng, n, 5.0);
        const int k = 2 + t % 5;
        std::uniform_int_distribution<int> lab(-1, k - 1);
        ClusterAssignment a;
        a.n_clusters = k;
        for (int i = 0; i < n; ++i) a.labels.push_back(i < k ? i : lab(rng));  // every id used
        worst = std::max(worst, std::abs(silhouette(p, a) - oracle::silhouette_direct(p, a.labels)));
    }
    bool single_raises = false;
    try {
        const auto p = uniform_points(rng, 10, 1.0);
        silhouette(p, ClusterAssignment{std::vector<int>(10, 0), 1});
    } catch (const PreconditionError&) {
        single_raises = true;
    }
    report(2, worst <= 1e-9 && single_raises, "silhouette equals direct formula",
           fmt("max |diff| %.2e over 20 labelings, single-cluster error %s", worst, single_raises ? "raised" : "missing"));
}

void criterion_elbow() {
    std::mt19937_64 rng(303);
    std::uniform_int_distribution<int> nd(60, 400);
    std::uniform_real_distribution<double> hi(0.5, 5.0), lo(0.02, 0.2), drop(0.0, 0.5), sc(0.01, 100.0);
    int within = 0, equivariant = 0, worst_offset = 0;
    for (int t = 0; t < 50; ++t) {
        const int n = nd(rng);
        std::uniform_int_distribution<int> kd(4, n / 3);
        const int knee = kd(rng);
        const double h = hi(rng), l = lo(rng), tail = l * (1.0 - drop(rng));
        KDistanceCurve c;
        c.k = 4;
        c.distances.resize(n);
        for (int i = 0; i < n; ++i)
            c.distances(i) = i <= knee ? h + (l - h) * i / knee : l + (tail - l) * (i - knee) / (n - 1.0 - knee);
        const auto e = find_elbow(c);
        const int off = static_cast<int>(std::abs(e.index - knee));
        worst_offset = std::max(worst_offset, off);
        within += off <= 2;
        const double s = sc(rng);
        KDistanceCurve scaled = c;
        scaled.distances *= s;
        const auto es = find_elbow(scaled);
        equivariant += es.index == e.index && es.epsilon == s * e.epsilon;
    }
    report(3, within == 50 && equivariant == 50, "elbow within 2 of constructed knee",
           fmt("%d/50 within +-2 (worst %d), %d/50 scale-equivariant", within, worst_offset, equivariant));
}

void criterion_algorithm1() {
    std::mt19937_64 rng(404);
    GroundPool pool{uniform_points(rng, 1000, 3.0)};
    std::uniform_int_distribution<int> nd(1, 324);
    bool ok = next_perfect_square(314) == 324;
    int enlarge_ok = 0, views_ok = 0;
    for (int t = 0; t < 50; ++t) {
        const auto c = uniform_points(rng, nd(rng), 1.0);
        const auto e = enlarge(c, 324, pool, static_cast<std::uint64_t>(t));
        enlarge_ok += e.rows() == 324 && e.topRows(c.rows()) == c;
        const auto img = project_views(e);
        bool same = img.values.size() == kImageSide * kImageSide * kImageChannels;
        const int cols[3][2] = {{0, 1}, {1, 2}, {0, 2}};
        for (int v = 0; v < 3; ++v) {
            std::multiset<std::pair<double, double>> want, got;
            for (Eigen::Index i = 0; i < e.rows(); ++i) want.insert({e(i, cols[v][0]), e(i, cols[v][1])});
            for (int r = 0; r < kImageSide; ++r)
                for (int col = 0; col < kImageSide; ++col) got.insert({img.at(r, col, 2 * v), img.at(r, col, 2 * v + 1)});
            same = same && want == got;
        }
        views_ok += same;
    }
    ok = ok && enlarge_ok == 50 && views_ok == 50;
    report(4, ok, "enlarge and three-view projection",
           fmt("next_perfect_square(314)=%lld, enlarge %d/50, views %d/50", static_cast<long long>(next_perfect_square(314)),
               enlarge_ok, views_ok));
}

void criterion_architecture() {
    const auto cnn = nn::count_params(nn::build_cnn2d());
    std::vector<int> widths;
    for (const auto& l : nn::build_autoencoder().layers)
        if (l.kind == nn::LayerKind::Dense) widths.push_back(l.units);
    const bool ok = cnn == 62114 && widths == std::vector<int>{104, 72, 124, 8, 76, 84, 76, 94};
    std::string w;
    for (int x : widths) w += (w.empty() ? "" : ",") + std::to_string(x);
    report(5, ok, "architecture fidelity", fmt("CNN2d params %lld, AE widths [%s]", static_cast<long long>(cnn), w.c_str()));
}

void criterion_gradients() {
    using nn::LayerSpec;
    const std::vector<nn::ModelSpec> nets{
        {"dense_relu", nn::Shape{1, 1, 5}, {LayerSpec::dense(7), LayerSpec::relu(), LayerSpec::dense(3)}},
        {"conv_pool",
         nn::Shape{6, 6, 2},
         {LayerSpec::conv2d(3), LayerSpec::relu(), LayerSpec::maxpool(2), LayerSpec::flatten(), LayerSpec::dense(2),
          LayerSpec::softmax()}},
        {"conv_bn",
         nn::Shape{5, 5, 2},
         {LayerSpec::conv2d(3), LayerSpec::batchnorm(), LayerSpec::relu(), LayerSpec::flatten(), LayerSpec::dense(2),
          LayerSpec::softmax()}},
        {"dense_bn", nn::Shape{1, 1, 4}, {LayerSpec::dense(6), LayerSpec::batchnorm(), LayerSpec::dense(3)}},
    };
    const auto t0 = Clock::now();
    double worst = 0.0;
    int skipped_total = 0;
    std::string per_net;
    for (const auto& spec : nets) {
        double net_worst = 0.0;
        for (std::uint64_t seed = 0; seed < 10; ++seed) {
            int skipped = 0;
            net_worst = std::max(net_worst, nn::gradient_check(spec, seed, &skipped));
            skipped_total += skipped;
        }
        worst = std::max(worst, net_worst);
        per_net += fmt("%s %.1e ", spec.name.c_str(), net_worst);
    }
    const double t = seconds_since(t0);
    report(6, worst < 1e-4 && t < 60.0, "gradient checks",
           fmt("%smax %.2e, %d kink-straddling params skipped, %.2f s", per_net.c_str(), worst, skipped_total, t));
}

struct Trained {
    fs::path dir;
    PipelineConfig cfg;
    sim::LabeledClusters train, test;
    GroundPool pool;
    nn::TrainedModel ae, cnn;
    quant::QuantizedModel qae, qcnn;
    bool ok = false;
};

sim::LabeledClusters read_clusters(const fs::path& p) {
    std::ifstream in(p);
    return sim::read_clusters_ndjson(in);
}

GroundPool read_pool(const fs::path& p) {
    std::ifstream in(p);
    std::string line;
    std::getline(in, line);
    return GroundPool{frame_from_ndjson(line).points};
}

int run_cli(const std::vector<std::string>& args) {
    std::istringstream in;
    std::ostringstream out, err;
    const int code = run_command(args, in, out, err);
    if (code != 0) std::fprintf(stderr, "command failed (%d): %s\n", code, err.str().c_str());
    return code;
}

void criterion_learning(Trained& t) {
    const auto t0 = Clock::now();
    t.dir = fs::temp_directory_path() / "lidarcount_acceptance";
    fs::remove_all(t.dir);
    fs::create_directories(t.dir);
    // 500 + 500 clusters, seed 7, 80/20 split; 100 counting scenes for criterion 10.
    if (run_cli({"simulate", "--out", (t.dir / "data").string(), "--seed", "7", "--set", "simulate.n_human=500", "--set",
                 "simulate.n_clutter=500", "--set", "simulate.count_scenes=100"}) != 0) {
        report(7, false, "end-to-end learning", "simulate failed");
        return;
    }
    t.train = read_clusters(t.dir / "data" / "train.ndjson");
    t.test = read_clusters(t.dir / "data" / "test.ndjson");
    t.pool = read_pool(t.dir / "data" / "pool.ndjson");

    t.ae = train_autoencoder(t.train, t.cfg);
    t.cnn = train_cnn2d(t.train, t.pool, t.cfg);
    const auto seed = t.cfg.count_seed;
    const auto mae = eval::compute_metrics(predict_labels(AnyModel(t.ae), t.test, seed), t.test.labels);
    const auto mcnn = eval::compute_metrics(predict_labels(AnyModel(t.cnn), t.test, seed), t.test.labels);
    const double secs = seconds_since(t0);
    t.ok = true;
    const bool pass = mcnn.accuracy >= 0.90 && mae.f1 >= 0.75 && mae.recall >= 0.90 && mcnn.accuracy >= mae.accuracy &&
                      secs < 900.0;
    report(7, pass, "end-to-end learning on 500+500 clusters",
           fmt("train %zu / test %zu; CNN2d acc %.3f; AE acc %.3f F1 %.3f recall %.3f; %.0f s", t.train.size(),
               t.test.size(), mcnn.accuracy, mae.accuracy, mae.f1, mae.recall, secs));
}

void criterion_quantization(Trained& t) {
    std::mt19937_64 rng(808);
    std::uniform_real_distribution<double> u(-50.0, 50.0);
    double worst_excess = -1.0;
    for (int trial = 0; trial < 100; ++trial) {
        RowMatrix m(16, 16);
        const double a = u(rng), b = u(rng);
        for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = std::min(a, b) + (std::abs(a - b) + 1e-3) * (u(rng) + 50.0) / 100.0;
        const auto q = quant::quantize_tensor(m, quant::Range{m.minCoeff(), m.maxCoeff()});
        const double err = (quant::dequantize(q) - m).cwiseAbs().maxCoeff();
        worst_excess = std::max(worst_excess, err - (q.params.scale / 2 + 1e-12));
    }
    if (!t.ok) {
        report(8, false, "quantization", "no trained models");
        return;
    }
    const auto calib = [&](const nn::TrainedModel& m) {
        const RowMatrix x = model_inputs(AnyModel(m), t.train, derive_seed(t.cfg.train.seed, 0xCA1));
        return RowMatrix(x.topRows(std::min<Eigen::Index>(x.rows(), t.cfg.representative)));
    };
    t.qae = quant::quantize_model(t.ae, calib(t.ae));
    t.qcnn = quant::quantize_model(t.cnn, calib(t.cnn));

    const auto seed = t.cfg.count_seed;
    const auto fl = predict_labels(AnyModel(t.cnn), t.test, seed);
    const auto ql = predict_labels(AnyModel(t.qcnn), t.test, seed);
    const double acc_f = eval::compute_metrics(fl, t.test.labels).accuracy;
    const double acc_q = eval::compute_metrics(ql, t.test.labels).accuracy;
    int agree = 0;
    for (std::size_t i = 0; i < fl.size(); ++i) agree += fl[i] == ql[i];
    const double agreement = static_cast<double>(agree) / static_cast<double>(fl.size());
    const auto ae_f = predict_labels(AnyModel(t.ae), t.test, seed);
    const auto ae_q = predict_labels(AnyModel(t.qae), t.test, seed);
    int ae_agree = 0;
    for (std::size_t i = 0; i < ae_f.size(); ++i) ae_agree += ae_f[i] == ae_q[i];

    const double ratio_ae = static_cast<double>(quant::model_size(t.qae)) / static_cast<double>(quant::model_size(t.ae));
    const double ratio_cnn = static_cast<double>(quant::model_size(t.qcnn)) / static_cast<double>(quant::model_size(t.cnn));
    const bool pass = worst_excess <= 0.0 && std::abs(acc_f - acc_q) <= 0.02 && agreement >= 0.98 && ratio_ae <= 0.30 &&
                      ratio_cnn <= 0.30;
    report(8, pass, "8-bit quantization",
           fmt("round-trip excess %.1e; CNN2d acc %.3f -> %.3f, argmax agreement %.3f; AE label agreement %.3f; "
               "payload AE %.1f%% CNN2d %.1f%%",
               worst_excess, acc_f, acc_q, agreement, static_cast<double>(ae_agree) / ae_f.size(), 100 * ratio_ae,
               100 * ratio_cnn));
}

void criterion_latency(Trained& t) {
    if (!t.ok) {
        report(9, false, "latency", "no trained models");
        return;
    }
    const auto seed = t.cfg.count_seed;
    std::vector<eval::LatencyReport> reps;
    const auto bench = [&](const AnyModel& m) {
        const RowMatrix x = model_inputs(m, t.test, seed);
        return std::visit([&](const auto& mm) { return eval::latency_bench(mm, x, t.cfg.bench_warmup, t.cfg.bench_repetitions); }, m);
    };
    reps.push_back(bench(AnyModel(t.ae)));
    reps.push_back(bench(AnyModel(t.cnn)));
    reps.push_back(bench(AnyModel(t.qae)));
    reps.push_back(bench(AnyModel(t.qcnn)));
    const char* names[] = {"AE", "CNN2d", "qAE", "qCNN2d"};
    bool pass = true;
    std::string detail;
    for (std::size_t i = 0; i < reps.size(); ++i) {
        const auto& r = reps[i];
        const auto j = r.to_json();
        const bool well_formed = r.p50_ms <= r.p95_ms && r.p95_ms <= r.max_ms && r.repetitions == t.cfg.bench_repetitions &&
                                 j.contains("p95_ms") && j.contains("pass") && j["budget_ms"] == 16.0;
        pass = pass && well_formed && r.pass && r.p95_ms < 16.0;
        detail += fmt("%s p95 %.3f ms%s", names[i], r.p95_ms, i + 1 < reps.size() ? ", " : "");
    }
    report(9, pass, "real-time budget (p95 < 16 ms)", detail);
}

std::map<std::int64_t, int> truth_counts(const fs::path& labels_csv) {
    std::map<std::int64_t, int> humans;
    std::ifstream in(labels_csv);
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
        const auto a = line.find(',');
        const auto b = line.rfind(',');
        const auto id = std::stoll(line.substr(0, a));
        humans[id] += line.substr(b + 1) == "human";
    }
    return humans;
}

void criterion_counting(Trained& t) {
    if (!t.ok) {
        report(10, false, "counting", "no trained models");
        return;
    }
    std::ifstream in(t.dir / "data" / "scenes.ndjson");
    const auto frames = parse_frames(in, FrameFormat::Ndjson);
    const auto truth = truth_counts(t.dir / "data" / "labels.csv");
    const PeopleCounter cnn(AnyModel(t.cnn), t.cfg);
    const PeopleCounter ae(AnyModel(t.ae), t.cfg);
    int ok_cnn = 0, ok_ae = 0;
    for (const auto& f : frames) {
        const int want = truth.count(f.frame_id) ? truth.at(f.frame_id) : 0;
        ok_cnn += cnn.count(f).n_humans == want;
        ok_ae += ae.count(f).n_humans == want;
    }
    const double n = static_cast<double>(frames.size());
    const bool pass = frames.size() == 100 && ok_cnn / n >= 0.95 && ok_ae / n >= 0.85;
    report(10, pass, "people counting on 100 scenes",
           fmt("CNN2d %d/%zu exact (need 95%%), AE %d/%zu exact (need 85%%)", ok_cnn, frames.size(), ok_ae, frames.size()));
}

void criterion_temperature() {
    std::mt19937_64 rng(1111);
    std::uniform_int_distribution<int> gap(30, 900), quarter(80, 232);  // 20.00 .. 58.00 in 0.25 steps
    const std::int64_t start = 1'700'000'000;
    std::ostringstream csv;
    csv << "timestamp,celsius\n";
    std::map<std::int64_t, std::pair<double, int>> groups;
    double mx = -INFINITY, mn = INFINITY, sum = 0.0;
    int n = 0;
    for (std::int64_t ts = start; ts < start + 48 * 3600; ts += gap(rng)) {
        const double c = 0.25 * quarter(rng);
        const std::time_t tt = ts;
        char stamp[32];
        std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&tt));
        csv << stamp << ',' << c << '\n';
        auto& g = groups[ts / 3600];
        g.first += c;
        ++g.second;
        mx = std::max(mx, c);
        mn = std::min(mn, c);
        sum += c;
        ++n;
    }
    std::istringstream in(csv.str());
    const auto r = eval::temperature_analysis(in);
    bool hourly_exact = r.hourly.size() == groups.size();
    double conserved = 0.0;
    std::size_t i = 0;
    for (const auto& [hour, g] : groups) {
        if (i >= r.hourly.size()) break;
        const auto& h = r.hourly[i++];
        hourly_exact = hourly_exact && h.hour == hour && h.count == static_cast<std::size_t>(g.second) && h.mean == g.first / g.second;
    }
    for (const auto& h : r.hourly) conserved += h.mean * static_cast<double>(h.count);
    const bool stats = r.max == mx && r.min == mn && std::abs(r.mean - sum / n) <= 1e-12 && r.n_samples == static_cast<std::size_t>(n);
    const double residual = std::abs(conserved - sum);
    report(11, hourly_exact && stats && residual <= 1e-9, "temperature analysis on a 48-hour log",
           fmt("%d samples, %zu hours, hourly means %s, max %.2f min %.2f mean %.4f, conservation residual %.1e", n,
               r.hourly.size(), hourly_exact ? "exact" : "MISMATCH", r.max, r.min, r.mean, residual));
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void criterion_determinism() {
    const auto root = fs::temp_directory_path() / "lidarcount_determinism";
    fs::remove_all(root);
    fs::create_directories(root);
    {
        std::ofstream(root / "small.ini") << "[simulate]\nn_human = 40\nn_clutter = 40\npool_scenes = 4\ncount_scenes = 8\n"
                                             "[train]\nepochs = 3\n[quantize]\nrepresentative = 16\n";
    }
    const std::string cfg = (root / "small.ini").string();
    bool ran = true;
    for (const char* run : {"a", "b"}) {
        const auto d = root / run;
        const std::string ds = d.string();
        ran = ran && run_cli({"simulate", "--config", cfg, "--out", ds, "--seed", "11"}) == 0;
        ran = ran && run_cli({"train", "--config", cfg, "--arch", "autoencoder", "--data", ds, "--out", (d / "ae.model").string()}) == 0;
        ran = ran && run_cli({"train", "--config", cfg, "--arch", "cnn2d", "--data", ds, "--out", (d / "cnn.model").string()}) == 0;
        ran = ran && run_cli({"quantize", "--config", cfg, "--model", (d / "ae.model").string(), "--data", ds, "--out",
                              (d / "ae.q").string()}) == 0;
        ran = ran && run_cli({"quantize", "--config", cfg, "--model", (d / "cnn.model").string(), "--data", ds, "--out",
                              (d / "cnn.q").string()}) == 0;
        ran = ran && run_cli({"featurize", "--config", cfg, "--data", ds, "--out", (d / "features.csv").string()}) == 0;
        ran = ran && run_cli({"evaluate", "--config", cfg, "--model", (d / "cnn.q").string(), "--data", ds, "--out",
                              (d / "eval.json").string()}) == 0;
        ran = ran && run_cli({"count", "--config", cfg, "--model", (d / "cnn.model").string(), "--frames",
                              (d / "scenes.ndjson").string(), "--out", (d / "count.ndjson").string()}) == 0;
    }
    const char* artifacts[] = {"train.ndjson", "test.ndjson", "pool.ndjson", "scenes.ndjson", "labels.csv", "ae.model",
                               "cnn.model", "ae.q", "cnn.q", "features.csv", "eval.json", "count.ndjson"};
    int same = 0, total = 0;
    std::string differing;
    for (const char* a : artifacts) {
        ++total;
        const auto x = slurp(root / "a" / a);
        if (!x.empty() && x == slurp(root / "b" / a)) {
            ++same;
        } else {
            differing += std::string(" ") + a;
        }
    }
    fs::remove_all(root);
    report(12, ran && same == total, "byte-identical artifacts on repeated runs",
           fmt("%d/%d artifacts identical%s%s", same, total, differing.empty() ? "" : "; differing:", differing.c_str()));
}

}  // namespace

int main() {
    const auto t0 = Clock::now();
    criterion_dbscan();
    criterion_silhouette();
    criterion_elbow();
    criterion_algorithm1();
    criterion_architecture();
    criterion_gradients();
    Trained t;
    criterion_learning(t);
    criterion_quantization(t);
    criterion_latency(t);
    criterion_counting(t);
    criterion_temperature();
    criterion_determinism();
    if (!t.dir.empty()) fs::remove_all(t.dir);
    std::printf("%d of 12 criteria failed, %.0f s\n", failures, seconds_since(t0));
    return failures == 0 ? 0 : 1;
}
