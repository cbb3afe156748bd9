#include "lidarcount/cli.hpp"

#include "lidarcount/evaluation.hpp"
#include "lidarcount/pipeline.hpp"
#include "lidarcount/random.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>

namespace lidarcount {

namespace {

constexpr std::uint64_t kSplitStream = 0x5917;
constexpr std::uint64_t kPoolStream = 0x9001;
constexpr std::uint64_t kSceneStream = 0x5CE;
constexpr std::uint64_t kCalibrationStream = 0xCA1;

// Output sink: "-" is the command's output stream, anything else a file.
class Sink {
public:
    Sink(const std::string& path, std::ostream& fallback) {
        if (path == "-") {
            os_ = &fallback;
            return;
        }
        file_ = std::make_unique<std::ofstream>(path, std::ios::binary);
        if (!*file_) throw DataError("cannot open '" + path + "' for writing");
        os_ = file_.get();
    }
    std::ostream& operator*() { return *os_; }
    void close() {
        os_->flush();
        if (!*os_) throw DataError("write failed");
    }

private:
    std::unique_ptr<std::ofstream> file_;
    std::ostream* os_ = nullptr;
};

std::ifstream open_input(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open '" + path + "'");
    return in;
}

sim::LabeledClusters read_clusters_file(const std::string& path) {
    auto in = open_input(path);
    try {
        return sim::read_clusters_ndjson(in);
    } catch (const DataError& e) {
        throw DataError(path + ": " + e.what());
    }
}

std::vector<Frame> read_frames_file(const std::string& path, FrameFormat fmt) {
    auto in = open_input(path);
    try {
        return parse_frames(in, fmt);
    } catch (const DataError& e) {
        throw DataError(path + ": " + e.what());
    }
}

GroundPool read_pool_file(const std::string& path) {
    const auto frames = read_frames_file(path, FrameFormat::Ndjson);
    GroundPool pool;
    Eigen::Index rows = 0;
    for (const auto& f : frames) rows += f.size();
    pool.points.resize(rows, 3);
    rows = 0;
    for (const auto& f : frames) {
        pool.points.middleRows(rows, f.size()) = f.points;
        rows += f.size();
    }
    if (rows == 0) throw DataError(path + ": ground pool is empty");
    return pool;
}

void write_pool(std::ostream& out, const GroundPool& pool) {
    Frame f;
    f.points = pool.points;
    out << frame_to_ndjson(f) << '\n';
}

// --config / --set shared by every subcommand, applied in that order.
struct ConfigOptions {
    std::string path;
    std::vector<std::string> overrides;

    void attach(CLI::App* cmd) {
        cmd->add_option("--config", path, "INI config file")->check(CLI::ExistingFile);
        cmd->add_option("--set", overrides, "override, section.key=value (repeatable)");
    }

    PipelineConfig load() const {
        PipelineConfig cfg = path.empty() ? PipelineConfig{} : load_config_file(path);
        for (const auto& o : overrides) {
            const auto eq = o.find('=');
            if (eq == std::string::npos) throw UsageError("--set expects section.key=value, got '" + o + "'");
            cfg.set(o.substr(0, eq), o.substr(eq + 1));
        }
        cfg.validate();
        return cfg;
    }
};

int simulate(const PipelineConfig& cfg, const std::string& out_dir, std::ostream& log) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw DataError("cannot create '" + out_dir + "': " + ec.message());
    const auto sc = cfg.sim_config();
    const std::uint64_t seed = cfg.simulate_seed;

    const auto data = sim::gen_labeled_dataset(cfg.n_human, cfg.n_clutter, seed, sc);
    const auto [train, test] = sim::split_dataset(data, cfg.test_fraction, derive_seed(seed, kSplitStream));
    const auto pool = sim::gen_ground_pool(cfg.pool_scenes, derive_seed(seed, kPoolStream), sc);

    std::vector<Frame> scenes;
    std::vector<std::int64_t> ids;
    std::vector<std::vector<sim::ObjectKind>> kinds;
    const std::uint64_t scene_seed = derive_seed(seed, kSceneStream);
    for (int i = 0; i < cfg.count_scenes; ++i) {
        const int humans = i % (cfg.max_scene_humans + 1);
        const int clutter = (i / (cfg.max_scene_humans + 1)) % (cfg.max_scene_clutter + 1);
        auto scene = sim::gen_count_scene(humans, clutter, derive_seed(scene_seed, static_cast<std::uint64_t>(i)), sc, i);
        ids.push_back(i);
        std::vector<sim::ObjectKind> k;
        for (const auto& o : scene.objects) k.push_back(o.kind);
        kinds.push_back(std::move(k));
        scenes.push_back(std::move(scene.scan.frame));
    }

    const fs::path dir(out_dir);
    Sink tr((dir / "train.ndjson").string(), log), te((dir / "test.ndjson").string(), log),
        po((dir / "pool.ndjson").string(), log), sn((dir / "scenes.ndjson").string(), log),
        lb((dir / "labels.csv").string(), log);
    sim::write_clusters_ndjson(*tr, train);
    sim::write_clusters_ndjson(*te, test);
    write_pool(*po, pool);
    write_frames(*sn, scenes, FrameFormat::Ndjson);
    sim::write_labels_csv(*lb, ids, kinds);
    for (auto* s : {&tr, &te, &po, &sn, &lb}) s->close();
    return 0;
}

const std::map<std::string, FrameFormat> kFormats{{"csv", FrameFormat::Csv}, {"ndjson", FrameFormat::Ndjson}};

// Per-frame reports followed by one summary line.
void stream_count(std::istream& src, FrameFormat fmt, const PeopleCounter& counter, std::ostream& dst) {
    std::int64_t frames = 0, humans = 0;
    auto emit = [&](const Frame& f) {
        const CountReport r = counter.count(f);
        ++frames;
        humans += r.n_humans;
        dst << r.to_json().dump() << '\n';
    };
    if (fmt == FrameFormat::Ndjson) {
        NdjsonFrameReader reader(src);
        while (auto f = reader.next()) emit(*f);
    } else {
        for (const auto& f : parse_frames(src, fmt)) emit(f);
    }
    dst << nlohmann::json{{"report", "count_summary"}, {"n_frames", frames}, {"n_humans", humans}}.dump() << '\n';
}

// A `simulate` output directory stands for the named file inside it.
std::string resolve_data(const std::string& path, const char* file) {
    namespace fs = std::filesystem;
    return fs::is_directory(path) ? (fs::path(path) / file).string() : path;
}

// Explicit --pool, else pool.ndjson next to the data.
std::string resolve_pool(const std::string& pool, const std::string& data) {
    namespace fs = std::filesystem;
    if (!pool.empty()) return pool;
    const fs::path dir = fs::is_directory(data) ? fs::path(data) : fs::path(data).parent_path();
    const fs::path guess = dir / "pool.ndjson";
    return fs::exists(guess) ? guess.string() : std::string{};
}

}  // namespace

int run_command(const std::vector<std::string>& args, std::istream& in, std::ostream& out, std::ostream& err) {
    CLI::App app{"LiDAR people counting: simulation, clustering, classification and counting", "lidarcount"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all", "show help for every subcommand");

    ConfigOptions co;
    std::string out_path = "-", data_path, model_path, pool_path, frames_path = "-", format = "ndjson",
                arch, log_path, weather_path;
    std::optional<std::uint64_t> seed;
    bool images = false;

    auto* c_sim = app.add_subcommand("simulate", "generate labeled clusters, ground pool and counting scenes");
    c_sim->add_option("--out", out_path, "output directory")->required();
    c_sim->add_option("--seed", seed, "simulation seed");

    auto* c_pre = app.add_subcommand("preprocess", "ground removal and ROI crop");
    auto* c_clu = app.add_subcommand("cluster", "adaptive-epsilon DBSCAN per frame");
    for (auto* c : {c_pre, c_clu}) {
        c->add_option("--frames", frames_path, "input frames, - for stdin");
        c->add_option("--format", format, "frame format")->check(CLI::IsMember({"csv", "ndjson"}));
        c->add_option("--out", out_path, "output file, - for stdout");
    }

    auto* c_feat = app.add_subcommand("featurize", "slice features (CSV) or projection images (NDJSON)");
    c_feat->add_option("--data", data_path, "labeled clusters NDJSON or simulate directory")->required();
    c_feat->add_option("--out", out_path, "output file, - for stdout");
    c_feat->add_flag("--images", images, "write 18x18x6 projection images instead of features");
    c_feat->add_option("--pool", pool_path, "ground pool NDJSON (images)");
    c_feat->add_option("--seed", seed, "padding seed (images)");

    auto* c_train = app.add_subcommand("train", "train a classifier");
    c_train->add_option("--arch", arch, "architecture")->required()->check(CLI::IsMember({"autoencoder", "cnn2d"}));
    c_train->add_option("--data", data_path, "training clusters NDJSON or simulate directory")->required();
    c_train->add_option("--pool", pool_path, "ground pool NDJSON (cnn2d)");
    c_train->add_option("--out", out_path, "model file")->required();
    c_train->add_option("--seed", seed, "training seed");

    auto* c_eval = app.add_subcommand("evaluate", "classification metrics on labeled clusters");
    auto* c_bench = app.add_subcommand("bench", "single-cluster inference latency");
    for (auto* c : {c_eval, c_bench}) {
        c->add_option("--model", model_path, "model file")->required();
        c->add_option("--data", data_path, "labeled clusters NDJSON or simulate directory (test split)")->required();
        c->add_option("--out", out_path, "report file, - for stdout");
        c->add_option("--seed", seed, "padding seed (cnn2d)");
    }

    auto* c_quant = app.add_subcommand("quantize", "post-training 8-bit quantization");
    c_quant->add_option("--model", model_path, "float model file")->required();
    c_quant->add_option("--data", data_path, "representative clusters NDJSON or simulate directory (train split)")->required();
    c_quant->add_option("--out", out_path, "quantized model file")->required();
    c_quant->add_option("--seed", seed, "padding seed of the calibration images (cnn2d)");

    auto* c_count = app.add_subcommand("count", "count people per frame");
    c_count->add_option("--model", model_path, "model file")->required();
    c_count->add_option("--frames", frames_path, "input frames, - for stdin");
    c_count->add_option("--format", format, "frame format")->check(CLI::IsMember({"csv", "ndjson"}));
    c_count->add_option("--pool", pool_path, "ground pool NDJSON overriding the model's (cnn2d)");
    c_count->add_option("--out", out_path, "report file, - for stdout");
    c_count->add_option("--seed", seed, "padding seed (cnn2d)");

    auto* c_temps = app.add_subcommand("temps", "pole temperature summary and hourly resampling");
    c_temps->add_option("--log", log_path, "temperature CSV")->required();
    c_temps->add_option("--weather", weather_path, "hourly weather CSV");
    c_temps->add_option("--out", out_path, "report file, - for stdout");

    for (auto* c : {c_sim, c_pre, c_clu, c_feat, c_train, c_eval, c_bench, c_quant, c_count, c_temps}) co.attach(c);

    std::vector<std::string> rev(args.rbegin(), args.rend());
    try {
        app.parse(rev);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? 0 : 1;
    }

    try {
        PipelineConfig cfg = co.load();
        const FrameFormat fmt = kFormats.at(format);
        auto read_frames_arg = [&]() {
            return frames_path == "-" ? parse_frames(in, fmt) : read_frames_file(frames_path, fmt);
        };

        if (c_sim->parsed()) {
            if (seed) cfg.simulate_seed = *seed;
            return simulate(cfg, out_path, err);
        }
        if (c_pre->parsed()) {
            auto frames = read_frames_arg();
            for (auto& f : frames) f = apply_roi(remove_ground(f, cfg.roi.z_min), cfg.roi);
            Sink s(out_path, out);
            write_frames(*s, frames, fmt);
            s.close();
            return 0;
        }
        if (c_clu->parsed()) {
            const auto frames = read_frames_arg();
            Sink s(out_path, out);
            for (const auto& f : frames) {
                nlohmann::json j{{"frame_id", f.frame_id}, {"n_points", f.size()}};
                if (f.size() == 0) {
                    j.update({{"epsilon", nullptr}, {"n_clusters", 0}, {"n_noise", 0}, {"silhouette", nullptr},
                              {"labels", nlohmann::json::array()}});
                } else {
                    const auto r = cluster_adaptive(f.points, cfg.clustering);
                    nlohmann::json sil = nullptr;
                    if (r.assignment.n_clusters >= 2) sil = silhouette(f.points, r.assignment);
                    j.update({{"epsilon", r.params.epsilon}, {"elbow", r.elbow.epsilon},
                              {"min_pts", r.params.min_pts}, {"n_clusters", r.assignment.n_clusters},
                              {"n_noise", r.assignment.noise_count()}, {"silhouette", sil},
                              {"labels", r.assignment.labels}});
                }
                *s << j.dump() << '\n';
            }
            s.close();
            return 0;
        }
        if (c_feat->parsed()) {
            const auto data = read_clusters_file(resolve_data(data_path, "train.ndjson"));
            Sink s(out_path, out);
            if (images) {
                const std::string pp = resolve_pool(pool_path, data_path);
                if (pp.empty()) throw UsageError("featurize --images needs --pool");
                const auto pool = read_pool_file(pp);
                ImageDataset ds;
                const RowMatrix x = image_matrix(data, pool, seed.value_or(cfg.count_seed));
                for (Eigen::Index i = 0; i < x.rows(); ++i) {
                    ProjectionImage img;
                    img.values = x.row(i).transpose();
                    ds.images.push_back(img);
                }
                ds.labels = data.labels;
                write_image_ndjson(*s, ds);
            } else {
                FeatureDataset ds;
                for (const auto& c : data.clusters) ds.features.push_back(extract_features(c, cfg.slices));
                ds.labels = data.labels;
                write_feature_csv(*s, ds);
            }
            s.close();
            return 0;
        }
        if (c_train->parsed()) {
            if (seed) cfg.train.seed = *seed;
            const auto data = read_clusters_file(resolve_data(data_path, "train.ndjson"));
            nn::TrainedModel model;
            if (arch == "autoencoder") {
                model = train_autoencoder(data, cfg);
            } else {
                const std::string pp = resolve_pool(pool_path, data_path);
                if (pp.empty()) throw UsageError("train --arch cnn2d needs --pool");
                model = train_cnn2d(data, read_pool_file(pp), cfg);
            }
            save_model_file(out_path, model);
            return 0;
        }
        if (c_eval->parsed()) {
            const AnyModel model = load_model_file(model_path);
            const auto data = read_clusters_file(resolve_data(data_path, "test.ndjson"));
            auto j = eval::compute_metrics(predict_labels(model, data, seed.value_or(cfg.count_seed)), data.labels).to_json();
            j["model"] = model_spec(model).name;
            j["quantized"] = std::holds_alternative<quant::QuantizedModel>(model);
            Sink s(out_path, out);
            *s << j.dump() << '\n';
            s.close();
            return 0;
        }
        if (c_quant->parsed()) {
            const AnyModel model = load_model_file(model_path);
            if (!std::holds_alternative<nn::TrainedModel>(model)) throw DataError("model is already quantized");
            const auto data = read_clusters_file(resolve_data(data_path, "train.ndjson"));
            const std::uint64_t s = seed.value_or(derive_seed(cfg.train.seed, kCalibrationStream));
            const RowMatrix x = model_inputs(model, data, s);
            const Eigen::Index n = std::min<Eigen::Index>(x.rows(), cfg.representative);
            if (n == 0) throw DataError("no representative samples");
            save_model_file(out_path, quant::quantize_model(std::get<nn::TrainedModel>(model), x.topRows(n)));
            return 0;
        }
        if (c_bench->parsed()) {
            const AnyModel model = load_model_file(model_path);
            const auto data = read_clusters_file(resolve_data(data_path, "test.ndjson"));
            const RowMatrix x = model_inputs(model, data, seed.value_or(cfg.count_seed));
            if (x.rows() == 0) throw DataError("no clusters to benchmark");
            const auto report = std::visit(
                [&](const auto& m) { return eval::latency_bench(m, x, cfg.bench_warmup, cfg.bench_repetitions); },
                model);
            Sink s(out_path, out);
            *s << report.to_json().dump() << '\n';
            s.close();
            return 0;
        }
        if (c_count->parsed()) {
            if (seed) cfg.count_seed = *seed;
            AnyModel model = load_model_file(model_path);
            const PeopleCounter counter = pool_path.empty()
                                              ? PeopleCounter(std::move(model), cfg)
                                              : PeopleCounter(std::move(model), cfg, read_pool_file(pool_path));
            Sink s(out_path, out);
            if (frames_path == "-") {
                stream_count(in, fmt, counter, *s);
            } else {
                auto src = open_input(frames_path);
                stream_count(src, fmt, counter, *s);
            }
            s.close();
            return 0;
        }
        if (c_temps->parsed()) {
            auto log = open_input(log_path);
            std::optional<std::ifstream> weather;
            if (!weather_path.empty()) weather = open_input(weather_path);
            const auto report = eval::temperature_analysis(log, weather ? &*weather : nullptr);
            Sink s(out_path, out);
            report.write_ndjson(*s);
            s.close();
            return 0;
        }
        throw UsageError("no subcommand");
    } catch (const UsageError& e) {
        err << "usage error: " << e.what() << '\n';
        return 1;
    } catch (const PreconditionError& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    } catch (const DataError& e) {
        err << "data error: " << e.what() << '\n';
        return 2;
    } catch (const nn::TrainingDiverged& e) {
        err << "training error: " << e.what() << '\n';
        return 2;
    } catch (const std::ios_base::failure& e) {
        err << "I/O error: " << e.what() << '\n';
        return 2;
    }
}

int run_command(int argc, const char* const* argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return run_command(args, std::cin, std::cout, std::cerr);
}

}  // namespace lidarcount
