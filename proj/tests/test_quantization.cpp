#include "lidarcount/model_io.hpp"
#include "lidarcount/quantization.hpp"

#include <doctest.h>

#include <random>
#include <sstream>

using namespace lidarcount;
using namespace lidarcount::quant;

namespace {

nn::ModelSpec mlp() {
    return {"mlp", nn::Shape{1, 1, 3},
            {nn::LayerSpec::dense(5), nn::LayerSpec::relu(), nn::LayerSpec::dense(2), nn::LayerSpec::softmax()}};
}

RowMatrix random_rows(std::mt19937_64& rng, int n, int d) {
    std::normal_distribution<double> g(0.0, 1.0);
    RowMatrix x(n, d);
    for (Eigen::Index k = 0; k < x.size(); ++k) x.data()[k] = g(rng);
    return x;
}

}  // namespace

TEST_CASE("affine parameters") {
    const auto p = params_for_range({-1.0, 1.0});
    CHECK(p.scale == doctest::Approx(2.0 / 255.0));
    CHECK(quantize_value(1.0, p) == 255);
    CHECK(quantize_value(-1.0, p) == 0);
    CHECK(quantize_value(0.0, p) == p.zero_point);
    CHECK(dequantize_value(static_cast<std::uint8_t>(p.zero_point), p) == 0.0);
    CHECK(quantize_value(5.0, p) == 255);
    CHECK(quantize_value(-5.0, p) == 0);
    CHECK(params_for_range({0.0, 0.0}).scale == kScaleFloor);
}

TEST_CASE("round trip within half a step and idempotent") {
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(-3.0, 7.0);
    RowMatrix t(20, 30);
    for (Eigen::Index k = 0; k < t.size(); ++k) t.data()[k] = u(rng);
    const auto q = quantize_tensor(t, Range{t.minCoeff(), t.maxCoeff()});
    const auto d = dequantize(q);
    CHECK((d - t).cwiseAbs().maxCoeff() <= q.params.scale / 2 + 1e-12);
    CHECK(quantize_tensor(d, q.params).payload == q.payload);
}

TEST_CASE("calibration ranges") {
    const auto model = nn::init_model(mlp(), 2);
    const auto zero = calibrate(model, RowMatrix::Zero(1, 3));
    for (const auto& r : zero) CHECK((r.min <= 0.0 && r.max >= 0.0));
    CHECK_THROWS_AS(calibrate(model, RowMatrix(0, 3)), PreconditionError);

    std::mt19937_64 rng(3);
    const auto x = random_rows(rng, 100, 3);
    const auto ranges = calibrate(model, x);
    REQUIRE(ranges.size() == 5);
    const auto& w1 = model.params[0];
    const auto& w2 = model.params[2];
    const RowMatrix a1 = (x * w1.weight).rowwise() + w1.bias.transpose();
    const RowMatrix a2 = a1.cwiseMax(0.0);
    const RowMatrix a3 = (a2 * w2.weight).rowwise() + w2.bias.transpose();
    const RowMatrix* acts[] = {&x, &a1, &a2, &a3};
    for (int i = 0; i < 4; ++i) {
        CHECK(ranges[i].min == std::min(0.0, acts[i]->minCoeff()));
        CHECK(ranges[i].max == std::max(0.0, acts[i]->maxCoeff()));
    }
    const auto a = calibrate(model, x.topRows(1));
    const auto b = calibrate(model, x.middleRows(1, 1));
    const auto ab = calibrate(model, x.topRows(2));
    for (std::size_t i = 0; i < ab.size(); ++i) {
        CHECK(ab[i].min == std::min(a[i].min, b[i].min));
        CHECK(ab[i].max == std::max(a[i].max, b[i].max));
    }
}

TEST_CASE("batch-norm folding preserves eval outputs") {
    const nn::ModelSpec spec{"cbn",
                             nn::Shape{6, 6, 2},
                             {nn::LayerSpec::conv2d(4), nn::LayerSpec::batchnorm(), nn::LayerSpec::relu(),
                              nn::LayerSpec::flatten(), nn::LayerSpec::dense(3), nn::LayerSpec::batchnorm(),
                              nn::LayerSpec::dense(2), nn::LayerSpec::softmax()}};
    auto model = nn::init_model(spec, 4);
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(0.5, 2.0);
    for (auto& p : model.params)
        if (p.gamma.size()) {
            for (Eigen::Index i = 0; i < p.gamma.size(); ++i) {
                p.gamma(i) = u(rng);
                p.beta(i) = u(rng) - 1.0;
                p.moving_mean(i) = u(rng) - 1.0;
                p.moving_var(i) = u(rng);
            }
        }
    const auto folded = fold_batchnorm(model);
    for (const auto& l : folded.spec.layers) CHECK(l.kind != nn::LayerKind::BatchNorm);
    const auto x = random_rows(rng, 10, 72);
    CHECK((nn::predict(model, x) - nn::predict(folded, x)).cwiseAbs().maxCoeff() < 1e-5);
}

TEST_CASE("zero model quantizes to zero points and a uniform softmax") {
    auto model = nn::init_model(mlp(), 1);
    for (auto& p : model.params) {
        p.weight.setZero();
        p.bias.setZero();
    }
    const auto q = quantize_model(model, RowMatrix::Zero(4, 3));
    for (const auto& l : q.layers)
        for (const auto& t : l.tensors)
            for (auto b : t.payload) CHECK(b == t.params.zero_point);
    const auto d = quantized_forward(q, Eigen::Vector3d::Zero());
    CHECK(d.probabilities(0) == doctest::Approx(0.5));
    CHECK(d.probabilities(1) == doctest::Approx(0.5));
}

TEST_CASE("quantized inference is deterministic and close to float") {
    const auto model = nn::init_model(mlp(), 7);
    std::mt19937_64 rng(7);
    const auto x = random_rows(rng, 100, 3);
    const auto q = quantize_model(model, x);
    CHECK(quantized_predict(q, x) == quantized_predict(q, x));
    const auto pf = nn::predict(model, x);
    const auto pq = quantized_predict(q, x);
    CHECK((pf - pq).cwiseAbs().mean() < 0.05);
}

TEST_CASE("model size accounting") {
    const nn::ModelSpec spec{"k", nn::Shape{1, 1, 9}, {nn::LayerSpec::dense(100)}};
    const auto model = nn::init_model(spec, 1);
    CHECK(nn::count_params(spec) == 1000);
    CHECK(model_size(model) == 4000);
    std::mt19937_64 rng(2);
    const auto q = quantize_model(model, random_rows(rng, 10, 9));
    CHECK(model_size(q) <= 1200);
    CHECK(model_size(model) >= 3.3 * model_size(q));
}

TEST_CASE("model container round-trips") {
    std::mt19937_64 rng(3);
    auto model = nn::init_model(mlp(), 3);
    model.threshold = 0.25;
    model.metadata["note"] = "x";
    std::stringstream ss;
    save_model(ss, AnyModel(model));
    const auto back = std::get<nn::TrainedModel>(load_model(ss));
    const auto x = random_rows(rng, 5, 3);
    CHECK(nn::predict(back, x) == nn::predict(model, x));
    CHECK(back.threshold == 0.25);

    const auto q = quantize_model(model, x);
    std::stringstream qs;
    save_model(qs, AnyModel(q));
    const auto qb = std::get<QuantizedModel>(load_model(qs));
    CHECK(quantized_predict(qb, x) == quantized_predict(q, x));
    CHECK(model_threshold(AnyModel(qb)) == 0.25);

    std::istringstream bad("{\"format_version\":99}\n");
    CHECK_THROWS_AS(load_model(bad), DataError);
    CHECK(base64_decode(base64_encode({0, 1, 2, 250, 255})) == std::vector<std::uint8_t>{0, 1, 2, 250, 255});
}
