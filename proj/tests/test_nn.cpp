#include "lidarcount/nn.hpp"

#include <doctest.h>

#include <random>

using namespace lidarcount;
using namespace lidarcount::nn;

namespace {

ModelSpec dense_net(int in, std::vector<LayerSpec> layers, std::string name = "toy") { return {std::move(name), Shape{1, 1, in}, std::move(layers)}; }

RowMatrix random_rows(std::mt19937_64& rng, int n, int d) {
    std::normal_distribution<double> g(0.0, 1.0);
    RowMatrix x(n, d);
    for (Eigen::Index k = 0; k < x.size(); ++k) x.data()[k] = g(rng);
    return x;
}

}  // namespace

TEST_CASE("autoencoder architecture") {
    const auto spec = build_autoencoder();
    std::vector<int> widths;
    int dropouts = 0;
    for (const auto& l : spec.layers) {
        if (l.kind == LayerKind::Dense) widths.push_back(l.units);
        if (l.kind == LayerKind::Dropout) {
            ++dropouts;
            CHECK(l.rate == 0.1);
        }
    }
    CHECK(widths == std::vector<int>{104, 72, 124, 8, 76, 84, 76, 94});
    CHECK(dropouts == 6);
    CHECK(spec.input.size() == 94);
    CHECK(spec.output().size() == 94);
    CHECK(spec.layers.back().kind == LayerKind::Dense);
}

TEST_CASE("cnn2d architecture") {
    const auto spec = build_cnn2d();
    CHECK(count_params(spec) == 62114);
    std::vector<Shape> after_pool_or_conv;
    const auto shapes = spec.shapes();
    for (std::size_t i = 0; i < spec.layers.size(); ++i)
        if (spec.layers[i].kind == LayerKind::Conv2d || spec.layers[i].kind == LayerKind::MaxPool)
            after_pool_or_conv.push_back(shapes[i]);
    const std::vector<Shape> expected{{16, 16, 32}, {8, 8, 32}, {6, 6, 64}, {3, 3, 64}, {1, 1, 64}};
    CHECK(after_pool_or_conv == expected);
    CHECK(spec.output() == Shape{1, 1, 2});

    std::mt19937_64 rng(1);
    const auto model = init_model(spec, 3);
    const auto out = predict(model, random_rows(rng, 4, 1944));
    for (Eigen::Index i = 0; i < 4; ++i) CHECK(out.row(i).sum() == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("shape mismatch is rejected") {
    const ModelSpec bad{"bad", Shape{2, 2, 1}, {LayerSpec::conv2d(4, 3)}};
    CHECK_THROWS_AS(bad.shapes(), PreconditionError);
    const auto model = init_model(dense_net(3, {LayerSpec::dense(2)}), 1);
    CHECK_THROWS_AS(predict(model, RowMatrix::Zero(1, 4)), PreconditionError);
}

TEST_CASE("dense forward matches hand multiply") {
    auto model = init_model(dense_net(3, {LayerSpec::dense(2)}), 1);
    model.params[0].weight.resize(3, 2);
    model.params[0].weight << 1, 2, 3, 4, 5, 6;
    model.params[0].bias = Eigen::Vector2d(0.5, -0.5);
    RowMatrix x(3, 3);
    x << 1, 0, 0, 0, 1, 0, 1, 1, 1;
    RowMatrix expect(3, 2);
    expect << 1.5, 1.5, 3.5, 3.5, 9.5, 11.5;
    CHECK((predict(model, x) - expect).cwiseAbs().maxCoeff() < 1e-12);

    model.params[0].weight.setZero();
    model.params[0].bias.setZero();
    CHECK(predict(model, x).isZero());
}

TEST_CASE("eval forward is deterministic and BN uses moving statistics") {
    auto model = init_model(dense_net(3, {LayerSpec::batchnorm()}), 1);
    auto& p = model.params[0];
    p.gamma = Eigen::Vector3d(1.0, 2.0, 0.5);
    p.beta = Eigen::Vector3d(0.0, 1.0, -1.0);
    p.moving_mean = Eigen::Vector3d(0.5, -0.5, 2.0);
    p.moving_var = Eigen::Vector3d(1.0, 4.0, 0.25);
    std::mt19937_64 rng(2);
    const auto x = random_rows(rng, 5, 3);
    const auto y = predict(model, x);
    CHECK(predict(model, x) == y);
    for (Eigen::Index i = 0; i < 5; ++i)
        for (int c = 0; c < 3; ++c) {
            const double ref =
                (x(i, c) - p.moving_mean(c)) / std::sqrt(p.moving_var(c) + kBatchNormEpsilon) * p.gamma(c) + p.beta(c);
            CHECK(y(i, c) == doctest::Approx(ref).epsilon(1e-12));
        }
}

TEST_CASE("train-mode dropout masks reproduce under a seed") {
    auto model = init_model(build_autoencoder(), 4);
    std::mt19937_64 rng(5);
    const auto x = random_rows(rng, 8, 94);
    auto run = [&] {
        auto m = model;
        std::mt19937_64 drop(9);
        ForwardOptions opts{Mode::Train, true, true, &drop};
        return forward(m, x, opts);
    };
    CHECK(run() == run());
}

TEST_CASE("gradient checks on micro nets") {
    const ModelSpec linear = dense_net(3, {LayerSpec::dense(2)});
    CHECK(gradient_check(linear, 1) < 1e-7);
    const ModelSpec mlp = dense_net(4, {LayerSpec::dense(6), LayerSpec::relu(), LayerSpec::dense(3)});
    const ModelSpec conv_bn{"conv_bn",
                            Shape{5, 5, 2},
                            {LayerSpec::conv2d(3), LayerSpec::batchnorm(), LayerSpec::relu(), LayerSpec::flatten(),
                             LayerSpec::dense(2), LayerSpec::softmax()}};
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        CHECK(gradient_check(mlp, seed) < 1e-4);
        CHECK(gradient_check(conv_bn, seed) < 1e-4);
    }
}

TEST_CASE("training separates a linear toy problem") {
    std::mt19937_64 rng(6);
    const auto x = random_rows(rng, 200, 2);
    std::vector<int> y;
    for (Eigen::Index i = 0; i < 200; ++i) y.push_back(x(i, 0) + 0.5 * x(i, 1) > 0.0 ? 1 : 0);
    const auto spec = dense_net(2, {LayerSpec::dense(8), LayerSpec::relu(), LayerSpec::dense(2), LayerSpec::softmax()});
    TrainConfig cfg;
    cfg.loss = Loss::SoftmaxCrossEntropy;
    cfg.seed = 3;
    const auto r = train(spec, x, one_hot(y, 2), cfg);
    const auto out = predict(r.model, x);
    int correct = 0;
    for (Eigen::Index i = 0; i < 200; ++i) correct += argmax(out.row(i)) == y[i];
    CHECK(correct >= 198);
    CHECK(r.loss_history.size() == 100);
    const auto again = train(spec, x, one_hot(y, 2), cfg);
    CHECK(again.loss_history == r.loss_history);
}

TEST_CASE("autoencoder memorizes a repeated vector") {
    const auto spec =
        dense_net(4, {LayerSpec::dense(8), LayerSpec::relu(), LayerSpec::dense(4)}, "autoencoder");
    RowMatrix x(32, 4);
    x.rowwise() = Eigen::RowVector4d(0.3, -0.7, 1.2, 0.1);
    TrainConfig cfg;
    cfg.seed = 1;
    cfg.epochs = 1000;
    const auto r = train(spec, x, x, cfg);
    CHECK(r.loss_history.back() < 1e-6 * r.loss_history.front());
    CHECK(reconstruction_error(r.model, x.row(0).transpose()) < 1e-6);
    for (std::size_t i = 1; i < r.loss_history.size(); ++i) CHECK(r.loss_history[i] <= r.loss_history[i - 1] + 1e-15);
}

TEST_CASE("divergence is reported") {
    const auto spec = dense_net(2, {LayerSpec::dense(2)});
    RowMatrix x(4, 2);
    x << 1, 2, 3, 4, 5, 6, 7, std::numeric_limits<double>::quiet_NaN();
    TrainConfig cfg;
    cfg.epochs = 2;
    CHECK_THROWS_AS(train(spec, x, x, cfg), TrainingDiverged);
}

TEST_CASE("reconstruction error") {
    auto model = init_model(dense_net(3, {LayerSpec::dense(3)}, "autoencoder"), 2);
    model.params[0].weight = RowMatrix::Identity(3, 3);
    model.params[0].bias.setZero();
    CHECK(reconstruction_error(model, Eigen::Vector3d(1, 2, 3)) == 0.0);

    auto other = init_model(dense_net(3, {LayerSpec::dense(3)}, "autoencoder"), 5);
    const Eigen::Vector3d v(0.4, -1.0, 2.0);
    const RowMatrix out = predict(other, RowMatrix(v.transpose()));
    const double mse = (out.row(0).transpose() - v).squaredNorm() / 3.0;
    CHECK(reconstruction_error(other, v) == doctest::Approx(mse).epsilon(1e-12));
    CHECK(reconstruction_error(other, v) >= 0.0);

    const double err = reconstruction_error(other, v);
    CHECK(classify_ae(other, err, v) == 1);
    CHECK(classify_ae(other, std::nextafter(err, 0.0), v) == 0);
}

TEST_CASE("threshold selection") {
    const auto t = choose_threshold({0.1, 0.2, 0.9, 1.0}, {1, 1, 0, 0});
    CHECK(t.threshold > 0.2);
    CHECK(t.threshold < 0.9);
    CHECK(t.f1 == 1.0);
    const auto flat = choose_threshold({0.5, 0.5, 0.5}, {1, 0, 1});
    CHECK(flat.degenerate);
    CHECK(flat.f1 > 0.0);
    CHECK_THROWS_AS(choose_threshold({0.1, 0.2}, {1, 1}), PreconditionError);
}

TEST_CASE("threshold F1 equals exhaustive scan") {
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> e;
        std::vector<int> l;
        for (int i = 0; i < 40; ++i) {
            l.push_back(i % 2);
            e.push_back(u(rng) + (l.back() ? 0.0 : 0.3));
        }
        double best = 0.0;
        for (double a : e)
            for (double b : e) {
                const double thr = 0.5 * (a + b);
                int tp = 0, fp = 0, fn = 0;
                for (int i = 0; i < 40; ++i) {
                    const bool pred = e[i] <= thr;
                    tp += pred && l[i];
                    fp += pred && !l[i];
                    fn += !pred && l[i];
                }
                if (tp > 0) best = std::max(best, 2.0 * tp / (2.0 * tp + fp + fn));
            }
        CHECK(choose_threshold(e, l).f1 == doctest::Approx(best).epsilon(1e-12));
    }
}

TEST_CASE("cnn classification") {
    RowMatrix p(1, 2);
    p << 0.3, 0.7;
    CHECK(argmax(p.row(0)) == 1);
    p << 0.5, 0.5;
    CHECK(argmax(p.row(0)) == 0);

    std::mt19937_64 rng(9);
    const auto model = init_model(build_cnn2d(), 2);
    const auto x = random_rows(rng, 6, 1944);
    const auto batch = classify_cnn_batch(model, x);
    for (Eigen::Index i = 0; i < 6; ++i) {
        const auto single = classify_cnn(model, x.row(i).transpose());
        CHECK(single.label == batch[i].label);
        CHECK((single.probabilities - batch[i].probabilities).cwiseAbs().maxCoeff() < 1e-12);
    }
}
