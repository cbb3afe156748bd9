#include "lidarcount/nn.hpp"

#include "lidarcount/random.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

namespace lidarcount::nn {

namespace {

using ConstMap = Eigen::Map<const RowMatrix>;

struct KindName {
    LayerKind kind;
    const char* name;
};

constexpr KindName kKindNames[] = {
    {LayerKind::Dense, "dense"},     {LayerKind::Conv2d, "conv2d"},   {LayerKind::BatchNorm, "batchnorm"},
    {LayerKind::Relu, "relu"},       {LayerKind::MaxPool, "maxpool"}, {LayerKind::Dropout, "dropout"},
    {LayerKind::Softmax, "softmax"}, {LayerKind::Flatten, "flatten"},
};

int out_dim(int in, int window, int stride) { return (in - window) / stride + 1; }

// Gathers every k x k receptive field into one row: (batch*oh*ow) x (k*k*c).
RowMatrix im2col(const RowMatrix& x, int batch, const Shape& in, int k, int stride, const Shape& out) {
    RowMatrix col(static_cast<Eigen::Index>(batch) * out.h * out.w, static_cast<Eigen::Index>(k) * k * in.c);
    Eigen::Index r = 0;
    for (int b = 0; b < batch; ++b)
        for (int oy = 0; oy < out.h; ++oy)
            for (int ox = 0; ox < out.w; ++ox, ++r)
                for (int ky = 0; ky < k; ++ky)
                    for (int kx = 0; kx < k; ++kx) {
                        const Eigen::Index src =
                            (static_cast<Eigen::Index>(b) * in.h + (oy * stride + ky)) * in.w + (ox * stride + kx);
                        col.block(r, (ky * k + kx) * in.c, 1, in.c) = x.row(src);
                    }
    return col;
}

RowMatrix col2im(const RowMatrix& dcol, int batch, const Shape& in, int k, int stride, const Shape& out) {
    RowMatrix dx = RowMatrix::Zero(static_cast<Eigen::Index>(batch) * in.h * in.w, in.c);
    Eigen::Index r = 0;
    for (int b = 0; b < batch; ++b)
        for (int oy = 0; oy < out.h; ++oy)
            for (int ox = 0; ox < out.w; ++ox, ++r)
                for (int ky = 0; ky < k; ++ky)
                    for (int kx = 0; kx < k; ++kx) {
                        const Eigen::Index dst =
                            (static_cast<Eigen::Index>(b) * in.h + (oy * stride + ky)) * in.w + (ox * stride + kx);
                        dx.row(dst) += dcol.block(r, (ky * k + kx) * in.c, 1, in.c);
                    }
    return dx;
}

RowMatrix softmax_rows(const RowMatrix& x) {
    RowMatrix out(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const double m = x.row(i).maxCoeff();
        out.row(i) = (x.row(i).array() - m).exp();
        out.row(i) /= out.row(i).sum();
    }
    return out;
}

bool feeds_relu(const ModelSpec& spec, std::size_t layer) {
    for (std::size_t j = layer + 1; j < spec.layers.size(); ++j) {
        const auto k = spec.layers[j].kind;
        if (k == LayerKind::BatchNorm || k == LayerKind::Dropout) continue;
        return k == LayerKind::Relu;
    }
    return false;
}

RowMatrix forward_impl(const TrainedModel& model, std::vector<LayerParams>* stats, const RowMatrix& inputs,
                       const ForwardOptions& opts, ForwardCache* cache, const ActivationHook* hook = nullptr) {
    const auto& spec = model.spec;
    if (inputs.cols() != spec.input.size())
        throw PreconditionError("forward: expected " + std::to_string(spec.input.size()) + " input values, got " +
                                std::to_string(inputs.cols()));
    const bool train = opts.mode == Mode::Train;
    const bool use_dropout = train && opts.dropout;
    const auto batch = static_cast<int>(inputs.rows());
    const auto shapes = spec.shapes();

    if (cache) {
        const auto n = spec.layers.size();
        cache->inputs.assign(n, RowMatrix());
        cache->aux.assign(n, RowMatrix());
        cache->inv_std.assign(n, Eigen::VectorXd());
        cache->argmax.assign(n, {});
        cache->batch = batch;
        cache->mode = opts.mode;
    }

    Shape in = spec.input;
    RowMatrix x = ConstMap(inputs.data(), static_cast<Eigen::Index>(batch) * in.h * in.w, in.c);
    if (hook) (*hook)(0, x);
    for (std::size_t l = 0; l < spec.layers.size(); ++l) {
        const auto& layer = spec.layers[l];
        const auto& p = model.params[l];
        const Shape out = shapes[l];
        if (cache) cache->inputs[l] = x;
        switch (layer.kind) {
            case LayerKind::Dense:
                x = (x * p.weight).rowwise() + p.bias.transpose();
                break;
            case LayerKind::Conv2d: {
                RowMatrix col = im2col(x, batch, in, layer.kernel, layer.stride, out);
                x = (col * p.weight).rowwise() + p.bias.transpose();
                if (cache) cache->aux[l] = std::move(col);
                break;
            }
            case LayerKind::BatchNorm: {
                Eigen::RowVectorXd mean, var;
                if (train) {
                    mean = x.colwise().mean();
                    var = (x.rowwise() - mean).array().square().colwise().mean();
                    if (opts.update_stats && stats) {
                        auto& s = (*stats)[l];
                        s.moving_mean = kBatchNormMomentum * s.moving_mean + (1.0 - kBatchNormMomentum) * mean.transpose();
                        s.moving_var = kBatchNormMomentum * s.moving_var + (1.0 - kBatchNormMomentum) * var.transpose();
                    }
                } else {
                    mean = p.moving_mean.transpose();
                    var = p.moving_var.transpose();
                }
                const Eigen::RowVectorXd inv_std = (var.array() + kBatchNormEpsilon).rsqrt();
                RowMatrix xhat = (x.rowwise() - mean).array().rowwise() * inv_std.array();
                x = (xhat.array().rowwise() * p.gamma.transpose().array()).rowwise() + p.beta.transpose().array();
                if (cache) {
                    cache->aux[l] = std::move(xhat);
                    cache->inv_std[l] = inv_std.transpose();
                }
                break;
            }
            case LayerKind::Relu:
                if (cache) cache->aux[l] = (x.array() > 0.0).cast<double>();
                x = x.cwiseMax(0.0);
                break;
            case LayerKind::MaxPool: {
                const int k = layer.pool;
                RowMatrix y(static_cast<Eigen::Index>(batch) * out.h * out.w, in.c);
                std::vector<Eigen::Index> arg(static_cast<std::size_t>(y.size()));
                Eigen::Index r = 0;
                for (int b = 0; b < batch; ++b)
                    for (int oy = 0; oy < out.h; ++oy)
                        for (int ox = 0; ox < out.w; ++ox, ++r)
                            for (int c = 0; c < in.c; ++c) {
                                double best = -std::numeric_limits<double>::infinity();
                                Eigen::Index best_src = 0;
                                for (int ky = 0; ky < k; ++ky)
                                    for (int kx = 0; kx < k; ++kx) {
                                        const Eigen::Index src =
                                            (static_cast<Eigen::Index>(b) * in.h + (oy * k + ky)) * in.w + (ox * k + kx);
                                        if (x(src, c) > best) {
                                            best = x(src, c);
                                            best_src = src;
                                        }
                                    }
                                y(r, c) = best;
                                arg[static_cast<std::size_t>(r * in.c + c)] = best_src;
                            }
                x = std::move(y);
                if (cache) cache->argmax[l] = std::move(arg);
                break;
            }
            case LayerKind::Dropout:
                if (use_dropout && layer.rate > 0.0) {
                    if (!opts.rng) throw PreconditionError("forward: dropout in train mode needs an rng");
                    std::uniform_real_distribution<double> u(0.0, 1.0);
                    RowMatrix mask(x.rows(), x.cols());
                    const double keep_scale = 1.0 / (1.0 - layer.rate);
                    for (Eigen::Index i = 0; i < mask.size(); ++i)
                        mask.data()[i] = u(*opts.rng) >= layer.rate ? keep_scale : 0.0;
                    x = x.cwiseProduct(mask);
                    if (cache) cache->aux[l] = std::move(mask);
                }
                break;
            case LayerKind::Softmax:
                x = softmax_rows(x);
                if (cache) cache->aux[l] = x;
                break;
            case LayerKind::Flatten: {
                RowMatrix flat = ConstMap(x.data(), batch, in.size());
                x = std::move(flat);
                break;
            }
        }
        in = out;
        if (hook) (*hook)(l + 1, x);
    }
    RowMatrix result = ConstMap(x.data(), batch, in.size());
    return result;
}

// Trainable tensors in a fixed order: (weight, bias) or (gamma, beta) per layer.
std::vector<std::pair<double*, Eigen::Index>> trainable(std::vector<LayerParams>& params, const ModelSpec& spec) {
    std::vector<std::pair<double*, Eigen::Index>> out;
    for (std::size_t l = 0; l < spec.layers.size(); ++l) {
        auto& p = params[l];
        switch (spec.layers[l].kind) {
            case LayerKind::Dense:
            case LayerKind::Conv2d:
                out.emplace_back(p.weight.data(), p.weight.size());
                out.emplace_back(p.bias.data(), p.bias.size());
                break;
            case LayerKind::BatchNorm:
                out.emplace_back(p.gamma.data(), p.gamma.size());
                out.emplace_back(p.beta.data(), p.beta.size());
                break;
            default:
                break;
        }
    }
    return out;
}

}  // namespace

std::string to_string(LayerKind kind) {
    for (const auto& kn : kKindNames)
        if (kn.kind == kind) return kn.name;
    return "unknown";
}

LayerKind layer_kind_from_string(const std::string& name) {
    for (const auto& kn : kKindNames)
        if (name == kn.name) return kn.kind;
    throw DataError("unknown layer kind '" + name + "'");
}

std::string to_string(Loss loss) { return loss == Loss::Mse ? "mse" : "softmax_cross_entropy"; }

std::vector<Shape> ModelSpec::shapes() const {
    std::vector<Shape> out;
    out.reserve(layers.size());
    Shape s = input;
    if (s.h < 1 || s.w < 1 || s.c < 1) throw PreconditionError(name + ": invalid input shape");
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const auto& l = layers[i];
        const auto where = name + " layer " + std::to_string(i) + " (" + to_string(l.kind) + "): ";
        switch (l.kind) {
            case LayerKind::Dense:
                if (l.units < 1) throw PreconditionError(where + "units must be positive");
                if (s.h != 1 || s.w != 1) throw PreconditionError(where + "input must be flat");
                s = Shape{1, 1, l.units};
                break;
            case LayerKind::Conv2d:
                if (l.units < 1 || l.kernel < 1 || l.stride < 1) throw PreconditionError(where + "bad parameters");
                if (s.h < l.kernel || s.w < l.kernel) throw PreconditionError(where + "input smaller than kernel");
                s = Shape{out_dim(s.h, l.kernel, l.stride), out_dim(s.w, l.kernel, l.stride), l.units};
                break;
            case LayerKind::MaxPool:
                if (l.pool < 1) throw PreconditionError(where + "pool must be positive");
                if (s.h < l.pool || s.w < l.pool) throw PreconditionError(where + "input smaller than window");
                s = Shape{s.h / l.pool, s.w / l.pool, s.c};
                break;
            case LayerKind::Dropout:
                if (!(l.rate >= 0.0 && l.rate < 1.0)) throw PreconditionError(where + "rate must be in [0,1)");
                break;
            case LayerKind::Softmax:
                if (s.h != 1 || s.w != 1) throw PreconditionError(where + "input must be flat");
                break;
            case LayerKind::Flatten:
                s = Shape{1, 1, s.size()};
                break;
            case LayerKind::BatchNorm:
            case LayerKind::Relu:
                break;
        }
        out.push_back(s);
    }
    return out;
}

Shape ModelSpec::output() const {
    auto s = shapes();
    return s.empty() ? input : s.back();
}

ModelSpec build_autoencoder() {
    ModelSpec spec{"autoencoder", Shape{1, 1, 94}, {}};
    const int widths[] = {104, 72, 124, 8, 76, 84, 76};
    constexpr int kBottleneck = 3;
    for (int i = 0; i < 7; ++i) {
        spec.layers.push_back(LayerSpec::dense(widths[i]));
        spec.layers.push_back(LayerSpec::relu());
        if (i != kBottleneck) spec.layers.push_back(LayerSpec::dropout(0.1));
    }
    spec.layers.push_back(LayerSpec::dense(94));
    return spec;
}

ModelSpec build_cnn2d() {
    ModelSpec spec{"cnn2d", Shape{18, 18, 6}, {}};
    auto& l = spec.layers;
    for (int filters : {32, 64}) {
        l.push_back(LayerSpec::conv2d(filters));
        l.push_back(LayerSpec::batchnorm());
        l.push_back(LayerSpec::relu());
        l.push_back(LayerSpec::maxpool(2));
    }
    l.push_back(LayerSpec::conv2d(64));
    l.push_back(LayerSpec::batchnorm());
    l.push_back(LayerSpec::relu());
    l.push_back(LayerSpec::flatten());
    l.push_back(LayerSpec::dense(64));
    l.push_back(LayerSpec::dense(2));
    l.push_back(LayerSpec::softmax());
    return spec;
}

std::int64_t count_params(const ModelSpec& spec) {
    const auto shapes = spec.shapes();
    std::int64_t total = 0;
    Shape in = spec.input;
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
        const auto& l = spec.layers[i];
        switch (l.kind) {
            case LayerKind::Dense:
                total += static_cast<std::int64_t>(in.size()) * l.units + l.units;
                break;
            case LayerKind::Conv2d:
                total += static_cast<std::int64_t>(l.kernel) * l.kernel * in.c * l.units + l.units;
                break;
            case LayerKind::BatchNorm:
                total += 4LL * in.c;
                break;
            default:
                break;
        }
        in = shapes[i];
    }
    return total;
}

TrainedModel init_model(const ModelSpec& spec, std::uint64_t seed) {
    const auto shapes = spec.shapes();
    TrainedModel model;
    model.spec = spec;
    model.params.resize(spec.layers.size());
    std::mt19937_64 rng(seed);
    Shape in = spec.input;
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
        const auto& l = spec.layers[i];
        auto& p = model.params[i];
        if (l.kind == LayerKind::Dense || l.kind == LayerKind::Conv2d) {
            const int fan_in = l.kind == LayerKind::Dense ? in.size() : l.kernel * l.kernel * in.c;
            const int fan_out = l.kind == LayerKind::Dense ? l.units : l.kernel * l.kernel * l.units;
            const double limit = feeds_relu(spec, i) ? std::sqrt(6.0 / fan_in) : std::sqrt(6.0 / (fan_in + fan_out));
            std::uniform_real_distribution<double> u(-limit, limit);
            p.weight.resize(fan_in, l.units);
            for (Eigen::Index k = 0; k < p.weight.size(); ++k) p.weight.data()[k] = u(rng);
            p.bias = Eigen::VectorXd::Zero(l.units);
        } else if (l.kind == LayerKind::BatchNorm) {
            p.gamma = Eigen::VectorXd::Ones(in.c);
            p.beta = Eigen::VectorXd::Zero(in.c);
            p.moving_mean = Eigen::VectorXd::Zero(in.c);
            p.moving_var = Eigen::VectorXd::Ones(in.c);
        }
        in = shapes[i];
    }
    return model;
}

RowMatrix forward(TrainedModel& model, const RowMatrix& inputs, const ForwardOptions& opts, ForwardCache* cache) {
    return forward_impl(model, &model.params, inputs, opts, cache);
}

RowMatrix predict(const TrainedModel& model, const RowMatrix& inputs) {
    return forward_impl(model, nullptr, inputs, ForwardOptions{}, nullptr);
}

RowMatrix predict(const TrainedModel& model, const RowMatrix& inputs, const ActivationHook& hook) {
    return forward_impl(model, nullptr, inputs, ForwardOptions{}, nullptr, &hook);
}

std::vector<LayerParams> backward(const TrainedModel& model, const ForwardCache& cache, const RowMatrix& grad_out,
                                  bool grad_is_logits) {
    const auto& spec = model.spec;
    const auto shapes = spec.shapes();
    const int batch = cache.batch;
    std::vector<LayerParams> grads(spec.layers.size());
    if (spec.layers.empty()) return grads;

    const Shape last = shapes.back();
    RowMatrix g = ConstMap(grad_out.data(), static_cast<Eigen::Index>(batch) * last.h * last.w, last.c);
    for (std::size_t li = spec.layers.size(); li-- > 0;) {
        const auto& layer = spec.layers[li];
        const auto& p = model.params[li];
        const Shape in = li == 0 ? spec.input : shapes[li - 1];
        const Shape out = shapes[li];
        const RowMatrix& x = cache.inputs[li];
        auto& dp = grads[li];
        switch (layer.kind) {
            case LayerKind::Dense:
                dp.weight = x.transpose() * g;
                dp.bias = g.colwise().sum().transpose();
                g = g * p.weight.transpose();
                break;
            case LayerKind::Conv2d: {
                const RowMatrix& col = cache.aux[li];
                dp.weight = col.transpose() * g;
                dp.bias = g.colwise().sum().transpose();
                const RowMatrix dcol = g * p.weight.transpose();
                g = col2im(dcol, batch, in, layer.kernel, layer.stride, out);
                break;
            }
            case LayerKind::BatchNorm: {
                const RowMatrix& xhat = cache.aux[li];
                const Eigen::RowVectorXd inv_std = cache.inv_std[li].transpose();
                dp.gamma = (g.array() * xhat.array()).colwise().sum().transpose();
                dp.beta = g.colwise().sum().transpose();
                const RowMatrix dxhat = g.array().rowwise() * p.gamma.transpose().array();
                if (cache.mode == Mode::Train) {
                    // batch statistics depend on every row
                    const double m = static_cast<double>(g.rows());
                    const Eigen::RowVectorXd sum_dxhat = dxhat.colwise().sum();
                    const Eigen::RowVectorXd sum_dxhat_xhat = (dxhat.array() * xhat.array()).colwise().sum();
                    RowMatrix term = (m * dxhat).rowwise() - sum_dxhat;
                    term -= RowMatrix(xhat.array().rowwise() * sum_dxhat_xhat.array());
                    g = (term.array().rowwise() * (inv_std.array() / m)).matrix();
                } else {
                    g = (dxhat.array().rowwise() * inv_std.array()).matrix();
                }
                break;
            }
            case LayerKind::Relu:
                g = g.cwiseProduct(cache.aux[li]);
                break;
            case LayerKind::MaxPool: {
                RowMatrix dx = RowMatrix::Zero(static_cast<Eigen::Index>(batch) * in.h * in.w, in.c);
                const auto& arg = cache.argmax[li];
                for (Eigen::Index r = 0; r < g.rows(); ++r)
                    for (Eigen::Index c = 0; c < g.cols(); ++c)
                        dx(arg[static_cast<std::size_t>(r * in.c + c)], c) += g(r, c);
                g = std::move(dx);
                break;
            }
            case LayerKind::Dropout:
                if (cache.aux[li].size() > 0) g = g.cwiseProduct(cache.aux[li]);
                break;
            case LayerKind::Softmax:
                if (!(grad_is_logits && li + 1 == spec.layers.size())) {
                    const RowMatrix& prob = cache.aux[li];
                    const Eigen::VectorXd dot = (g.array() * prob.array()).rowwise().sum();
                    g = (prob.array() * (g.colwise() - dot).array()).matrix();
                }
                break;
            case LayerKind::Flatten: {
                RowMatrix unflat = ConstMap(g.data(), static_cast<Eigen::Index>(batch) * in.h * in.w, in.c);
                g = std::move(unflat);
                break;
            }
        }
    }
    return grads;
}

LossValue evaluate_loss(Loss loss, const RowMatrix& output, const RowMatrix& targets) {
    if (output.rows() != targets.rows() || output.cols() != targets.cols())
        throw PreconditionError("loss: output and target shapes differ");
    LossValue v;
    const auto n = static_cast<double>(output.rows());
    if (loss == Loss::Mse) {
        const RowMatrix diff = output - targets;
        const auto count = static_cast<double>(diff.size());
        v.loss = diff.squaredNorm() / count;
        v.grad = (2.0 / count) * diff;
    } else {
        constexpr double kTiny = 1e-12;
        v.loss = -(targets.array() * (output.array().max(kTiny)).log()).sum() / n;
        v.grad = (output - targets) / n;
        v.grad_is_logits = true;
    }
    return v;
}

void TrainConfig::validate() const {
    if (epochs < 1 || batch_size < 1 || !(learning_rate > 0.0) || !(adam_epsilon > 0.0) || !(beta1 >= 0.0 && beta1 < 1.0) ||
        !(beta2 >= 0.0 && beta2 < 1.0))
        throw PreconditionError("train config: values must be positive (betas in [0,1))");
}

std::vector<double> train_in_place(TrainedModel& model, const RowMatrix& inputs, const RowMatrix& targets,
                                   const TrainConfig& cfg) {
    return train_in_place(model, [&inputs](int) -> const RowMatrix& { return inputs; }, targets, cfg);
}

std::vector<double> train_in_place(TrainedModel& model, const EpochInputs& epoch_inputs, const RowMatrix& targets,
                                   const TrainConfig& cfg) {
    cfg.validate();
    if (targets.rows() == 0) throw PreconditionError("train: empty dataset");
    if (targets.cols() != model.spec.output().size()) throw PreconditionError("train: target width mismatch");
    if (cfg.loss == Loss::SoftmaxCrossEntropy &&
        (model.spec.layers.empty() || model.spec.layers.back().kind != LayerKind::Softmax))
        throw PreconditionError("train: cross-entropy needs a trailing softmax layer");

    std::mt19937_64 shuffle_rng(derive_seed(cfg.seed, 1));
    std::mt19937_64 dropout_rng(derive_seed(cfg.seed, 2));
    auto params = trainable(model.params, model.spec);
    std::vector<Eigen::ArrayXd> m, v;
    for (const auto& [ptr, size] : params) {
        m.push_back(Eigen::ArrayXd::Zero(size));
        v.push_back(Eigen::ArrayXd::Zero(size));
    }

    const Eigen::Index n = targets.rows();
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::vector<double> history;
    std::int64_t step = 0;
    ForwardCache cache;
    ForwardOptions opts{Mode::Train, true, true, &dropout_rng};

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const RowMatrix& inputs = epoch_inputs(epoch);
        if (inputs.rows() != n) throw PreconditionError("train: input/target count mismatch");
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        double epoch_loss = 0.0;
        for (Eigen::Index start = 0; start < n; start += cfg.batch_size) {
            const Eigen::Index end = std::min<Eigen::Index>(n, start + cfg.batch_size);
            const std::vector<Eigen::Index> idx(order.begin() + start, order.begin() + end);
            const RowMatrix xb = inputs(idx, Eigen::all);
            const RowMatrix yb = targets(idx, Eigen::all);
            const RowMatrix out = forward(model, xb, opts, &cache);
            const LossValue lv = evaluate_loss(cfg.loss, out, yb);
            if (!std::isfinite(lv.loss)) {
                std::ostringstream msg;
                msg << "training diverged: loss " << lv.loss << " at epoch " << epoch << ", batch starting at "
                    << start << " (lr " << cfg.learning_rate << ")";
                throw TrainingDiverged(msg.str());
            }
            epoch_loss += lv.loss * static_cast<double>(end - start);

            auto grads = backward(model, cache, lv.grad, lv.grad_is_logits);
            const auto gviews = trainable(grads, model.spec);
            ++step;
            const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
            const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
            for (std::size_t t = 0; t < params.size(); ++t) {
                Eigen::Map<Eigen::ArrayXd> w(params[t].first, params[t].second);
                Eigen::Map<const Eigen::ArrayXd> gr(gviews[t].first, gviews[t].second);
                m[t] = cfg.beta1 * m[t] + (1.0 - cfg.beta1) * gr;
                v[t] = cfg.beta2 * v[t] + (1.0 - cfg.beta2) * gr.square();
                w -= cfg.learning_rate * (m[t] / bc1) / ((v[t] / bc2).sqrt() + cfg.adam_epsilon);
            }
        }
        history.push_back(epoch_loss / static_cast<double>(n));
    }
    return history;
}

TrainResult train(const ModelSpec& spec, const RowMatrix& inputs, const RowMatrix& targets, const TrainConfig& cfg) {
    TrainResult r{init_model(spec, derive_seed(cfg.seed, 0)), {}};
    r.loss_history = train_in_place(r.model, inputs, targets, cfg);
    return r;
}

TrainResult train(const ModelSpec& spec, const EpochInputs& epoch_inputs, const RowMatrix& targets,
                  const TrainConfig& cfg) {
    TrainResult r{init_model(spec, derive_seed(cfg.seed, 0)), {}};
    r.loss_history = train_in_place(r.model, epoch_inputs, targets, cfg);
    return r;
}

RowMatrix one_hot(const std::vector<int>& labels, int classes) {
    RowMatrix out = RowMatrix::Zero(static_cast<Eigen::Index>(labels.size()), classes);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || labels[i] >= classes) throw DataError("one_hot: label out of range");
        out(static_cast<Eigen::Index>(i), labels[i]) = 1.0;
    }
    return out;
}

double gradient_check(const ModelSpec& spec, std::uint64_t seed, int* skipped_out) {
    constexpr double kStep = 1e-3;
    constexpr int kBatch = 4;
    constexpr double kOutputScale = 0.1;
    TrainedModel model = init_model(spec, derive_seed(seed, 10));
    std::mt19937_64 rng(derive_seed(seed, 11));
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> u(-0.5, 0.5);
    std::size_t last_param = spec.layers.size();
    for (std::size_t l = 0; l < spec.layers.size(); ++l) {
        auto& p = model.params[l];
        for (Eigen::Index i = 0; i < p.weight.size(); ++i) p.weight.data()[i] = normal(rng);
        if (p.weight.size() > 0) last_param = l;
        if (spec.layers[l].kind == LayerKind::BatchNorm) {
            for (Eigen::Index i = 0; i < p.gamma.size(); ++i) p.gamma(i) = 1.0 + u(rng);
            for (Eigen::Index i = 0; i < p.beta.size(); ++i) p.beta(i) = u(rng);
        } else if (p.bias.size() > 0) {
            for (Eigen::Index i = 0; i < p.bias.size(); ++i) p.bias(i) = 0.2 * u(rng);
        }
    }

    RowMatrix inputs(kBatch, spec.input.size());
    for (Eigen::Index i = 0; i < inputs.size(); ++i) inputs.data()[i] = normal(rng);
    const bool softmax_head = !spec.layers.empty() && spec.layers.back().kind == LayerKind::Softmax;
    const Loss loss = softmax_head ? Loss::SoftmaxCrossEntropy : Loss::Mse;
    const int out_size = spec.output().size();
    RowMatrix targets;
    if (softmax_head) {
        std::uniform_int_distribution<int> cls(0, out_size - 1);
        std::vector<int> labels(kBatch);
        for (auto& lab : labels) lab = cls(rng);
        targets = one_hot(labels, out_size);
    } else {
        targets.resize(kBatch, out_size);
        for (Eigen::Index i = 0; i < targets.size(); ++i) targets.data()[i] = kOutputScale * normal(rng);
    }
    // A small output scale keeps the loss, and with it the rounding noise of
    // the difference quotient, well below the 1e-8 floor for parameters whose
    // true gradient is zero (biases feeding batch norm).
    if (last_param < spec.layers.size()) {
        model.params[last_param].weight *= kOutputScale;
        model.params[last_param].bias *= kOutputScale;
    }

    const ForwardOptions opts{Mode::Train, false, false, nullptr};
    ForwardCache cache;
    const LossValue lv = evaluate_loss(loss, forward(model, inputs, opts, &cache), targets);
    auto grads = backward(model, cache, lv.grad, lv.grad_is_logits);
    const auto gviews = trainable(grads, spec);
    auto pviews = trainable(model.params, spec);

    // True when the perturbed pass took a different ReLU or max-pool branch.
    const auto switched = [&](const ForwardCache& c) {
        for (std::size_t l = 0; l < spec.layers.size(); ++l) {
            if (spec.layers[l].kind == LayerKind::Relu && c.aux[l] != cache.aux[l]) return true;
            if (spec.layers[l].kind == LayerKind::MaxPool && c.argmax[l] != cache.argmax[l]) return true;
        }
        return false;
    };

    double worst = 0.0;
    int skipped = 0;
    ForwardCache probe;
    for (std::size_t t = 0; t < pviews.size(); ++t) {
        for (Eigen::Index i = 0; i < pviews[t].second; ++i) {
            double& w = pviews[t].first[i];
            const double saved = w;
            w = saved + kStep;
            const double up = evaluate_loss(loss, forward(model, inputs, opts, &probe), targets).loss;
            bool kink = switched(probe);
            w = saved - kStep;
            const double down = evaluate_loss(loss, forward(model, inputs, opts, &probe), targets).loss;
            kink = kink || switched(probe);
            w = saved;
            if (kink) {
                ++skipped;
                continue;
            }
            const double numeric = (up - down) / (2.0 * kStep);
            const double analytic = gviews[t].first[i];
            const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
            worst = std::max(worst, std::abs(analytic - numeric) / denom);
        }
    }
    if (skipped_out) *skipped_out = skipped;
    return worst;
}

double reconstruction_error(const TrainedModel& model, const Eigen::VectorXd& v) {
    RowMatrix in = v.transpose();
    return reconstruction_errors(model, in)(0);
}

Eigen::VectorXd reconstruction_errors(const TrainedModel& model, const RowMatrix& inputs) {
    if (model.spec.name != "autoencoder")
        throw PreconditionError("reconstruction_error: model '" + model.spec.name + "' is not an autoencoder");
    const RowMatrix out = predict(model, inputs);
    if (out.cols() != inputs.cols()) throw PreconditionError("reconstruction_error: output width differs from input");
    return (out - inputs).rowwise().squaredNorm() / static_cast<double>(inputs.cols());
}

ThresholdChoice choose_threshold(const std::vector<double>& errors, const std::vector<int>& labels) {
    if (errors.size() != labels.size()) throw PreconditionError("choose_threshold: size mismatch");
    const auto positives = std::count(labels.begin(), labels.end(), 1);
    if (positives == 0 || positives == static_cast<std::ptrdiff_t>(labels.size()))
        throw PreconditionError("choose_threshold: validation set needs both classes");

    std::vector<std::size_t> order(errors.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return errors[a] < errors[b]; });

    const auto f1_at = [&](double thr) {
        std::int64_t tp = 0, fp = 0, fn = 0;
        for (std::size_t i = 0; i < errors.size(); ++i) {
            const bool pred = errors[i] <= thr;
            const bool human = labels[i] == 1;
            tp += pred && human;
            fp += pred && !human;
            fn += !pred && human;
        }
        const double denom = static_cast<double>(2 * tp + fp + fn);
        return denom > 0.0 ? 2.0 * static_cast<double>(tp) / denom : 0.0;
    };

    ThresholdChoice best{errors[order.front()], -1.0, true};
    for (std::size_t k = 0; k + 1 < order.size(); ++k) {
        const double lo = errors[order[k]];
        const double hi = errors[order[k + 1]];
        if (!(hi > lo)) continue;
        const double thr = lo + 0.5 * (hi - lo);
        const double f1 = f1_at(thr);
        if (f1 > best.f1) best = ThresholdChoice{thr, f1, false};
    }
    if (best.degenerate) best.f1 = f1_at(best.threshold);
    return best;
}

ThresholdChoice choose_threshold(const TrainedModel& model, const RowMatrix& validation,
                                 const std::vector<int>& labels) {
    const Eigen::VectorXd e = reconstruction_errors(model, validation);
    return choose_threshold(std::vector<double>(e.data(), e.data() + e.size()), labels);
}

int classify_ae(const TrainedModel& model, double threshold, const Eigen::VectorXd& v) {
    return reconstruction_error(model, v) <= threshold ? 1 : 0;
}

int argmax(const Eigen::Ref<const Eigen::RowVectorXd>& row) {
    Eigen::Index best = 0;
    for (Eigen::Index i = 1; i < row.size(); ++i)
        if (row(i) > row(best)) best = i;
    return static_cast<int>(best);
}

std::vector<CnnDecision> classify_cnn_batch(const TrainedModel& model, const RowMatrix& images) {
    const RowMatrix probs = predict(model, images);
    if (probs.cols() != 2) throw PreconditionError("classify_cnn: model must output 2 classes");
    std::vector<CnnDecision> out(static_cast<std::size_t>(probs.rows()));
    for (Eigen::Index i = 0; i < probs.rows(); ++i) {
        auto& d = out[static_cast<std::size_t>(i)];
        d.probabilities = probs.row(i).transpose();
        d.label = argmax(probs.row(i));
    }
    return out;
}

CnnDecision classify_cnn(const TrainedModel& model, const Eigen::VectorXd& image) {
    RowMatrix in = image.transpose();
    return classify_cnn_batch(model, in).front();
}

}  // namespace lidarcount::nn
