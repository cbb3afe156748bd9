#include "lidarcount/quantization.hpp"

#include <limits>
#include <string>

namespace lidarcount::quant {

using nn::LayerKind;

QuantParams params_for_range(Range range) {
    if (!(range.min <= 0.0 && range.max >= 0.0))
        throw PreconditionError("quantization range must contain 0");
    const double scale = std::max((range.max - range.min) / 255.0, kScaleFloor);
    const double zp = std::clamp(std::round(-range.min / scale), 0.0, 255.0);
    return QuantParams{scale, static_cast<int>(zp)};
}

RowMatrix dequantize(const QuantizedTensor& t) {
    RowMatrix out(t.rows, t.cols);
    for (Eigen::Index i = 0; i < out.size(); ++i)
        out.data()[i] = dequantize_value(t.payload[static_cast<std::size_t>(i)], t.params);
    return out;
}

std::vector<Range> calibrate(const nn::TrainedModel& model, const RowMatrix& representative) {
    if (representative.rows() == 0) throw PreconditionError("calibrate: representative set is empty");
    std::vector<Range> ranges(model.spec.layers.size() + 1,
                              Range{std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()});
    const nn::ActivationHook hook = [&ranges](std::size_t index, RowMatrix& x) {
        ranges[index].min = std::min(ranges[index].min, x.minCoeff());
        ranges[index].max = std::max(ranges[index].max, x.maxCoeff());
    };
    // one sample at a time so the sweep matches single-capture inference
    for (Eigen::Index i = 0; i < representative.rows(); ++i) {
        const RowMatrix sample = representative.row(i);
        nn::predict(model, sample, hook);
    }
    for (auto& r : ranges) r = include_zero(r);
    return ranges;
}

nn::TrainedModel fold_batchnorm(const nn::TrainedModel& model) {
    nn::TrainedModel out;
    out.spec.name = model.spec.name;
    out.spec.input = model.spec.input;
    out.threshold = model.threshold;
    out.metadata = model.metadata;
    const auto& layers = model.spec.layers;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const auto kind = layers[i].kind;
        const bool foldable = (kind == LayerKind::Dense || kind == LayerKind::Conv2d) && i + 1 < layers.size() &&
                              layers[i + 1].kind == LayerKind::BatchNorm;
        out.spec.layers.push_back(layers[i]);
        out.params.push_back(model.params[i]);
        if (!foldable) continue;
        const auto& bn = model.params[i + 1];
        auto& p = out.params.back();
        const Eigen::VectorXd s = bn.gamma.cwiseQuotient((bn.moving_var.array() + nn::kBatchNormEpsilon).sqrt().matrix());
        p.weight = p.weight * s.asDiagonal();
        p.bias = (p.bias - bn.moving_mean).cwiseProduct(s) + bn.beta;
        ++i;
    }
    return out;
}

void QuantizedModel::finalize() {
    dequantized = nn::TrainedModel{};
    dequantized.spec = spec;
    dequantized.threshold = threshold;
    dequantized.params.resize(layers.size());
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const auto& ql = layers[i];
        auto& p = dequantized.params[i];
        if (ql.spec.kind == LayerKind::Dense || ql.spec.kind == LayerKind::Conv2d) {
            p.weight = dequantize(ql.tensors.at(0));
            p.bias = dequantize(ql.tensors.at(1)).reshaped();
        } else if (ql.spec.kind == LayerKind::BatchNorm) {
            p.gamma = dequantize(ql.tensors.at(0)).reshaped();
            p.beta = dequantize(ql.tensors.at(1)).reshaped();
            p.moving_mean = dequantize(ql.tensors.at(2)).reshaped();
            p.moving_var = dequantize(ql.tensors.at(3)).reshaped().cwiseMax(0.0);
        }
    }
    spec.shapes();  // validates the chain
    if (activations.size() != layers.size() + 1)
        throw DataError("quantized model: expected " + std::to_string(layers.size() + 1) + " activation params");
}

namespace {

template <typename Derived>
QuantizedTensor quantize_own_range(const Eigen::MatrixBase<Derived>& t) {
    return quantize_tensor(t, Range{t.minCoeff(), t.maxCoeff()});
}

}  // namespace

QuantizedModel quantize_model(const nn::TrainedModel& model, const RowMatrix& representative) {
    const nn::TrainedModel folded = fold_batchnorm(model);
    const auto ranges = calibrate(folded, representative);

    QuantizedModel q;
    q.spec = folded.spec;
    q.threshold = model.threshold;
    q.metadata = model.metadata;
    for (std::size_t i = 0; i < folded.spec.layers.size(); ++i) {
        const auto& p = folded.params[i];
        QuantizedLayer ql{folded.spec.layers[i], {}};
        switch (ql.spec.kind) {
            case LayerKind::Dense:
            case LayerKind::Conv2d:
                ql.tensors.push_back(quantize_own_range(p.weight));
                ql.tensors.push_back(quantize_own_range(p.bias));
                break;
            case LayerKind::BatchNorm:
                for (const auto* v : {&p.gamma, &p.beta, &p.moving_mean, &p.moving_var})
                    ql.tensors.push_back(quantize_own_range(*v));
                break;
            default:
                break;
        }
        q.layers.push_back(std::move(ql));
    }
    for (const auto& r : ranges) q.activations.push_back(params_for_range(r));
    q.finalize();
    return q;
}

RowMatrix quantized_predict(const QuantizedModel& qmodel, const RowMatrix& inputs) {
    const auto& layers = qmodel.spec.layers;
    const nn::ActivationHook hook = [&](std::size_t index, RowMatrix& x) {
        if (index > 0 && layers[index - 1].kind == LayerKind::Softmax) return;
        fake_quantize(x, qmodel.activations[index]);
    };
    return nn::predict(qmodel.dequantized, inputs, hook);
}

Decision quantized_forward(const QuantizedModel& qmodel, const Eigen::VectorXd& input) {
    const RowMatrix in = input.transpose();
    const RowMatrix out = quantized_predict(qmodel, in);
    return Decision{nn::argmax(out.row(0)), out.row(0).transpose()};
}

Eigen::VectorXd quantized_reconstruction_errors(const QuantizedModel& qmodel, const RowMatrix& inputs) {
    if (qmodel.spec.name != "autoencoder") throw PreconditionError("quantized model is not an autoencoder");
    const RowMatrix out = quantized_predict(qmodel, inputs);
    return (out - inputs).rowwise().squaredNorm() / static_cast<double>(inputs.cols());
}

std::int64_t model_size(const nn::TrainedModel& model) { return 4 * nn::count_params(model.spec); }

std::int64_t model_size(const QuantizedModel& qmodel) {
    std::int64_t total = 0;
    for (const auto& l : qmodel.layers)
        for (const auto& t : l.tensors) total += static_cast<std::int64_t>(t.payload.size()) + kQuantParamsBytes;
    return total;
}

}  // namespace lidarcount::quant
