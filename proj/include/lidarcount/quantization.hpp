#pragma once

#include "lidarcount/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

namespace lidarcount::quant {

/// Asymmetric unsigned 8-bit affine map: r = (q - zero_point) * scale.
struct QuantParams {
    double scale = 1.0;
    int zero_point = 0;

    bool operator==(const QuantParams&) const = default;
};

struct Range {
    double min = 0.0;
    double max = 0.0;
};

inline constexpr double kScaleFloor = 1e-8;

/// scale = (max - min) / 255, zero_point = round(-min / scale) clamped to [0, 255].
/// The range must contain 0.
QuantParams params_for_range(Range range);

/// Widens a range so that it contains 0.
inline Range include_zero(Range r) { return Range{std::min(r.min, 0.0), std::max(r.max, 0.0)}; }

inline std::uint8_t quantize_value(double r, const QuantParams& p) {
    const double q = std::round(r / p.scale) + p.zero_point;
    return static_cast<std::uint8_t>(std::clamp(q, 0.0, 255.0));
}

inline double dequantize_value(std::uint8_t q, const QuantParams& p) {
    return static_cast<double>(static_cast<int>(q) - p.zero_point) * p.scale;
}

struct QuantizedTensor {
    std::vector<std::uint8_t> payload;  // row-major
    QuantParams params;
    Eigen::Index rows = 0;
    Eigen::Index cols = 0;
};

template <typename Derived>
QuantizedTensor quantize_tensor(const Eigen::DenseBase<Derived>& t, const QuantParams& p) {
    QuantizedTensor out{{}, p, t.rows(), t.cols()};
    out.payload.reserve(static_cast<std::size_t>(t.size()));
    for (Eigen::Index i = 0; i < t.rows(); ++i)
        for (Eigen::Index j = 0; j < t.cols(); ++j) out.payload.push_back(quantize_value(t(i, j), p));
    return out;
}

/// Quantizes with parameters derived from `range` (widened to include 0).
template <typename Derived>
QuantizedTensor quantize_tensor(const Eigen::DenseBase<Derived>& t, Range range) {
    return quantize_tensor(t, params_for_range(include_zero(range)));
}

RowMatrix dequantize(const QuantizedTensor& t);

/// quantize -> dequantize in place.
template <typename Derived>
void fake_quantize(Eigen::DenseBase<Derived>& t, const QuantParams& p) {
    t = t.derived().unaryExpr([&p](double r) { return dequantize_value(quantize_value(r, p), p); });
}

/// Activation ranges of an eval-mode sweep: index 0 is the model input,
/// index l + 1 the output of layer l. Every range contains 0.
std::vector<Range> calibrate(const nn::TrainedModel& model, const RowMatrix& representative);

/// Folds every batch-norm layer directly following a dense or conv layer
/// into that layer's weight and bias. Eval-mode outputs are unchanged.
nn::TrainedModel fold_batchnorm(const nn::TrainedModel& model);

struct QuantizedLayer {
    nn::LayerSpec spec;
    std::vector<QuantizedTensor> tensors;  // dense/conv: weight, bias; batchnorm: gamma, beta, mean, var
};

struct QuantizedModel {
    nn::ModelSpec spec;  // after batch-norm folding
    std::vector<QuantizedLayer> layers;
    std::vector<QuantParams> activations;  // layers.size() + 1 entries
    std::optional<double> threshold;
    nlohmann::json metadata = nlohmann::json::object();

    /// Float model holding the dequantized parameters; rebuilt by finalize().
    nn::TrainedModel dequantized;

    void finalize();
};

QuantizedModel quantize_model(const nn::TrainedModel& model, const RowMatrix& representative);

/// Simulated 8-bit inference: dequantized parameters, every activation passed
/// through quantize -> dequantize. A trailing softmax runs in float on the
/// fake-quantized logits.
RowMatrix quantized_predict(const QuantizedModel& qmodel, const RowMatrix& inputs);

struct Decision {
    int label = 0;
    Eigen::VectorXd probabilities;
};

/// Classification with a quantized two-class softmax model.
Decision quantized_forward(const QuantizedModel& qmodel, const Eigen::VectorXd& input);

/// Reconstruction MSE of a quantized autoencoder against the float input.
Eigen::VectorXd quantized_reconstruction_errors(const QuantizedModel& qmodel, const RowMatrix& inputs);

inline constexpr std::int64_t kQuantParamsBytes = 8;  // float32 scale + int32 zero point

/// Parameter payload in bytes: 4 per float parameter (batch-norm statistics
/// included) or 1 per 8-bit parameter plus per-tensor quantization parameters.
std::int64_t model_size(const nn::TrainedModel& model);
std::int64_t model_size(const QuantizedModel& qmodel);

}  // namespace lidarcount::quant
