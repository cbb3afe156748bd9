#pragma once

#include "lidarcount/types.hpp"

#include <json.hpp>

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace lidarcount::nn {

enum class LayerKind { Dense, Conv2d, BatchNorm, Relu, MaxPool, Dropout, Softmax, Flatten };

std::string to_string(LayerKind kind);
LayerKind layer_kind_from_string(const std::string& name);

/// Height x width x channels of one sample. Flat vectors are 1 x 1 x n.
struct Shape {
    int h = 1;
    int w = 1;
    int c = 0;

    int size() const { return h * w * c; }
    bool operator==(const Shape&) const = default;
};

struct LayerSpec {
    LayerKind kind = LayerKind::Relu;
    int units = 0;        // dense outputs or conv filters
    int kernel = 3;       // conv kernel side
    int stride = 1;       // conv stride
    int pool = 2;         // max-pool window and stride
    double rate = 0.0;    // dropout rate

    static LayerSpec dense(int units) { return {LayerKind::Dense, units}; }
    static LayerSpec conv2d(int filters, int kernel = 3, int stride = 1) {
        return {LayerKind::Conv2d, filters, kernel, stride};
    }
    static LayerSpec batchnorm() { return {LayerKind::BatchNorm}; }
    static LayerSpec relu() { return {LayerKind::Relu}; }
    static LayerSpec maxpool(int pool = 2) { return {LayerKind::MaxPool, 0, 3, 1, pool}; }
    static LayerSpec dropout(double rate) { return {LayerKind::Dropout, 0, 3, 1, 2, rate}; }
    static LayerSpec softmax() { return {LayerKind::Softmax}; }
    static LayerSpec flatten() { return {LayerKind::Flatten}; }

    bool has_params() const { return kind == LayerKind::Dense || kind == LayerKind::Conv2d || kind == LayerKind::BatchNorm; }
};

struct ModelSpec {
    std::string name;
    Shape input;
    std::vector<LayerSpec> layers;

    /// Output shape of every layer; throws PreconditionError on an incompatible chain.
    std::vector<Shape> shapes() const;
    Shape output() const;
};

ModelSpec build_autoencoder();
ModelSpec build_cnn2d();

inline constexpr double kBatchNormEpsilon = 1e-5;
inline constexpr double kBatchNormMomentum = 0.99;

/// Dense: weight (in x out). Conv: weight (k*k*c_in x filters), rows ordered
/// (ky, kx, c_in). BatchNorm uses the four per-channel vectors.
struct LayerParams {
    RowMatrix weight;
    Eigen::VectorXd bias;
    Eigen::VectorXd gamma, beta, moving_mean, moving_var;
};

struct TrainedModel {
    ModelSpec spec;
    std::vector<LayerParams> params;  // one entry per layer, empty for parameter-free layers
    std::optional<double> threshold;  // autoencoder reconstruction-error cutoff
    nlohmann::json metadata = nlohmann::json::object();
};

/// Parameters including batch-norm moving statistics.
std::int64_t count_params(const ModelSpec& spec);

/// He-uniform for layers feeding a ReLU (through BN/dropout), Glorot-uniform otherwise.
TrainedModel init_model(const ModelSpec& spec, std::uint64_t seed);

enum class Mode { Eval, Train };

struct ForwardOptions {
    Mode mode = Mode::Eval;
    bool dropout = true;          // train mode only
    bool update_stats = true;     // train mode only: BN moving averages
    std::mt19937_64* rng = nullptr;  // dropout masks; required when dropout is active
};

/// Per-layer state kept by a forward pass for backpropagation.
struct ForwardCache {
    std::vector<RowMatrix> inputs;           // layer inputs, rows = batch * h * w
    std::vector<RowMatrix> aux;              // im2col / BN x-hat / masks / softmax output
    std::vector<Eigen::VectorXd> inv_std;    // BN
    std::vector<std::vector<Eigen::Index>> argmax;  // max-pool source rows
    int batch = 0;
    Mode mode = Mode::Eval;
};

/// Inputs are one flattened (h, w, c) sample per row. Returns one output row per sample.
RowMatrix forward(TrainedModel& model, const RowMatrix& inputs, const ForwardOptions& opts,
                  ForwardCache* cache = nullptr);

/// Eval-mode inference; does not touch the model.
RowMatrix predict(const TrainedModel& model, const RowMatrix& inputs);

/// Called with index 0 for the input and index l + 1 after layer l. The
/// activation is laid out as (batch * h * w) x c and may be modified.
using ActivationHook = std::function<void(std::size_t index, RowMatrix& activation)>;

RowMatrix predict(const TrainedModel& model, const RowMatrix& inputs, const ActivationHook& hook);

/// Gradients w.r.t. every parameter given dLoss/dOutput. With
/// `grad_is_logits` the gradient is taken as already w.r.t. the input of a
/// trailing softmax layer.
std::vector<LayerParams> backward(const TrainedModel& model, const ForwardCache& cache, const RowMatrix& grad_out,
                                  bool grad_is_logits = false);

enum class Loss { Mse, SoftmaxCrossEntropy };

std::string to_string(Loss loss);

struct LossValue {
    double loss = 0.0;
    RowMatrix grad;       // w.r.t. network output (or softmax input for cross-entropy)
    bool grad_is_logits = false;
};

/// MSE averages over every element; cross-entropy expects a trailing softmax
/// and one-hot targets and averages over samples.
LossValue evaluate_loss(Loss loss, const RowMatrix& output, const RowMatrix& targets);

struct TrainConfig {
    int epochs = 100;
    double learning_rate = 0.001;
    int batch_size = 32;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_epsilon = 1e-7;
    std::uint64_t seed = 0;
    Loss loss = Loss::Mse;

    void validate() const;
};

struct TrainResult {
    TrainedModel model;
    std::vector<double> loss_history;  // sample-weighted mean loss per epoch
};

class TrainingDiverged : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

TrainResult train(const ModelSpec& spec, const RowMatrix& inputs, const RowMatrix& targets, const TrainConfig& cfg);

/// Continues training an existing model (same semantics as train()).
std::vector<double> train_in_place(TrainedModel& model, const RowMatrix& inputs, const RowMatrix& targets,
                                   const TrainConfig& cfg);

/// Inputs for a given epoch; row i must stay paired with targets row i.
using EpochInputs = std::function<const RowMatrix&(int epoch)>;
TrainResult train(const ModelSpec& spec, const EpochInputs& epoch_inputs, const RowMatrix& targets,
                  const TrainConfig& cfg);
std::vector<double> train_in_place(TrainedModel& model, const EpochInputs& epoch_inputs, const RowMatrix& targets,
                                   const TrainConfig& cfg);

RowMatrix one_hot(const std::vector<int>& labels, int classes);

/// Max relative error between backprop gradients and central differences
/// (step 1e-3) on a seeded 4-sample instance, dropout off, BN on batch stats.
/// Relative error is |ga - gn| / max(|ga|, |gn|, 1e-8). Weights are drawn
/// from N(0, 1) with the last weighted layer (and MSE targets) scaled by 0.1.
/// Parameters whose +-step passes flip a ReLU or max-pool switch are left out
/// (the difference quotient straddles a kink); their number goes to `skipped`.
double gradient_check(const ModelSpec& spec, std::uint64_t seed, int* skipped = nullptr);

// Classification helpers

double reconstruction_error(const TrainedModel& model, const Eigen::VectorXd& v);
Eigen::VectorXd reconstruction_errors(const TrainedModel& model, const RowMatrix& inputs);

struct ThresholdChoice {
    double threshold = 0.0;
    double f1 = 0.0;
    bool degenerate = false;
};

/// Best-F1 cutoff among midpoints of the sorted errors; ties favor the lower
/// threshold. Human (label 1) is predicted when error <= threshold.
ThresholdChoice choose_threshold(const std::vector<double>& errors, const std::vector<int>& labels);
ThresholdChoice choose_threshold(const TrainedModel& model, const RowMatrix& validation,
                                 const std::vector<int>& labels);

int classify_ae(const TrainedModel& model, double threshold, const Eigen::VectorXd& v);

struct CnnDecision {
    int label = 0;
    Eigen::Vector2d probabilities = Eigen::Vector2d::Zero();
};

CnnDecision classify_cnn(const TrainedModel& model, const Eigen::VectorXd& image);
std::vector<CnnDecision> classify_cnn_batch(const TrainedModel& model, const RowMatrix& images);

/// Argmax with ties resolved to the lower class index.
int argmax(const Eigen::Ref<const Eigen::RowVectorXd>& row);

}  // namespace lidarcount::nn
