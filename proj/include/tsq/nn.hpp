#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Core>

namespace tsq::nn {

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Row-major batch tensor: [N, H, W, C] for images, [N, F] for features.
template <typename Scalar>
struct Tensor {
    std::vector<std::size_t> shape;
    Vector<Scalar> values;

    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> dims) : shape(std::move(dims)) {
        values = Vector<Scalar>::Zero(static_cast<Eigen::Index>(element_count(shape)));
    }

    static std::size_t element_count(const std::vector<std::size_t> &dims) {
        std::size_t n = 1;
        for (auto d : dims) {
            n *= d;
        }
        return dims.empty() ? 0 : n;
    }

    std::size_t batch() const { return shape.empty() ? 0 : shape[0]; }
    std::size_t sample_size() const { return batch() ? static_cast<std::size_t>(values.size()) / batch() : 0; }
    Scalar *sample(std::size_t n) { return values.data() + n * sample_size(); }
    const Scalar *sample(std::size_t n) const { return values.data() + n * sample_size(); }

    /// Row-major [N, sample_size] view.
    Eigen::Map<RowMatrix<Scalar>> rows() {
        return {values.data(), static_cast<Eigen::Index>(batch()), static_cast<Eigen::Index>(sample_size())};
    }
    Eigen::Map<const RowMatrix<Scalar>> rows() const {
        return {values.data(), static_cast<Eigen::Index>(batch()), static_cast<Eigen::Index>(sample_size())};
    }
};

enum class Activation : std::uint8_t { None = 0, Relu = 1 };

inline constexpr std::size_t kConvKernel = 3;

struct Conv2D {
    std::size_t out_channels = 0;
    Activation activation = Activation::Relu;
};
struct MaxPool2 {};
struct Dropout {
    double rate = 0.0;
};
struct Flatten {};
struct Dense {
    std::size_t units = 0;
    Activation activation = Activation::None;
};

using LayerSpec = std::variant<Conv2D, MaxPool2, Dropout, Flatten, Dense>;

/// Per-sample shape. `flat` marks the [F] layout produced by Flatten.
struct SampleShape {
    std::size_t h = 1, w = 1, c = 1;
    bool flat = false;

    std::size_t size() const noexcept { return h * w * c; }
    bool operator==(const SampleShape &) const = default;
};

struct ModelSpec {
    SampleShape input;
    std::vector<LayerSpec> layers;

    /// DimensionError / ValidationError on an inconsistent stack; the last
    /// layer must be Dense with no activation.
    std::vector<SampleShape> layer_shapes() const;
    std::size_t n_classes() const;
    std::string describe() const;
};

/// Conv(32)-Pool-Conv(64)-Pool-Dropout(.25)-Flatten-Dense(128)-Dropout(.5)-Dense(K).
ModelSpec default_architecture(SampleShape input, std::size_t n_classes);

// ---- layer kernels --------------------------------------------------------

/// 3x3 valid convolution, stride 1. weights are [3, 3, C, F] row-major.
template <typename Scalar>
Tensor<Scalar> conv2d_forward(const Tensor<Scalar> &input, const Vector<Scalar> &weights,
                              const Vector<Scalar> &bias, Activation act = Activation::Relu);

/// Accumulates into grad_w / grad_b; writes grad_input when non-null.
template <typename Scalar>
void conv2d_backward(const Tensor<Scalar> &input, const Vector<Scalar> &weights,
                     const Tensor<Scalar> &output, const Tensor<Scalar> &grad_output, Activation act,
                     Vector<Scalar> &grad_w, Vector<Scalar> &grad_b, Tensor<Scalar> *grad_input);

template <typename Scalar>
struct PoolResult {
    Tensor<Scalar> output;
    std::vector<std::uint32_t> argmax; // flat input index per output element
};

/// 2x2 / stride 2; ties go to the first element in row-major window order.
template <typename Scalar>
PoolResult<Scalar> maxpool2_forward(const Tensor<Scalar> &input);

template <typename Scalar>
Tensor<Scalar> maxpool2_backward(const Tensor<Scalar> &grad_output,
                                 std::span<const std::uint32_t> argmax,
                                 const std::vector<std::size_t> &input_shape);

template <typename Scalar>
struct DropoutResult {
    Tensor<Scalar> output;
    Vector<Scalar> mask; // 0 or 1/(1-rate); empty when inactive
};

/// Inverted dropout. Inactive or rate 0 is the identity.
template <typename Scalar>
DropoutResult<Scalar> dropout(const Tensor<Scalar> &input, double rate, std::uint64_t seed, bool active);

/// weights are [F_in, F_out] row-major.
template <typename Scalar>
Tensor<Scalar> dense_forward(const Tensor<Scalar> &input, const Vector<Scalar> &weights,
                             const Vector<Scalar> &bias, Activation act = Activation::None);

template <typename Scalar>
void dense_backward(const Tensor<Scalar> &input, const Vector<Scalar> &weights,
                    const Tensor<Scalar> &output, const Tensor<Scalar> &grad_output, Activation act,
                    Vector<Scalar> &grad_w, Vector<Scalar> &grad_b, Tensor<Scalar> *grad_input);

template <typename Scalar>
struct LossResult {
    double loss = 0.0;
    RowMatrix<Scalar> grad; // (softmax - onehot) / N
};

/// Mean cross-entropy of softmax(logits); ValidationError unless every onehot
/// row holds a single 1.
template <typename Scalar>
LossResult<Scalar> softmax_cross_entropy(const RowMatrix<Scalar> &logits, const RowMatrix<Scalar> &onehot);

template <typename Scalar>
RowMatrix<Scalar> softmax(const RowMatrix<Scalar> &logits);

/// Row argmax, ties toward the lower index.
template <typename Scalar>
std::vector<std::size_t> argmax_rows(const RowMatrix<Scalar> &logits);

// ---- parameters and optimiser ----------------------------------------------

template <typename Scalar>
struct Param {
    std::vector<std::size_t> shape;
    Vector<Scalar> value;
    Vector<Scalar> grad;
    Vector<Scalar> m;
    Vector<Scalar> v;
    std::uint64_t t = 0;

    explicit Param(std::vector<std::size_t> dims = {}) : shape(std::move(dims)) {
        const auto n = static_cast<Eigen::Index>(Tensor<Scalar>::element_count(shape));
        value = grad = m = v = Vector<Scalar>::Zero(n);
    }
};

struct AdamConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// One bias-corrected Adam update from p.grad; increments p.t.
template <typename Scalar>
void adam_step(Param<Scalar> &p, const AdamConfig &config);

// ---- network ---------------------------------------------------------------

template <typename Scalar>
class Network {
  public:
    Network(ModelSpec spec, std::uint64_t init_seed);

    const ModelSpec &spec() const noexcept { return spec_; }
    std::size_t n_classes() const { return spec_.n_classes(); }

    /// Logits [N, K]. With `training`, caches activations for backward() and
    /// applies dropout drawn from dropout_seed.
    RowMatrix<Scalar> forward(const Tensor<Scalar> &input, bool training = false,
                              std::uint64_t dropout_seed = 0);
    /// Pure inference; no caches are touched.
    RowMatrix<Scalar> infer(const Tensor<Scalar> &input) const;
    /// Fills every Param::grad from dLoss/dlogits of the last training forward.
    void backward(const RowMatrix<Scalar> &grad_logits);

    std::vector<Param<Scalar> *> params();
    std::vector<const Param<Scalar> *> params() const;
    void zero_grad();

  private:
    struct Layer {
        LayerSpec spec;
        SampleShape in_shape, out_shape;
        int weight = -1, bias = -1; // indices into params_
        Tensor<Scalar> input, output;
        std::vector<std::uint32_t> argmax;
        Vector<Scalar> mask;
    };

    Tensor<Scalar> run(const Tensor<Scalar> &input, bool training, std::uint64_t dropout_seed,
                       std::vector<Layer> &layers) const;

    ModelSpec spec_;
    Tensor<Scalar> input_cache_;
    std::vector<Layer> layers_;
    std::vector<Param<Scalar>> params_;
};

/// Predicted class per sample (argmax of logits, ties to the lower index).
template <typename Scalar>
std::vector<std::size_t> predict(const Network<Scalar> &net, const Tensor<Scalar> &inputs,
                                 std::size_t chunk = 256);

// ---- training ---------------------------------------------------------------

template <typename Scalar>
struct Dataset {
    Tensor<Scalar> inputs;
    std::vector<std::size_t> labels;
};

struct TrainConfig {
    std::size_t batch_size = 32;
    std::size_t epochs = 10;
    AdamConfig adam;
    std::uint64_t seed = 0;
    bool dropout_active = true;

    void validate() const;
};

struct EpochStats {
    std::size_t epoch = 0;
    double train_loss = 0, train_acc = 0, val_loss = 0, val_acc = 0;
    bool operator==(const EpochStats &) const = default;
};

struct Evaluation {
    double loss = 0.0;
    double accuracy = 0.0;
    std::vector<std::size_t> predictions;
};

template <typename Scalar>
Evaluation evaluate(const Network<Scalar> &net, const Dataset<Scalar> &data, std::size_t chunk = 256);

template <typename Scalar>
struct TrainResult {
    Network<Scalar> model;
    std::vector<EpochStats> history;
};

using EpochCallback = std::function<void(const EpochStats &)>;

/// Seeded mini-batch Adam over shuffled epochs. Train loss/accuracy are batch
/// averages with dropout on; validation runs in inference mode (an empty
/// val set reports zeros).
template <typename Scalar>
TrainResult<Scalar> train(const ModelSpec &spec, const Dataset<Scalar> &train_set,
                          const Dataset<Scalar> &val_set, const TrainConfig &config,
                          const EpochCallback &on_epoch = {});

std::string history_to_csv(std::span<const EpochStats> history);

// ---- model file -------------------------------------------------------------

struct ModelMetadata {
    std::uint64_t config_hash = 0;
    std::string config_text;
};

inline constexpr std::uint32_t kModelVersion = 1;

/// TSQM: magic, version, config hash + text, architecture block, then every
/// parameter tensor as float32 in declaration order. Adam state is dropped.
std::vector<std::byte> encode_model(const Network<float> &net, const ModelMetadata &meta);

struct LoadedModel {
    Network<float> network;
    ModelMetadata metadata;
};

LoadedModel decode_model(std::span<const std::byte> bytes);
void save_model(const std::filesystem::path &path, const Network<float> &net, const ModelMetadata &meta);
LoadedModel load_model(const std::filesystem::path &path);

} // namespace tsq::nn
