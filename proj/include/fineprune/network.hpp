#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include "fineprune/data.hpp"
#include "fineprune/tensor.hpp"

namespace fineprune {

struct ConvLayer {
    std::size_t filters = 0;
    std::size_t channels = 0;
    std::size_t kernel_h = 0;
    std::size_t kernel_w = 0;
    std::size_t stride = 1;
    std::size_t padding = 0;
    bool relu = true;
    friend bool operator==(const ConvLayer&, const ConvLayer&) = default;
};

struct PoolLayer {
    std::size_t window = 2;
    std::size_t stride = 2;
    friend bool operator==(const PoolLayer&, const PoolLayer&) = default;
};

struct FlattenLayer {
    friend bool operator==(const FlattenLayer&, const FlattenLayer&) = default;
};

struct DenseLayer {
    std::size_t inputs = 0;
    std::size_t outputs = 0;
    bool relu = true;
    friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

/// Final affine layer producing logits; no activation.
struct OutputLayer {
    std::size_t inputs = 0;
    std::size_t outputs = 0;
    friend bool operator==(const OutputLayer&, const OutputLayer&) = default;
};

using Layer = std::variant<ConvLayer, PoolLayer, FlattenLayer, DenseLayer, OutputLayer>;

/// Architecture: input geometry plus an ordered layer list ending in exactly
/// one OutputLayer. Construct through `ModelSpec::make`, which checks that
/// adjacent layers compose.
class ModelSpec {
public:
    using Shape = std::vector<std::size_t>;  // per-sample shape, no batch axis

    static ModelSpec make(std::array<std::size_t, 3> input, std::vector<Layer> layers);

    /// conv(F1,3x3,pad1) pool2 conv(F2,3x3,pad1) pool2 flatten fc(hidden) out(classes)
    static ModelSpec two_conv_two_fc(std::size_t image_h, std::size_t image_w,
                                     std::size_t classes, std::size_t conv1_filters = 8,
                                     std::size_t conv2_filters = 32, std::size_t hidden = 64);

    const std::array<std::size_t, 3>& input() const noexcept { return input_; }
    const std::vector<Layer>& layers() const noexcept { return layers_; }
    std::size_t classes() const noexcept { return classes_; }
    const Shape& output_shape(std::size_t layer) const { return shapes_.at(layer); }

    bool has_params(std::size_t layer) const;
    /// Number of output channels of a conv or dense layer; throws otherwise.
    std::size_t channel_count(std::size_t layer) const;
    std::optional<std::size_t> last_conv_layer() const;

    friend bool operator==(const ModelSpec& a, const ModelSpec& b) {
        return a.input_ == b.input_ && a.layers_ == b.layers_;
    }

private:
    std::array<std::size_t, 3> input_{};
    std::vector<Layer> layers_;
    std::vector<Shape> shapes_;
    std::size_t classes_ = 0;
};

std::string describe(const Layer& layer);

struct LayerParams {
    Tensor weight;
    Tensor bias;
    friend bool operator==(const LayerParams&, const LayerParams&) = default;
};

/// One entry per layer; pool/flatten entries hold empty tensors.
struct Parameters {
    std::vector<LayerParams> layers;

    /// Throws ShapeError unless every tensor matches `spec`.
    void check_against(const ModelSpec& spec) const;
    bool all_finite() const;
    friend bool operator==(const Parameters&, const Parameters&) = default;
};

/// Per-channel liveness for one conv or dense layer. Dead channels emit zero
/// after their activation and receive no parameter updates.
struct PruneMask {
    std::size_t layer = 0;
    std::vector<bool> live;

    static PruneMask all_live(const ModelSpec& spec, std::size_t layer);
    std::size_t live_count() const;
    std::size_t dead_count() const { return live.size() - live_count(); }
    bool is_live(std::size_t channel) const { return live.at(channel); }
    void check_against(const ModelSpec& spec) const;

    friend bool operator==(const PruneMask&, const PruneMask&) = default;
};

/// Xavier-uniform weights in +-sqrt(6/(fan_in+fan_out)), zero biases. Layers
/// draw from one Rng(seed) in layer order, each tensor in flat order.
Parameters init_params(const ModelSpec& spec, std::uint64_t seed);

struct ForwardResult {
    Tensor logits;
    /// Post-activation (post-mask) outputs of the requested layers.
    std::map<std::size_t, Tensor> trace;
    /// Pre-activation outputs of the requested layers, before masking.
    std::map<std::size_t, Tensor> pre_trace;
};

struct CaptureRequest {
    std::set<std::size_t> post;
    std::set<std::size_t> pre;
};

ForwardResult forward(const ModelSpec& spec, const Parameters& params, const Tensor& batch,
                      const PruneMask* mask = nullptr, const CaptureRequest& capture = {});

/// Mean cross-entropy and its gradient with respect to every parameter.
struct Gradient {
    double loss = 0.0;
    Parameters grads;
};

Gradient loss_gradient(const ModelSpec& spec, const Parameters& params, const Tensor& batch,
                       std::span<const int> labels, const PruneMask* mask = nullptr);

/// Argmax predictions over `data`, evaluated in chunks.
std::vector<int> predict(const ModelSpec& spec, const Parameters& params, const Dataset& data,
                         const PruneMask* mask = nullptr);

/// Mean loss over a dataset (no update).
double dataset_loss(const ModelSpec& spec, const Parameters& params, const Dataset& data,
                    const PruneMask* mask = nullptr);

struct TrainConfig {
    std::size_t epochs = 10;
    std::size_t batch_size = 32;
    double learning_rate = 0.05;
    std::uint64_t seed = 0;
    std::optional<PruneMask> mask;

    void validate() const;
};

/// Raised when training produces a non-finite loss.
class DivergenceError : public std::runtime_error {
public:
    DivergenceError(std::size_t epoch, std::size_t batch, double loss);
    std::size_t epoch;
    std::size_t batch;
};

/// Called after each epoch with the epoch index, the current parameters and
/// the mean training loss of that epoch. Returning false stops training.
using EpochHook = std::function<bool(std::size_t epoch, const Parameters&, double mean_loss)>;

/// Plain mini-batch SGD on mean softmax cross-entropy. Each epoch shuffles the
/// sample order with Rng(derive_seed(seed, epoch)).shuffle; the final partial
/// batch is kept.
Parameters train(const ModelSpec& spec, const Parameters& init, const Dataset& data,
                 const TrainConfig& cfg, const EpochHook& hook = {});

}  // namespace fineprune
