#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "vpbench/tensor.hpp"

namespace vpbench::nn {

enum class LayerKind { Conv2d, Dense, Relu, GlobalAvgPool, Flatten };

std::string to_string(LayerKind kind);
LayerKind layer_kind_from_string(const std::string& name);

/// Description of one layer. Spatial layers consume/produce NHWC batches,
/// dense layers consume flat [N, features] batches.
struct LayerSpec {
    LayerKind kind = LayerKind::Relu;
    std::size_t kernel_h = 0;
    std::size_t kernel_w = 0;
    std::size_t stride = 1;
    std::size_t in_channels = 0;   // dense: input features
    std::size_t out_channels = 0;  // dense: output features

    static LayerSpec conv2d(std::size_t in_ch, std::size_t out_ch, std::size_t kernel,
                            std::size_t stride);
    static LayerSpec dense(std::size_t in_features, std::size_t out_features);
    static LayerSpec relu();
    static LayerSpec global_avg_pool();
    static LayerSpec flatten();

    bool has_params() const {
        return kind == LayerKind::Conv2d || kind == LayerKind::Dense;
    }
};

/// Cached intermediates from one forward pass, consumed by backward().
/// Owning the trace outside the network keeps forward/backward pure with
/// respect to (parameters, input).
struct ForwardTrace {
    std::vector<Tensor> activations;          // [0] = input, [i+1] = output of layer i
    std::vector<std::vector<double>> im2col;  // per layer; filled for conv layers only
};

/// A feed-forward chain of layers with owned parameters.
///
/// Weight layout: conv [out_ch][kh][kw][in_ch], dense [out][in]; biases are
/// flat [out_ch]. An empty layer list is the identity network.
class Network {
public:
    Network() = default;
    Network(std::vector<LayerSpec> layers, std::vector<std::size_t> input_shape);

    /// Glorot-uniform weights in +-sqrt(6/(fan_in+fan_out)), zero biases.
    void init_params(std::uint64_t seed);

    const std::vector<LayerSpec>& layers() const { return layers_; }
    const std::vector<std::size_t>& input_shape() const { return input_shape_; }
    const std::vector<std::size_t>& output_shape() const { return feature_shapes_.back(); }
    /// Per-sample feature shape after layer i (index 0 = input shape).
    const std::vector<std::vector<std::size_t>>& feature_shapes() const { return feature_shapes_; }

    std::vector<Tensor*> parameters();
    std::vector<const Tensor*> parameters() const;
    std::size_t parameter_count() const;

    /// Evaluate the chain on a batch shaped [N, ...input_shape].
    /// Deterministic; pass a trace to enable backward().
    Tensor forward(const Tensor& batch, ForwardTrace* trace = nullptr) const;

    /// Backpropagate `upstream` (shaped like the forward output) through the
    /// trace. Parameter gradients are accumulated into `param_grads`
    /// (aligned with parameters()); returns the gradient w.r.t. the input.
    Tensor backward(const ForwardTrace& trace, const Tensor& upstream,
                    std::vector<Tensor>& param_grads) const;

    std::vector<Tensor> make_grad_buffers() const;

private:
    std::vector<LayerSpec> layers_;
    std::vector<std::size_t> input_shape_;
    std::vector<std::vector<std::size_t>> feature_shapes_;
    std::vector<Tensor> weights_;  // one per layer; empty tensor when layer has none
    std::vector<Tensor> biases_;
};

/// Mean squared error over all elements plus d(loss)/d(pred).
struct LossResult {
    double value = 0.0;
    Tensor grad;
};
LossResult mse_loss(const Tensor& pred, const Tensor& target);

enum class OptMethod { Sgd, Adam };

/// First-order optimizer state; moment buffers mirror the parameter shapes.
struct OptimizerState {
    OptMethod method = OptMethod::Adam;
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::uint64_t step_count = 0;
    std::vector<std::vector<double>> first_moment;
    std::vector<std::vector<double>> second_moment;

    static OptimizerState sgd(double lr);
    static OptimizerState adam(double lr);

    void attach(const std::vector<Tensor*>& params);
    void step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads);
};

/// Checkpoint file: magic, little-endian JSON header length, JSON header
/// (layer specs, shapes, seed), then parameters as little-endian float32.
void save_checkpoint(const Network& net, const std::filesystem::path& path,
                     std::uint64_t seed);
Network load_checkpoint(const std::filesystem::path& path, std::uint64_t* seed = nullptr);

}  // namespace vpbench::nn
