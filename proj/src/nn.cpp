#include "vpbench/nn.hpp"

#include <Eigen/Dense>
#include <cstring>
#include <fstream>
#include <nlohmann/json.hpp>

#include "vpbench/binio.hpp"
#include "vpbench/rng.hpp"

namespace vpbench::nn {

namespace {

using MatrixRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixCM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor>;
using Eigen::Index;

std::string layer_label(std::size_t index, const LayerSpec& spec) {
    return "layer " + std::to_string(index) + " (" + to_string(spec.kind) + ")";
}

std::string dims_string(const std::vector<std::size_t>& dims) {
    std::string out = "[";
    for (std::size_t i = 0; i < dims.size(); ++i) {
        if (i) out += ", ";
        out += std::to_string(dims[i]);
    }
    return out + "]";
}

std::size_t conv_out_dim(std::size_t in, std::size_t kernel, std::size_t stride) {
    return (in - kernel) / stride + 1;
}

}  // namespace

std::string to_string(LayerKind kind) {
    switch (kind) {
        case LayerKind::Conv2d: return "conv2d";
        case LayerKind::Dense: return "dense";
        case LayerKind::Relu: return "relu";
        case LayerKind::GlobalAvgPool: return "global-avg-pool";
        case LayerKind::Flatten: return "flatten";
    }
    throw Error("unknown layer kind");
}

LayerKind layer_kind_from_string(const std::string& name) {
    if (name == "conv2d") return LayerKind::Conv2d;
    if (name == "dense") return LayerKind::Dense;
    if (name == "relu") return LayerKind::Relu;
    if (name == "global-avg-pool") return LayerKind::GlobalAvgPool;
    if (name == "flatten") return LayerKind::Flatten;
    throw Error("unknown layer kind: " + name);
}

LayerSpec LayerSpec::conv2d(std::size_t in_ch, std::size_t out_ch, std::size_t kernel,
                            std::size_t stride) {
    if (in_ch == 0 || out_ch == 0 || kernel == 0 || stride == 0)
        throw ShapeError("conv2d spec fields must be positive");
    LayerSpec s;
    s.kind = LayerKind::Conv2d;
    s.kernel_h = s.kernel_w = kernel;
    s.stride = stride;
    s.in_channels = in_ch;
    s.out_channels = out_ch;
    return s;
}

LayerSpec LayerSpec::dense(std::size_t in_features, std::size_t out_features) {
    if (in_features == 0 || out_features == 0)
        throw ShapeError("dense spec fields must be positive");
    LayerSpec s;
    s.kind = LayerKind::Dense;
    s.in_channels = in_features;
    s.out_channels = out_features;
    return s;
}

LayerSpec LayerSpec::relu() {
    LayerSpec s;
    s.kind = LayerKind::Relu;
    return s;
}

LayerSpec LayerSpec::global_avg_pool() {
    LayerSpec s;
    s.kind = LayerKind::GlobalAvgPool;
    return s;
}

LayerSpec LayerSpec::flatten() {
    LayerSpec s;
    s.kind = LayerKind::Flatten;
    return s;
}

Network::Network(std::vector<LayerSpec> layers, std::vector<std::size_t> input_shape)
    : layers_(std::move(layers)), input_shape_(std::move(input_shape)) {
    feature_shapes_.push_back(input_shape_);
    weights_.resize(layers_.size());
    biases_.resize(layers_.size());

    std::vector<std::size_t> shape = input_shape_;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        const LayerSpec& spec = layers_[i];
        switch (spec.kind) {
            case LayerKind::Conv2d: {
                if (shape.size() != 3 || shape[2] != spec.in_channels)
                    throw ShapeError(layer_label(i, spec) + ": expected input [H, W, " +
                                     std::to_string(spec.in_channels) + "], got " +
                                     dims_string(shape));
                if (shape[0] < spec.kernel_h || shape[1] < spec.kernel_w)
                    throw ShapeError(layer_label(i, spec) + ": kernel larger than input " +
                                     dims_string(shape));
                shape = {conv_out_dim(shape[0], spec.kernel_h, spec.stride),
                         conv_out_dim(shape[1], spec.kernel_w, spec.stride),
                         spec.out_channels};
                weights_[i] = Tensor({spec.out_channels, spec.kernel_h, spec.kernel_w,
                                      spec.in_channels});
                biases_[i] = Tensor({spec.out_channels});
                break;
            }
            case LayerKind::Dense: {
                if (shape.size() != 1 || shape[0] != spec.in_channels)
                    throw ShapeError(layer_label(i, spec) + ": expected input [" +
                                     std::to_string(spec.in_channels) + "], got " +
                                     dims_string(shape));
                shape = {spec.out_channels};
                weights_[i] = Tensor({spec.out_channels, spec.in_channels});
                biases_[i] = Tensor({spec.out_channels});
                break;
            }
            case LayerKind::Relu:
                break;
            case LayerKind::GlobalAvgPool:
                if (shape.size() != 3)
                    throw ShapeError(layer_label(i, spec) + ": expected input [H, W, C], got " +
                                     dims_string(shape));
                shape = {shape[2]};
                break;
            case LayerKind::Flatten: {
                std::size_t n = 1;
                for (std::size_t d : shape) n *= d;
                shape = {n};
                break;
            }
        }
        feature_shapes_.push_back(shape);
    }
}

void Network::init_params(std::uint64_t seed) {
    Rng rng(seed);
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        const LayerSpec& spec = layers_[i];
        if (!spec.has_params()) continue;
        std::size_t fan_in = spec.in_channels;
        std::size_t fan_out = spec.out_channels;
        if (spec.kind == LayerKind::Conv2d) {
            fan_in *= spec.kernel_h * spec.kernel_w;
            fan_out *= spec.kernel_h * spec.kernel_w;
        }
        const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        for (double& w : weights_[i].data) w = rng.uniform(-limit, limit);
        std::fill(biases_[i].data.begin(), biases_[i].data.end(), 0.0);
    }
}

std::vector<Tensor*> Network::parameters() {
    std::vector<Tensor*> out;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        if (!layers_[i].has_params()) continue;
        out.push_back(&weights_[i]);
        out.push_back(&biases_[i]);
    }
    return out;
}

std::vector<const Tensor*> Network::parameters() const {
    std::vector<const Tensor*> out;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        if (!layers_[i].has_params()) continue;
        out.push_back(&weights_[i]);
        out.push_back(&biases_[i]);
    }
    return out;
}

std::size_t Network::parameter_count() const {
    std::size_t n = 0;
    for (const Tensor* p : parameters()) n += p->numel();
    return n;
}

std::vector<Tensor> Network::make_grad_buffers() const {
    std::vector<Tensor> out;
    for (const Tensor* p : parameters()) out.emplace_back(p->shape);
    return out;
}

Tensor Network::forward(const Tensor& batch, ForwardTrace* trace) const {
    if (batch.shape.size() != input_shape_.size() + 1 ||
        !std::equal(input_shape_.begin(), input_shape_.end(), batch.shape.begin() + 1)) {
        throw ShapeError("network input: expected [N, ...] + " + dims_string(input_shape_) +
                         ", got " + batch.shape_string());
    }
    const std::size_t n = batch.shape[0];

    if (trace) {
        trace->activations.clear();
        trace->activations.reserve(layers_.size() + 1);
        trace->im2col.assign(layers_.size(), {});
        trace->activations.push_back(batch);
    }

    Tensor cur = batch;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        const LayerSpec& spec = layers_[i];
        Tensor next;
        switch (spec.kind) {
            case LayerKind::Conv2d: {
                const auto& in_shape = feature_shapes_[i];
                const auto& out_shape = feature_shapes_[i + 1];
                const std::size_t h = in_shape[0], w = in_shape[1], c = in_shape[2];
                const std::size_t oh = out_shape[0], ow = out_shape[1], oc = out_shape[2];
                const std::size_t k = spec.kernel_h * spec.kernel_w * c;
                const std::size_t cols = n * oh * ow;
                const std::size_t s = spec.stride;

                std::vector<double> col(k * cols);
                const double* src = cur.data.data();
                double* dst = col.data();
                for (std::size_t nn = 0; nn < n; ++nn) {
                    for (std::size_t oy = 0; oy < oh; ++oy) {
                        for (std::size_t ox = 0; ox < ow; ++ox) {
                            const std::size_t iy0 = oy * s, ix0 = ox * s;
                            for (std::size_t ky = 0; ky < spec.kernel_h; ++ky) {
                                const double* row =
                                    src + ((nn * h + iy0 + ky) * w + ix0) * c;
                                std::memcpy(dst + ky * spec.kernel_w * c, row,
                                            spec.kernel_w * c * sizeof(double));
                            }
                            dst += k;
                        }
                    }
                }

                next = Tensor({n, oh, ow, oc});
                Eigen::Map<const MatrixRM> wm(weights_[i].data.data(),
                                              static_cast<Index>(oc), static_cast<Index>(k));
                Eigen::Map<const MatrixCM> colm(col.data(), static_cast<Index>(k),
                                                static_cast<Index>(cols));
                Eigen::Map<MatrixCM> outm(next.data.data(), static_cast<Index>(oc),
                                          static_cast<Index>(cols));
                outm.noalias() = wm * colm;
                Eigen::Map<const Eigen::VectorXd> bias(biases_[i].data.data(),
                                                       static_cast<Index>(oc));
                outm.colwise() += bias;
                if (trace) trace->im2col[i] = std::move(col);
                break;
            }
            case LayerKind::Dense: {
                const std::size_t f = spec.in_channels, m = spec.out_channels;
                next = Tensor({n, m});
                Eigen::Map<const MatrixRM> x(cur.data.data(), static_cast<Index>(n),
                                             static_cast<Index>(f));
                Eigen::Map<const MatrixRM> wm(weights_[i].data.data(), static_cast<Index>(m),
                                              static_cast<Index>(f));
                Eigen::Map<MatrixRM> y(next.data.data(), static_cast<Index>(n),
                                       static_cast<Index>(m));
                y.noalias() = x * wm.transpose();
                Eigen::Map<const Eigen::RowVectorXd> bias(biases_[i].data.data(),
                                                          static_cast<Index>(m));
                y.rowwise() += bias;
                break;
            }
            case LayerKind::Relu: {
                next = cur;
                for (double& v : next.data) v = v > 0.0 ? v : 0.0;
                break;
            }
            case LayerKind::GlobalAvgPool: {
                const auto& in_shape = feature_shapes_[i];
                const std::size_t h = in_shape[0], w = in_shape[1], c = in_shape[2];
                const double inv = 1.0 / static_cast<double>(h * w);
                next = Tensor({n, c});
                const double* src = cur.data.data();
                for (std::size_t nn = 0; nn < n; ++nn) {
                    double* acc = next.data.data() + nn * c;
                    for (std::size_t px = 0; px < h * w; ++px) {
                        const double* row = src + (nn * h * w + px) * c;
                        for (std::size_t cc = 0; cc < c; ++cc) acc[cc] += row[cc];
                    }
                    for (std::size_t cc = 0; cc < c; ++cc) acc[cc] *= inv;
                }
                break;
            }
            case LayerKind::Flatten: {
                next = cur;
                std::size_t flat = 1;
                for (std::size_t d : feature_shapes_[i]) flat *= d;
                next.shape = {n, flat};
                break;
            }
        }
        cur = std::move(next);
        if (trace) trace->activations.push_back(cur);
    }
    return cur;
}

Tensor Network::backward(const ForwardTrace& trace, const Tensor& upstream,
                         std::vector<Tensor>& param_grads) const {
    if (trace.activations.size() != layers_.size() + 1)
        throw Error("backward: trace does not match this network");
    if (!same_shape(upstream, trace.activations.back()))
        throw ShapeError("backward: upstream gradient shape " + upstream.shape_string() +
                         " does not match forward output " +
                         trace.activations.back().shape_string());
    const std::size_t n = trace.activations.front().shape[0];

    // param_grads is aligned with parameters(): (weight, bias) per parametric layer.
    std::vector<std::size_t> grad_index(layers_.size(), 0);
    {
        std::size_t slot = 0;
        for (std::size_t i = 0; i < layers_.size(); ++i) {
            if (!layers_[i].has_params()) continue;
            grad_index[i] = slot;
            slot += 2;
        }
        if (slot != param_grads.size())
            throw Error("backward: gradient buffer count mismatch");
    }

    Tensor delta = upstream;
    for (std::size_t li = layers_.size(); li-- > 0;) {
        const LayerSpec& spec = layers_[li];
        const Tensor& input = trace.activations[li];
        Tensor prev;
        switch (spec.kind) {
            case LayerKind::Conv2d: {
                const auto& in_shape = feature_shapes_[li];
                const auto& out_shape = feature_shapes_[li + 1];
                const std::size_t h = in_shape[0], w = in_shape[1], c = in_shape[2];
                const std::size_t oh = out_shape[0], ow = out_shape[1], oc = out_shape[2];
                const std::size_t k = spec.kernel_h * spec.kernel_w * c;
                const std::size_t cols = n * oh * ow;
                const std::size_t s = spec.stride;
                const std::vector<double>& col = trace.im2col[li];
                if (col.size() != k * cols)
                    throw Error("backward: trace is missing conv intermediates");

                Tensor& dw = param_grads[grad_index[li]];
                Tensor& db = param_grads[grad_index[li] + 1];
                Eigen::Map<const MatrixCM> dym(delta.data.data(), static_cast<Index>(oc),
                                               static_cast<Index>(cols));
                Eigen::Map<const MatrixCM> colm(col.data(), static_cast<Index>(k),
                                                static_cast<Index>(cols));
                Eigen::Map<MatrixRM> dwm(dw.data.data(), static_cast<Index>(oc),
                                         static_cast<Index>(k));
                dwm.noalias() += dym * colm.transpose();
                Eigen::Map<Eigen::VectorXd> dbm(db.data.data(), static_cast<Index>(oc));
                dbm.noalias() += dym.rowwise().sum();

                MatrixCM dcol(static_cast<Index>(k), static_cast<Index>(cols));
                Eigen::Map<const MatrixRM> wm(weights_[li].data.data(),
                                              static_cast<Index>(oc), static_cast<Index>(k));
                dcol.noalias() = wm.transpose() * dym;

                prev = Tensor({n, h, w, c});
                double* dx = prev.data.data();
                const double* dcol_ptr = dcol.data();
                std::size_t j = 0;
                for (std::size_t nn = 0; nn < n; ++nn) {
                    for (std::size_t oy = 0; oy < oh; ++oy) {
                        for (std::size_t ox = 0; ox < ow; ++ox, ++j) {
                            const double* column = dcol_ptr + j * k;
                            const std::size_t iy0 = oy * s, ix0 = ox * s;
                            for (std::size_t ky = 0; ky < spec.kernel_h; ++ky) {
                                double* row = dx + ((nn * h + iy0 + ky) * w + ix0) * c;
                                const double* seg = column + ky * spec.kernel_w * c;
                                for (std::size_t t = 0; t < spec.kernel_w * c; ++t)
                                    row[t] += seg[t];
                            }
                        }
                    }
                }
                break;
            }
            case LayerKind::Dense: {
                const std::size_t f = spec.in_channels, m = spec.out_channels;
                Tensor& dw = param_grads[grad_index[li]];
                Tensor& db = param_grads[grad_index[li] + 1];
                Eigen::Map<const MatrixRM> dym(delta.data.data(), static_cast<Index>(n),
                                               static_cast<Index>(m));
                Eigen::Map<const MatrixRM> x(input.data.data(), static_cast<Index>(n),
                                             static_cast<Index>(f));
                Eigen::Map<MatrixRM> dwm(dw.data.data(), static_cast<Index>(m),
                                         static_cast<Index>(f));
                dwm.noalias() += dym.transpose() * x;
                Eigen::Map<Eigen::RowVectorXd> dbm(db.data.data(), static_cast<Index>(m));
                dbm.noalias() += dym.colwise().sum();

                prev = Tensor({n, f});
                Eigen::Map<const MatrixRM> wm(weights_[li].data.data(), static_cast<Index>(m),
                                              static_cast<Index>(f));
                Eigen::Map<MatrixRM> dxm(prev.data.data(), static_cast<Index>(n),
                                         static_cast<Index>(f));
                dxm.noalias() = dym * wm;
                break;
            }
            case LayerKind::Relu: {
                prev = delta;
                // Subgradient at exactly 0 is defined as 0.
                for (std::size_t t = 0; t < prev.data.size(); ++t)
                    if (!(input.data[t] > 0.0)) prev.data[t] = 0.0;
                break;
            }
            case LayerKind::GlobalAvgPool: {
                const auto& in_shape = feature_shapes_[li];
                const std::size_t h = in_shape[0], w = in_shape[1], c = in_shape[2];
                const double inv = 1.0 / static_cast<double>(h * w);
                prev = Tensor({n, h, w, c});
                double* dx = prev.data.data();
                for (std::size_t nn = 0; nn < n; ++nn) {
                    const double* dy = delta.data.data() + nn * c;
                    for (std::size_t px = 0; px < h * w; ++px) {
                        double* row = dx + (nn * h * w + px) * c;
                        for (std::size_t cc = 0; cc < c; ++cc) row[cc] = dy[cc] * inv;
                    }
                }
                break;
            }
            case LayerKind::Flatten: {
                prev = delta;
                prev.shape = input.shape;
                break;
            }
        }
        delta = std::move(prev);
    }
    return delta;
}

LossResult mse_loss(const Tensor& pred, const Tensor& target) {
    if (!same_shape(pred, target))
        throw ShapeError("mse_loss: shape mismatch " + pred.shape_string() + " vs " +
                         target.shape_string());
    const std::size_t n = pred.data.size();
    if (n == 0) throw ShapeError("mse_loss: empty tensors");
    LossResult out;
    out.grad = Tensor(pred.shape);
    double acc = 0.0;
    const double inv = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double d = pred.data[i] - target.data[i];
        acc += d * d;
        out.grad.data[i] = 2.0 * d * inv;
    }
    out.value = acc * inv;
    return out;
}

OptimizerState OptimizerState::sgd(double lr) {
    OptimizerState s;
    s.method = OptMethod::Sgd;
    s.learning_rate = lr;
    return s;
}

OptimizerState OptimizerState::adam(double lr) {
    OptimizerState s;
    s.method = OptMethod::Adam;
    s.learning_rate = lr;
    return s;
}

void OptimizerState::attach(const std::vector<Tensor*>& params) {
    first_moment.clear();
    second_moment.clear();
    step_count = 0;
    if (method != OptMethod::Adam) return;
    for (const Tensor* p : params) {
        first_moment.emplace_back(p->numel(), 0.0);
        second_moment.emplace_back(p->numel(), 0.0);
    }
}

void OptimizerState::step(const std::vector<Tensor*>& params,
                          const std::vector<Tensor>& grads) {
    if (params.size() != grads.size())
        throw ShapeError("optimizer_step: parameter/gradient count mismatch");
    for (std::size_t i = 0; i < params.size(); ++i)
        if (params[i]->shape != grads[i].shape)
            throw ShapeError("optimizer_step: gradient " + std::to_string(i) +
                             " shape mismatch");

    ++step_count;
    if (method == OptMethod::Sgd) {
        for (std::size_t i = 0; i < params.size(); ++i) {
            double* p = params[i]->data.data();
            const double* g = grads[i].data.data();
            const std::size_t count = params[i]->data.size();
            for (std::size_t t = 0; t < count; ++t) p[t] -= learning_rate * g[t];
        }
        return;
    }

    if (first_moment.size() != params.size()) {
        first_moment.clear();
        second_moment.clear();
        for (const Tensor* p : params) {
            first_moment.emplace_back(p->numel(), 0.0);
            second_moment.emplace_back(p->numel(), 0.0);
        }
    }
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_count));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_count));
    for (std::size_t i = 0; i < params.size(); ++i) {
        double* p = params[i]->data.data();
        const double* g = grads[i].data.data();
        double* m = first_moment[i].data();
        double* v = second_moment[i].data();
        const std::size_t count = params[i]->data.size();
        for (std::size_t t = 0; t < count; ++t) {
            m[t] = beta1 * m[t] + (1.0 - beta1) * g[t];
            v[t] = beta2 * v[t] + (1.0 - beta2) * g[t] * g[t];
            const double mhat = m[t] / bc1;
            const double vhat = v[t] / bc2;
            p[t] -= learning_rate * mhat / (std::sqrt(vhat) + epsilon);
        }
    }
}

void save_checkpoint(const Network& net, const std::filesystem::path& path,
                     std::uint64_t seed) {
    nlohmann::ordered_json header;
    header["format_version"] = 1;
    header["seed"] = seed;
    header["input_shape"] = net.input_shape();
    nlohmann::ordered_json layers = nlohmann::ordered_json::array();
    for (const LayerSpec& spec : net.layers()) {
        nlohmann::ordered_json j;
        j["kind"] = to_string(spec.kind);
        if (spec.kind == LayerKind::Conv2d) {
            j["kernel"] = {spec.kernel_h, spec.kernel_w};
            j["stride"] = spec.stride;
        }
        if (spec.has_params()) {
            j["in_channels"] = spec.in_channels;
            j["out_channels"] = spec.out_channels;
        }
        layers.push_back(j);
    }
    header["layers"] = layers;
    header["param_count"] = net.parameter_count();
    const std::string header_text = header.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open checkpoint for writing: " + path.string());
    out.write("VPBNNCK1", 8);
    binio::write_u64le(out, header_text.size());
    out.write(header_text.data(), static_cast<std::streamsize>(header_text.size()));
    std::vector<float> blob;
    blob.reserve(net.parameter_count());
    for (const Tensor* p : net.parameters())
        for (double v : p->data) blob.push_back(static_cast<float>(v));
    binio::write_f32le(out, blob);
    if (!out) throw IoError("failed writing checkpoint: " + path.string());
}

Network load_checkpoint(const std::filesystem::path& path, std::uint64_t* seed) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint: " + path.string());
    char magic[8] = {};
    in.read(magic, 8);
    if (std::string(magic, 8) != "VPBNNCK1")
        throw IoError("not a checkpoint file: " + path.string());
    const std::uint64_t header_len = binio::read_u64le(in);
    std::string header_text(header_len, '\0');
    in.read(header_text.data(), static_cast<std::streamsize>(header_len));
    if (!in) throw IoError("truncated checkpoint header: " + path.string());
    const nlohmann::json header = nlohmann::json::parse(header_text);

    std::vector<LayerSpec> layers;
    for (const auto& j : header.at("layers")) {
        const LayerKind kind = layer_kind_from_string(j.at("kind").get<std::string>());
        switch (kind) {
            case LayerKind::Conv2d:
                layers.push_back(LayerSpec::conv2d(j.at("in_channels"), j.at("out_channels"),
                                                   j.at("kernel")[0], j.at("stride")));
                break;
            case LayerKind::Dense:
                layers.push_back(LayerSpec::dense(j.at("in_channels"), j.at("out_channels")));
                break;
            case LayerKind::Relu: layers.push_back(LayerSpec::relu()); break;
            case LayerKind::GlobalAvgPool: layers.push_back(LayerSpec::global_avg_pool()); break;
            case LayerKind::Flatten: layers.push_back(LayerSpec::flatten()); break;
        }
    }
    Network net(layers, header.at("input_shape").get<std::vector<std::size_t>>());

    const std::size_t count = header.at("param_count").get<std::size_t>();
    if (count != net.parameter_count())
        throw IoError("checkpoint parameter count mismatch: " + path.string());
    std::vector<float> blob(count);
    binio::read_f32le(in, blob);
    if (!in) throw IoError("truncated checkpoint blob: " + path.string());
    std::size_t offset = 0;
    for (Tensor* p : net.parameters()) {
        for (double& v : p->data) v = static_cast<double>(blob[offset++]);
    }
    if (seed) *seed = header.at("seed").get<std::uint64_t>();
    return net;
}

}  // namespace vpbench::nn
