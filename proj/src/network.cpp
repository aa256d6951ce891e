#include "fineprune/network.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "fineprune/rng.hpp"

namespace fineprune {

namespace {

template <class... Ts>
struct overloaded : Ts... {
    using Ts::operator()...;
};

}  // namespace

std::string describe(const Layer& layer) {
    std::ostringstream os;
    std::visit(overloaded{
                   [&](const ConvLayer& c) {
                       os << "conv(" << c.filters << 'x' << c.channels << 'x' << c.kernel_h << 'x'
                          << c.kernel_w << ", stride " << c.stride << ", pad " << c.padding
                          << (c.relu ? ", relu)" : ")");
                   },
                   [&](const PoolLayer& p) { os << "maxpool(" << p.window << ", stride " << p.stride << ')'; },
                   [&](const FlattenLayer&) { os << "flatten"; },
                   [&](const DenseLayer& d) {
                       os << "fc(" << d.inputs << "->" << d.outputs << (d.relu ? ", relu)" : ")");
                   },
                   [&](const OutputLayer& o) { os << "output(" << o.inputs << "->" << o.outputs << ')'; },
               },
               layer);
    return os.str();
}

ModelSpec ModelSpec::make(std::array<std::size_t, 3> input, std::vector<Layer> layers) {
    if (input[0] == 0 || input[1] == 0 || input[2] == 0) {
        throw ShapeError("model input dimensions must be positive");
    }
    if (layers.empty() || !std::holds_alternative<OutputLayer>(layers.back())) {
        throw ShapeError("model must end with exactly one output layer");
    }
    ModelSpec spec;
    spec.input_ = input;
    Shape cur{input[0], input[1], input[2]};
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const std::string where = "layer " + std::to_string(i) + " " + describe(layers[i]);
        const bool last = i + 1 == layers.size();
        if (!last && std::holds_alternative<OutputLayer>(layers[i])) {
            throw ShapeError(where + ": output layer must be last");
        }
        std::visit(overloaded{
                       [&](const ConvLayer& c) {
                           if (cur.size() != 3) throw ShapeError(where + ": expects a C,H,W input");
                           if (c.channels != cur[0]) {
                               throw ShapeError(where + ": channel dimension " +
                                                std::to_string(c.channels) + " but input has " +
                                                std::to_string(cur[0]));
                           }
                           if (c.filters == 0 || c.kernel_h == 0 || c.kernel_w == 0 || c.stride == 0) {
                               throw ShapeError(where + ": filters, kernel and stride must be positive");
                           }
                           auto extent = [&](std::size_t in, std::size_t k, const char* axis) {
                               const std::size_t padded = in + 2 * c.padding;
                               if (padded < k || (padded - k) % c.stride != 0) {
                                   throw ShapeError(where + ": " + axis + " " + std::to_string(in) +
                                                    " does not tile evenly");
                               }
                               return (padded - k) / c.stride + 1;
                           };
                           cur = {c.filters, extent(cur[1], c.kernel_h, "height"),
                                  extent(cur[2], c.kernel_w, "width")};
                       },
                       [&](const PoolLayer& p) {
                           if (cur.size() != 3) throw ShapeError(where + ": expects a C,H,W input");
                           if (p.window == 0 || p.stride == 0) {
                               throw ShapeError(where + ": window and stride must be >= 1");
                           }
                           if (cur[1] < p.window || cur[2] < p.window) {
                               throw ShapeError(where + ": input smaller than the window");
                           }
                           cur = {cur[0], (cur[1] - p.window) / p.stride + 1,
                                  (cur[2] - p.window) / p.stride + 1};
                       },
                       [&](const FlattenLayer&) { cur = {element_count(cur)}; },
                       [&](const DenseLayer& d) {
                           if (cur.size() != 1 || d.inputs != cur[0]) {
                               throw ShapeError(where + ": input width " + std::to_string(d.inputs) +
                                                " but previous layer yields " + shape_string(cur));
                           }
                           if (d.outputs == 0) throw ShapeError(where + ": zero outputs");
                           cur = {d.outputs};
                       },
                       [&](const OutputLayer& o) {
                           if (cur.size() != 1 || o.inputs != cur[0]) {
                               throw ShapeError(where + ": input width " + std::to_string(o.inputs) +
                                                " but previous layer yields " + shape_string(cur));
                           }
                           if (o.outputs < 2) throw ShapeError(where + ": needs at least two classes");
                           cur = {o.outputs};
                       },
                   },
                   layers[i]);
        spec.shapes_.push_back(cur);
    }
    spec.classes_ = std::get<OutputLayer>(layers.back()).outputs;
    spec.layers_ = std::move(layers);
    return spec;
}

ModelSpec ModelSpec::two_conv_two_fc(std::size_t image_h, std::size_t image_w, std::size_t classes,
                                     std::size_t conv1_filters, std::size_t conv2_filters,
                                     std::size_t hidden) {
    const std::size_t flat = conv2_filters * (image_h / 4) * (image_w / 4);
    return make({1, image_h, image_w},
                {ConvLayer{conv1_filters, 1, 3, 3, 1, 1, true}, PoolLayer{2, 2},
                 ConvLayer{conv2_filters, conv1_filters, 3, 3, 1, 1, true}, PoolLayer{2, 2},
                 FlattenLayer{}, DenseLayer{flat, hidden, true}, OutputLayer{hidden, classes}});
}

bool ModelSpec::has_params(std::size_t layer) const {
    const Layer& l = layers_.at(layer);
    return std::holds_alternative<ConvLayer>(l) || std::holds_alternative<DenseLayer>(l) ||
           std::holds_alternative<OutputLayer>(l);
}

std::size_t ModelSpec::channel_count(std::size_t layer) const {
    const Layer& l = layers_.at(layer);
    if (const auto* c = std::get_if<ConvLayer>(&l)) return c->filters;
    if (const auto* d = std::get_if<DenseLayer>(&l)) return d->outputs;
    throw std::invalid_argument("layer " + std::to_string(layer) + " (" + describe(l) +
                                ") has no prunable channels");
}

std::optional<std::size_t> ModelSpec::last_conv_layer() const {
    for (std::size_t i = layers_.size(); i-- > 0;) {
        if (std::holds_alternative<ConvLayer>(layers_[i])) return i;
    }
    return std::nullopt;
}

namespace {

struct ParamShapes {
    std::vector<std::size_t> weight;
    std::vector<std::size_t> bias;
    std::size_t fan_in = 0;
    std::size_t fan_out = 0;
};

std::optional<ParamShapes> param_shapes(const Layer& layer) {
    if (const auto* c = std::get_if<ConvLayer>(&layer)) {
        return ParamShapes{{c->filters, c->channels, c->kernel_h, c->kernel_w},
                           {c->filters},
                           c->channels * c->kernel_h * c->kernel_w,
                           c->filters * c->kernel_h * c->kernel_w};
    }
    if (const auto* d = std::get_if<DenseLayer>(&layer)) {
        return ParamShapes{{d->inputs, d->outputs}, {d->outputs}, d->inputs, d->outputs};
    }
    if (const auto* o = std::get_if<OutputLayer>(&layer)) {
        return ParamShapes{{o->inputs, o->outputs}, {o->outputs}, o->inputs, o->outputs};
    }
    return std::nullopt;
}

}  // namespace

void Parameters::check_against(const ModelSpec& spec) const {
    if (layers.size() != spec.layers().size()) {
        throw ShapeError("parameters have " + std::to_string(layers.size()) +
                         " layers, model has " + std::to_string(spec.layers().size()));
    }
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const auto shapes = param_shapes(spec.layers()[i]);
        const LayerParams& p = layers[i];
        if (!shapes) {
            if (!p.weight.empty() || !p.bias.empty()) {
                throw ShapeError("layer " + std::to_string(i) + " takes no parameters");
            }
            continue;
        }
        if (p.weight.shape() != shapes->weight || p.bias.shape() != shapes->bias) {
            throw ShapeError("layer " + std::to_string(i) + " parameter shapes " +
                             shape_string(p.weight.shape()) + "/" + shape_string(p.bias.shape()) +
                             " do not match expected " + shape_string(shapes->weight) + "/" +
                             shape_string(shapes->bias));
        }
    }
}

bool Parameters::all_finite() const {
    return std::all_of(layers.begin(), layers.end(), [](const LayerParams& p) {
        return p.weight.all_finite() && p.bias.all_finite();
    });
}

PruneMask PruneMask::all_live(const ModelSpec& spec, std::size_t layer) {
    return {layer, std::vector<bool>(spec.channel_count(layer), true)};
}

std::size_t PruneMask::live_count() const {
    return static_cast<std::size_t>(std::count(live.begin(), live.end(), true));
}

void PruneMask::check_against(const ModelSpec& spec) const {
    if (layer >= spec.layers().size()) {
        throw std::invalid_argument("prune mask targets missing layer " + std::to_string(layer));
    }
    const std::size_t n = spec.channel_count(layer);
    if (live.size() != n) {
        throw std::invalid_argument("prune mask has " + std::to_string(live.size()) +
                                    " flags for a layer with " + std::to_string(n) + " channels");
    }
    if (live_count() == 0) throw std::invalid_argument("prune mask leaves no live channel");
}

Parameters init_params(const ModelSpec& spec, std::uint64_t seed) {
    Rng rng(seed);
    Parameters params;
    for (const Layer& layer : spec.layers()) {
        LayerParams lp;
        if (const auto shapes = param_shapes(layer)) {
            lp.weight = Tensor(shapes->weight);
            lp.bias = Tensor(shapes->bias);
            const double limit =
                std::sqrt(6.0 / static_cast<double>(shapes->fan_in + shapes->fan_out));
            for (double& w : lp.weight.data()) w = rng.uniform(-limit, limit);
        }
        params.layers.push_back(std::move(lp));
    }
    return params;
}

// ---------------------------------------------------------------------------

namespace {

/// Zeroes dead channels of a [B,C,...] tensor in place.
void apply_mask(Tensor& t, const PruneMask& mask) {
    const std::size_t B = t.dim(0);
    const std::size_t C = t.dim(1);
    const std::size_t inner = t.size() / (B * C);
    for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t c = 0; c < C; ++c) {
            if (mask.live[c]) continue;
            auto first = t.data().begin() + static_cast<std::ptrdiff_t>((b * C + c) * inner);
            std::fill(first, first + static_cast<std::ptrdiff_t>(inner), 0.0);
        }
    }
}

struct LayerCache {
    Tensor input;
    Tensor pre;  // pre-activation for conv/dense/output
    std::vector<std::size_t> argmax;
};

/// Shared forward pass; fills `cache` when non-null.
Tensor run_forward(const ModelSpec& spec, const Parameters& params, const Tensor& batch,
                   const PruneMask* mask, const CaptureRequest& capture,
                   std::vector<LayerCache>* cache, ForwardResult* result) {
    const auto& in = spec.input();
    if (batch.rank() != 4 || batch.dim(1) != in[0] || batch.dim(2) != in[1] ||
        batch.dim(3) != in[2]) {
        throw ShapeError("batch shape " + shape_string(batch.shape()) +
                         " does not match model input [B," + std::to_string(in[0]) + "," +
                         std::to_string(in[1]) + "," + std::to_string(in[2]) + "]");
    }
    if (mask) mask->check_against(spec);
    if (cache) cache->assign(spec.layers().size(), {});

    Tensor x = batch;
    for (std::size_t i = 0; i < spec.layers().size(); ++i) {
        const Layer& layer = spec.layers()[i];
        const LayerParams& p = params.layers.at(i);
        Tensor pre;
        Tensor out;
        std::vector<std::size_t> argmax;
        std::visit(overloaded{
                       [&](const ConvLayer& c) {
                           pre = conv2d(x, p.weight, p.bias, {c.stride, c.padding});
                           out = c.relu ? relu(pre) : pre;
                       },
                       [&](const PoolLayer& pl) {
                           out = maxpool2d(x, pl.window, pl.stride, cache ? &argmax : nullptr);
                       },
                       [&](const FlattenLayer&) { out = x.reshaped({x.dim(0), x.size() / x.dim(0)}); },
                       [&](const DenseLayer& d) {
                           pre = fully_connected(x, p.weight, p.bias);
                           out = d.relu ? relu(pre) : pre;
                       },
                       [&](const OutputLayer&) {
                           pre = fully_connected(x, p.weight, p.bias);
                           out = pre;
                       },
                   },
                   layer);
        if (mask && mask->layer == i) apply_mask(out, *mask);
        if (result) {
            if (capture.pre.contains(i) && !pre.empty()) result->pre_trace[i] = pre;
            if (capture.post.contains(i)) result->trace[i] = out;
        }
        if (cache) {
            (*cache)[i].input = std::move(x);
            (*cache)[i].pre = std::move(pre);
            (*cache)[i].argmax = std::move(argmax);
        }
        x = std::move(out);
    }
    return x;
}

}  // namespace

ForwardResult forward(const ModelSpec& spec, const Parameters& params, const Tensor& batch,
                      const PruneMask* mask, const CaptureRequest& capture) {
    params.check_against(spec);
    ForwardResult result;
    result.logits = run_forward(spec, params, batch, mask, capture, nullptr, &result);
    return result;
}

Gradient loss_gradient(const ModelSpec& spec, const Parameters& params, const Tensor& batch,
                       std::span<const int> labels, const PruneMask* mask) {
    std::vector<LayerCache> cache;
    const Tensor logits = run_forward(spec, params, batch, mask, {}, &cache, nullptr);
    LossAndGrad lg = softmax_cross_entropy(logits, labels);

    Gradient out;
    out.loss = lg.loss;
    out.grads.layers.resize(spec.layers().size());
    Tensor g = std::move(lg.d_logits);
    for (std::size_t i = spec.layers().size(); i-- > 0;) {
        const Layer& layer = spec.layers()[i];
        const LayerParams& p = params.layers[i];
        LayerCache& c = cache[i];
        if (mask && mask->layer == i) apply_mask(g, *mask);
        std::visit(overloaded{
                       [&](const ConvLayer& conv) {
                           if (conv.relu) g = relu_backward(c.pre, g);
                           Conv2dGrads cg = conv2d_backward(c.input, p.weight, g, {conv.stride, conv.padding});
                           out.grads.layers[i] = {std::move(cg.d_weight), std::move(cg.d_bias)};
                           g = std::move(cg.d_input);
                       },
                       [&](const PoolLayer&) { g = maxpool2d_backward(c.input.shape(), c.argmax, g); },
                       [&](const FlattenLayer&) { g = g.reshaped(c.input.shape()); },
                       [&](const DenseLayer& d) {
                           if (d.relu) g = relu_backward(c.pre, g);
                           DenseGrads dg = fully_connected_backward(c.input, p.weight, g);
                           out.grads.layers[i] = {std::move(dg.d_weight), std::move(dg.d_bias)};
                           g = std::move(dg.d_input);
                       },
                       [&](const OutputLayer&) {
                           DenseGrads dg = fully_connected_backward(c.input, p.weight, g);
                           out.grads.layers[i] = {std::move(dg.d_weight), std::move(dg.d_bias)};
                           g = std::move(dg.d_input);
                       },
                   },
                   layer);
    }
    return out;
}

namespace {
constexpr std::size_t kEvalChunk = 256;
}

std::vector<int> predict(const ModelSpec& spec, const Parameters& params, const Dataset& data,
                         const PruneMask* mask) {
    params.check_against(spec);
    std::vector<int> out;
    out.reserve(data.size());
    for (std::size_t first = 0; first < data.size(); first += kEvalChunk) {
        const std::size_t n = std::min(kEvalChunk, data.size() - first);
        const Tensor logits =
            run_forward(spec, params, data.batch_range(first, n), mask, {}, nullptr, nullptr);
        const std::size_t M = logits.dim(1);
        for (std::size_t b = 0; b < n; ++b) {
            auto row = logits.data().subspan(b * M, M);
            out.push_back(static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin()));
        }
    }
    return out;
}

double dataset_loss(const ModelSpec& spec, const Parameters& params, const Dataset& data,
                    const PruneMask* mask) {
    if (data.empty()) throw std::invalid_argument("dataset_loss: empty dataset");
    double total = 0.0;
    for (std::size_t first = 0; first < data.size(); first += kEvalChunk) {
        const std::size_t n = std::min(kEvalChunk, data.size() - first);
        const Tensor logits =
            run_forward(spec, params, data.batch_range(first, n), mask, {}, nullptr, nullptr);
        const auto labels = std::span<const int>(data.labels).subspan(first, n);
        total += softmax_cross_entropy(logits, labels).loss * static_cast<double>(n);
    }
    return total / static_cast<double>(data.size());
}

void TrainConfig::validate() const {
    if (batch_size < 1) throw std::invalid_argument("train config: batch_size must be >= 1");
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
        throw std::invalid_argument("train config: learning_rate must be > 0");
    }
}

DivergenceError::DivergenceError(std::size_t epoch_, std::size_t batch_, double loss)
    : std::runtime_error("training diverged at epoch " + std::to_string(epoch_) + ", batch " +
                         std::to_string(batch_) + " (loss " + std::to_string(loss) + ")"),
      epoch(epoch_),
      batch(batch_) {}

Parameters train(const ModelSpec& spec, const Parameters& init, const Dataset& data,
                 const TrainConfig& cfg, const EpochHook& hook) {
    cfg.validate();
    init.check_against(spec);
    if (cfg.epochs == 0) return init;
    if (data.empty()) throw std::invalid_argument("train: dataset is empty");
    if (data.classes > spec.classes()) {
        throw std::invalid_argument("train: dataset has more classes than the model outputs");
    }
    const PruneMask* mask = cfg.mask ? &*cfg.mask : nullptr;
    if (mask) mask->check_against(spec);

    Parameters params = init;
    std::vector<std::size_t> order(data.size());
    std::vector<int> labels;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), 0);
        Rng rng(derive_seed(cfg.seed, epoch));
        rng.shuffle(std::span<std::size_t>(order));

        double loss_sum = 0.0;
        std::size_t batch_index = 0;
        for (std::size_t first = 0; first < order.size(); first += cfg.batch_size, ++batch_index) {
            const std::size_t n = std::min(cfg.batch_size, order.size() - first);
            const auto idx = std::span<const std::size_t>(order).subspan(first, n);
            labels.clear();
            for (std::size_t k : idx) labels.push_back(data.labels[k]);

            Gradient g = loss_gradient(spec, params, data.batch(idx), labels, mask);
            if (!std::isfinite(g.loss)) throw DivergenceError(epoch, batch_index, g.loss);
            loss_sum += g.loss * static_cast<double>(n);
            for (std::size_t i = 0; i < params.layers.size(); ++i) {
                LayerParams& p = params.layers[i];
                const LayerParams& dp = g.grads.layers[i];
                if (p.weight.empty()) continue;
                for (std::size_t k = 0; k < p.weight.size(); ++k) {
                    p.weight[k] -= cfg.learning_rate * dp.weight[k];
                }
                for (std::size_t k = 0; k < p.bias.size(); ++k) {
                    p.bias[k] -= cfg.learning_rate * dp.bias[k];
                }
            }
        }
        if (!params.all_finite()) throw DivergenceError(epoch, batch_index, loss_sum);
        if (hook && !hook(epoch, params, loss_sum / static_cast<double>(data.size()))) break;
    }
    return params;
}

}  // namespace fineprune
