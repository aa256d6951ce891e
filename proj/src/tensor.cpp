#include "fineprune/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace fineprune {

std::size_t element_count(const std::vector<std::size_t>& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                           std::multiplies<>());
}

std::string shape_string(const std::vector<std::size_t>& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

Tensor::Tensor(std::vector<std::size_t> shape, double fill)
    : shape_(std::move(shape)), data_(element_count(shape_), fill) {
    for (std::size_t d : shape_) {
        if (d == 0) throw ShapeError("tensor dimension must be positive: " + shape_string(shape_));
    }
}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != element_count(shape_)) {
        throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                         " does not match shape " + shape_string(shape_));
    }
}

std::size_t Tensor::dim(std::size_t axis) const {
    if (axis >= shape_.size()) {
        throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " +
                         shape_string(shape_));
    }
    return shape_[axis];
}

std::size_t Tensor::flat_index(std::initializer_list<std::size_t> index) const {
    if (index.size() != shape_.size()) {
        throw ShapeError("index rank " + std::to_string(index.size()) + " vs tensor rank " +
                         std::to_string(shape_.size()));
    }
    std::size_t flat = 0;
    std::size_t axis = 0;
    for (std::size_t i : index) {
        if (i >= shape_[axis]) throw std::out_of_range("tensor index out of range");
        flat = flat * shape_[axis] + i;
        ++axis;
    }
    return flat;
}

double& Tensor::at(std::initializer_list<std::size_t> index) { return data_[flat_index(index)]; }
double Tensor::at(std::initializer_list<std::size_t> index) const {
    return data_[flat_index(index)];
}

Tensor Tensor::reshaped(std::vector<std::size_t> shape) const {
    return Tensor(std::move(shape), data_);
}

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

bool Tensor::all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

namespace {

void require_rank(const Tensor& t, std::size_t rank, const char* what) {
    if (t.rank() != rank) {
        throw ShapeError(std::string(what) + " must have rank " + std::to_string(rank) +
                         ", got shape " + shape_string(t.shape()));
    }
}

std::size_t conv_out_extent(std::size_t in, std::size_t k, Conv2dGeometry g, const char* axis) {
    const std::size_t padded = in + 2 * g.padding;
    if (padded < k || (padded - k) % g.stride != 0) {
        throw ShapeError(std::string("conv2d: ") + axis + " extent " + std::to_string(in) +
                         " with padding " + std::to_string(g.padding) + ", kernel " +
                         std::to_string(k) + ", stride " + std::to_string(g.stride) +
                         " does not tile evenly");
    }
    return (padded - k) / g.stride + 1;
}

// Output columns `o` whose input column o*stride + k - pad falls in [0, in).
struct ValidRange {
    std::size_t lo;
    std::size_t hi;
};

ValidRange valid_outputs(std::size_t out, std::size_t in, std::size_t k, Conv2dGeometry g) {
    const long s = static_cast<long>(g.stride);
    const long offset = static_cast<long>(k) - static_cast<long>(g.padding);
    // need o*s + offset >= 0 and o*s + offset <= in-1
    long lo = 0;
    if (offset < 0) lo = (-offset + s - 1) / s;
    const long top = static_cast<long>(in) - 1 - offset;
    long hi = top < 0 ? 0 : top / s + 1;
    hi = std::min(hi, static_cast<long>(out));
    if (lo > hi) lo = hi;
    return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

struct ConvDims {
    std::size_t B, C, H, W, F, Kh, Kw, Ho, Wo;
};

ConvDims check_conv(const Tensor& input, const Tensor& weight, Conv2dGeometry g) {
    require_rank(input, 4, "conv2d input");
    require_rank(weight, 4, "conv2d weight");
    if (g.stride == 0) throw ShapeError("conv2d: stride must be positive");
    ConvDims d{};
    d.B = input.dim(0);
    d.C = input.dim(1);
    d.H = input.dim(2);
    d.W = input.dim(3);
    d.F = weight.dim(0);
    d.Kh = weight.dim(2);
    d.Kw = weight.dim(3);
    if (weight.dim(1) != d.C) {
        throw ShapeError("conv2d: input channel dimension C=" + std::to_string(d.C) +
                         " does not match weight channel dimension " +
                         std::to_string(weight.dim(1)));
    }
    d.Ho = conv_out_extent(d.H, d.Kh, g, "height");
    d.Wo = conv_out_extent(d.W, d.Kw, g, "width");
    return d;
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, Conv2dGeometry g) {
    const ConvDims d = check_conv(input, weight, g);
    require_rank(bias, 1, "conv2d bias");
    if (bias.dim(0) != d.F) {
        throw ShapeError("conv2d: bias length " + std::to_string(bias.dim(0)) +
                         " does not match filter count F=" + std::to_string(d.F));
    }
    Tensor out({d.B, d.F, d.Ho, d.Wo});
    const double* in = input.data().data();
    const double* w = weight.data().data();
    double* o = out.data().data();
    const std::size_t plane_in = d.H * d.W;
    const std::size_t plane_out = d.Ho * d.Wo;

    for (std::size_t b = 0; b < d.B; ++b) {
        for (std::size_t f = 0; f < d.F; ++f) {
            double* op = o + (b * d.F + f) * plane_out;
            std::fill(op, op + plane_out, bias[f]);
            for (std::size_t c = 0; c < d.C; ++c) {
                const double* ip = in + (b * d.C + c) * plane_in;
                const double* wp = w + ((f * d.C + c) * d.Kh) * d.Kw;
                for (std::size_t kh = 0; kh < d.Kh; ++kh) {
                    const ValidRange rows = valid_outputs(d.Ho, d.H, kh, g);
                    for (std::size_t kw = 0; kw < d.Kw; ++kw) {
                        const double wv = wp[kh * d.Kw + kw];
                        const ValidRange cols = valid_outputs(d.Wo, d.W, kw, g);
                        for (std::size_t oh = rows.lo; oh < rows.hi; ++oh) {
                            const std::size_t ih = oh * g.stride + kh - g.padding;
                            const double* irow = ip + ih * d.W;
                            double* orow = op + oh * d.Wo;
                            for (std::size_t ow = cols.lo; ow < cols.hi; ++ow) {
                                orow[ow] += wv * irow[ow * g.stride + kw - g.padding];
                            }
                        }
                    }
                }
            }
        }
    }
    return out;
}

Conv2dGrads conv2d_backward(const Tensor& input, const Tensor& weight, const Tensor& d_output,
                            Conv2dGeometry g) {
    const ConvDims d = check_conv(input, weight, g);
    if (d_output.shape() != std::vector<std::size_t>{d.B, d.F, d.Ho, d.Wo}) {
        throw ShapeError("conv2d_backward: d_output shape " + shape_string(d_output.shape()) +
                         " does not match forward output shape");
    }
    Conv2dGrads grads{Tensor(input.shape()), Tensor(weight.shape()), Tensor({d.F})};
    const double* in = input.data().data();
    const double* w = weight.data().data();
    const double* go = d_output.data().data();
    double* gi = grads.d_input.data().data();
    double* gw = grads.d_weight.data().data();
    const std::size_t plane_in = d.H * d.W;
    const std::size_t plane_out = d.Ho * d.Wo;

    for (std::size_t b = 0; b < d.B; ++b) {
        for (std::size_t f = 0; f < d.F; ++f) {
            const double* gop = go + (b * d.F + f) * plane_out;
            double bsum = 0.0;
            for (std::size_t i = 0; i < plane_out; ++i) bsum += gop[i];
            grads.d_bias[f] += bsum;
            for (std::size_t c = 0; c < d.C; ++c) {
                const double* ip = in + (b * d.C + c) * plane_in;
                double* gip = gi + (b * d.C + c) * plane_in;
                const double* wp = w + ((f * d.C + c) * d.Kh) * d.Kw;
                double* gwp = gw + ((f * d.C + c) * d.Kh) * d.Kw;
                for (std::size_t kh = 0; kh < d.Kh; ++kh) {
                    const ValidRange rows = valid_outputs(d.Ho, d.H, kh, g);
                    for (std::size_t kw = 0; kw < d.Kw; ++kw) {
                        const double wv = wp[kh * d.Kw + kw];
                        const ValidRange cols = valid_outputs(d.Wo, d.W, kw, g);
                        double acc = 0.0;
                        for (std::size_t oh = rows.lo; oh < rows.hi; ++oh) {
                            const std::size_t ih = oh * g.stride + kh - g.padding;
                            const double* irow = ip + ih * d.W;
                            double* girow = gip + ih * d.W;
                            const double* grow = gop + oh * d.Wo;
                            for (std::size_t ow = cols.lo; ow < cols.hi; ++ow) {
                                const std::size_t iw = ow * g.stride + kw - g.padding;
                                acc += grow[ow] * irow[iw];
                                girow[iw] += wv * grow[ow];
                            }
                        }
                        gwp[kh * d.Kw + kw] += acc;
                    }
                }
            }
        }
    }
    return grads;
}

Tensor maxpool2d(const Tensor& input, std::size_t window, std::size_t stride,
                 std::vector<std::size_t>* argmax) {
    if (window < 1 || stride < 1) throw ShapeError("maxpool2d: window and stride must be >= 1");
    require_rank(input, 4, "maxpool2d input");
    const std::size_t B = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    if (H < window || W < window) {
        throw ShapeError("maxpool2d: spatial extent " + shape_string({H, W}) +
                         " smaller than window " + std::to_string(window));
    }
    const std::size_t Ho = (H - window) / stride + 1;
    const std::size_t Wo = (W - window) / stride + 1;
    Tensor out({B, C, Ho, Wo});
    if (argmax) argmax->assign(out.size(), 0);
    const double* in = input.data().data();
    std::size_t o = 0;
    for (std::size_t bc = 0; bc < B * C; ++bc) {
        const std::size_t base = bc * H * W;
        for (std::size_t oh = 0; oh < Ho; ++oh) {
            for (std::size_t ow = 0; ow < Wo; ++ow, ++o) {
                std::size_t best = base + (oh * stride) * W + ow * stride;
                double best_v = in[best];
                for (std::size_t kh = 0; kh < window; ++kh) {
                    for (std::size_t kw = 0; kw < window; ++kw) {
                        const std::size_t idx = base + (oh * stride + kh) * W + ow * stride + kw;
                        if (in[idx] > best_v) {
                            best_v = in[idx];
                            best = idx;
                        }
                    }
                }
                out[o] = best_v;
                if (argmax) (*argmax)[o] = best;
            }
        }
    }
    return out;
}

Tensor maxpool2d_backward(const std::vector<std::size_t>& input_shape,
                          const std::vector<std::size_t>& argmax, const Tensor& d_output) {
    if (argmax.size() != d_output.size()) {
        throw ShapeError("maxpool2d_backward: argmax length does not match d_output");
    }
    Tensor d_input(input_shape);
    for (std::size_t i = 0; i < argmax.size(); ++i) d_input[argmax[i]] += d_output[i];
    return d_input;
}

Tensor fully_connected(const Tensor& input, const Tensor& weight, const Tensor& bias) {
    require_rank(input, 2, "fully_connected input");
    require_rank(weight, 2, "fully_connected weight");
    require_rank(bias, 1, "fully_connected bias");
    const std::size_t B = input.dim(0), N = input.dim(1), M = weight.dim(1);
    if (weight.dim(0) != N) {
        throw ShapeError("fully_connected: input width N=" + std::to_string(N) +
                         " does not match weight rows " + std::to_string(weight.dim(0)));
    }
    if (bias.dim(0) != M) {
        throw ShapeError("fully_connected: bias length " + std::to_string(bias.dim(0)) +
                         " does not match weight columns M=" + std::to_string(M));
    }
    Tensor out({B, M});
    const double* in = input.data().data();
    const double* w = weight.data().data();
    double* o = out.data().data();
    for (std::size_t b = 0; b < B; ++b) {
        double* orow = o + b * M;
        for (std::size_t m = 0; m < M; ++m) orow[m] = bias[m];
        for (std::size_t n = 0; n < N; ++n) {
            const double x = in[b * N + n];
            if (x == 0.0) continue;
            const double* wrow = w + n * M;
            for (std::size_t m = 0; m < M; ++m) orow[m] += x * wrow[m];
        }
    }
    return out;
}

DenseGrads fully_connected_backward(const Tensor& input, const Tensor& weight,
                                    const Tensor& d_output) {
    require_rank(input, 2, "fully_connected input");
    const std::size_t B = input.dim(0), N = input.dim(1), M = weight.dim(1);
    if (weight.dim(0) != N || d_output.shape() != std::vector<std::size_t>{B, M}) {
        throw ShapeError("fully_connected_backward: shapes do not compose");
    }
    DenseGrads g{Tensor({B, N}), Tensor({N, M}), Tensor({M})};
    const double* in = input.data().data();
    const double* w = weight.data().data();
    const double* go = d_output.data().data();
    double* gi = g.d_input.data().data();
    double* gw = g.d_weight.data().data();
    for (std::size_t b = 0; b < B; ++b) {
        const double* grow = go + b * M;
        for (std::size_t m = 0; m < M; ++m) g.d_bias[m] += grow[m];
        for (std::size_t n = 0; n < N; ++n) {
            const double x = in[b * N + n];
            const double* wrow = w + n * M;
            double* gwrow = gw + n * M;
            double acc = 0.0;
            for (std::size_t m = 0; m < M; ++m) {
                acc += wrow[m] * grow[m];
                gwrow[m] += x * grow[m];
            }
            gi[b * N + n] = acc;
        }
    }
    return g;
}

Tensor relu(const Tensor& input) {
    Tensor out = input;
    for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
    return out;
}

Tensor relu_backward(const Tensor& input, const Tensor& d_output) {
    if (input.shape() != d_output.shape()) {
        throw ShapeError("relu_backward: d_output shape " + shape_string(d_output.shape()) +
                         " vs input " + shape_string(input.shape()));
    }
    Tensor g = d_output;
    for (std::size_t i = 0; i < g.size(); ++i) {
        if (!(input[i] > 0.0)) g[i] = 0.0;
    }
    return g;
}

Tensor softmax(const Tensor& logits) {
    require_rank(logits, 2, "softmax logits");
    const std::size_t B = logits.dim(0), M = logits.dim(1);
    Tensor p = logits;
    for (std::size_t b = 0; b < B; ++b) {
        double* row = p.data().data() + b * M;
        const double mx = *std::max_element(row, row + M);
        double sum = 0.0;
        for (std::size_t m = 0; m < M; ++m) {
            row[m] = std::exp(row[m] - mx);
            sum += row[m];
        }
        for (std::size_t m = 0; m < M; ++m) row[m] /= sum;
    }
    return p;
}

LossAndGrad softmax_cross_entropy(const Tensor& logits, std::span<const int> labels) {
    require_rank(logits, 2, "softmax_cross_entropy logits");
    const std::size_t B = logits.dim(0), M = logits.dim(1);
    if (labels.size() != B) {
        throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                         " labels for batch of " + std::to_string(B));
    }
    LossAndGrad out{0.0, softmax(logits)};
    const double inv_b = 1.0 / static_cast<double>(B);
    for (std::size_t b = 0; b < B; ++b) {
        const int label = labels[b];
        if (label < 0 || static_cast<std::size_t>(label) >= M) {
            throw std::out_of_range("softmax_cross_entropy: label " + std::to_string(label) +
                                    " outside [0," + std::to_string(M) + ")");
        }
        const double* z = logits.data().data() + b * M;
        const double mx = *std::max_element(z, z + M);
        double sum = 0.0;
        for (std::size_t m = 0; m < M; ++m) sum += std::exp(z[m] - mx);
        out.loss += (mx + std::log(sum) - z[label]) * inv_b;
        double* g = out.d_logits.data().data() + b * M;
        g[label] -= 1.0;
        for (std::size_t m = 0; m < M; ++m) g[m] *= inv_b;
    }
    return out;
}

}  // namespace fineprune
