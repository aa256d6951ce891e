#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace fineprune {

/// Raised by kernels and model code when tensor shapes do not compose.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Dense row-major tensor of doubles. `data().size()` always equals the
/// product of `shape()`.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0);
    Tensor(std::vector<std::size_t> shape, std::vector<double> data);

    const std::vector<std::size_t>& shape() const noexcept { return shape_; }
    std::size_t dim(std::size_t axis) const;
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }
    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    double& at(std::initializer_list<std::size_t> index);
    double at(std::initializer_list<std::size_t> index) const;

    /// Same data, new shape of equal element count.
    Tensor reshaped(std::vector<std::size_t> shape) const;
    void fill(double value);
    bool all_finite() const noexcept;

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    std::size_t flat_index(std::initializer_list<std::size_t> index) const;

    std::vector<std::size_t> shape_;
    std::vector<double> data_;
};

std::size_t element_count(const std::vector<std::size_t>& shape);
std::string shape_string(const std::vector<std::size_t>& shape);

// ---------------------------------------------------------------------------
// Kernels. Every forward has a backward that maps d(output) to the gradients
// of its inputs. All are pure functions.

struct Conv2dGeometry {
    std::size_t stride = 1;
    std::size_t padding = 0;
};

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              Conv2dGeometry geom);

struct Conv2dGrads {
    Tensor d_input;
    Tensor d_weight;
    Tensor d_bias;
};

Conv2dGrads conv2d_backward(const Tensor& input, const Tensor& weight,
                            const Tensor& d_output, Conv2dGeometry geom);

/// Max pooling. `argmax` receives, per output element, the flat index into
/// `input` of the winning element (lowest flat index on ties).
Tensor maxpool2d(const Tensor& input, std::size_t window, std::size_t stride,
                 std::vector<std::size_t>* argmax = nullptr);

Tensor maxpool2d_backward(const std::vector<std::size_t>& input_shape,
                          const std::vector<std::size_t>& argmax,
                          const Tensor& d_output);

/// input [B,N] x weight [N,M] + bias [M].
Tensor fully_connected(const Tensor& input, const Tensor& weight, const Tensor& bias);

struct DenseGrads {
    Tensor d_input;
    Tensor d_weight;
    Tensor d_bias;
};

DenseGrads fully_connected_backward(const Tensor& input, const Tensor& weight,
                                    const Tensor& d_output);

Tensor relu(const Tensor& input);
/// Passes gradient where input > 0; zero elsewhere (including input == 0).
Tensor relu_backward(const Tensor& input, const Tensor& d_output);

/// Row-wise softmax with max subtraction.
Tensor softmax(const Tensor& logits);

struct LossAndGrad {
    double loss = 0.0;
    Tensor d_logits;
};

/// Mean over rows of -log softmax(logits)[label]; d_logits = (p - onehot)/B.
LossAndGrad softmax_cross_entropy(const Tensor& logits, std::span<const int> labels);

}  // namespace fineprune
