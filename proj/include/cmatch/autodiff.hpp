#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace cmatch {

using Shape = std::vector<std::size_t>;

std::string shape_to_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

/// Dense row-major array of doubles with an attached gradient buffer.
///
/// A Tensor is a handle: copies share storage, so a parameter held by a
/// model and the same parameter referenced from a tape node are one object.
/// Use clone() for an independent deep copy.
class Tensor {
public:
    Tensor();
    Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor scalar(double value);
    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values);
    static Tensor vector(std::vector<double> values);

    const Shape& shape() const { return data_->shape; }
    std::size_t rank() const { return data_->shape.size(); }
    std::size_t size() const { return data_->values.size(); }
    std::size_t rows() const;
    std::size_t cols() const;

    std::span<const double> values() const { return data_->values; }
    std::span<double> mutable_values() { return data_->values; }
    std::span<const double> grad() const { return data_->grad; }
    std::span<double> mutable_grad() { return data_->grad; }

    double operator[](std::size_t i) const { return data_->values[i]; }
    double at(std::size_t r, std::size_t c) const;
    /// Value of a single-element tensor.
    double item() const;
    std::vector<double> row(std::size_t r) const;

    bool requires_grad() const { return data_->requires_grad; }
    void set_requires_grad(bool flag) { data_->requires_grad = flag; }

    /// True when backward() accumulated into this tensor since the last zero_grad().
    bool has_grad() const { return data_->has_grad; }
    void mark_grad() { data_->has_grad = true; }
    void zero_grad();

    /// Deep copy with the same requires_grad flag.
    Tensor clone() const;
    /// Deep copy that never participates in differentiation.
    Tensor detach() const;

    bool shares_storage(const Tensor& other) const { return data_ == other.data_; }
    const void* id() const { return data_.get(); }

private:
    struct Storage {
        Shape shape;
        std::vector<double> values;
        std::vector<double> grad;
        bool requires_grad = false;
        bool has_grad = false;
    };
    std::shared_ptr<Storage> data_;
};

enum class OpKind {
    matmul,
    add,
    subtract,
    multiply,
    relu,
    sigmoid,
    exp,
    log,
    mean,
    sum,
    row_sum,
    squared_distance,
    sqrt,
    negate,
    scale,
    concat_rows,
    softmax,
    log_softmax,
};

std::string op_name(OpKind kind);

/// Records primitive applications for reverse-mode differentiation.
///
/// Each training step owns its own tape; nothing is global, so independent
/// models on separate threads never see each other's nodes.
///
/// Shape rules:
///  - matmul: [n,k] x [k,m] -> [n,m]
///  - add / subtract: equal shapes, or [n,m] with a length-m vector (row broadcast)
///  - multiply: equal shapes
///  - sum / mean: any -> [1]; row_sum: [n,m] -> [n]
///  - squared_distance: [d],[d] -> [1]; [n,d],[m,d] -> [n,m] (all pairs)
///  - concat_rows: [n_i,m]... -> [sum n_i, m]
///  - softmax / log_softmax: over the last axis
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;
    Tape(Tape&&) = default;
    Tape& operator=(Tape&&) = default;

    /// Generic entry point. `scalar` is used by OpKind::scale only.
    Tensor apply(OpKind kind, std::span<const Tensor> inputs, double scalar = 0.0);

    Tensor matmul(const Tensor& a, const Tensor& b);
    Tensor add(const Tensor& a, const Tensor& b);
    Tensor subtract(const Tensor& a, const Tensor& b);
    Tensor multiply(const Tensor& a, const Tensor& b);
    Tensor relu(const Tensor& x);
    Tensor sigmoid(const Tensor& x);
    Tensor exp(const Tensor& x);
    Tensor log(const Tensor& x);
    Tensor mean(const Tensor& x);
    Tensor sum(const Tensor& x);
    Tensor row_sum(const Tensor& x);
    Tensor squared_distance(const Tensor& a, const Tensor& b);
    Tensor sqrt(const Tensor& x);
    Tensor negate(const Tensor& x);
    Tensor scale(const Tensor& x, double factor);
    Tensor concat_rows(std::span<const Tensor> parts);
    Tensor softmax(const Tensor& x);
    Tensor log_softmax(const Tensor& x);

    /// Euclidean distance built from squared_distance and sqrt.
    Tensor distance(const Tensor& a, const Tensor& b);
    /// Per-row Euclidean distance between two [n,d] tensors -> [n].
    Tensor row_distance(const Tensor& a, const Tensor& b);

    /// Accumulates d(loss)/d(t) into every tensor reachable from `loss`
    /// that requires grad, then clears the tape.
    void backward(const Tensor& loss);

    std::size_t size() const { return nodes_.size(); }
    bool empty() const { return nodes_.empty(); }
    void clear() { nodes_.clear(); }

    /// A non-recording tape evaluates primitives but never stores nodes;
    /// its outputs do not require grad.
    void set_recording(bool on) { recording_ = on; }
    bool recording() const { return recording_; }

private:
    struct Node {
        OpKind kind;
        std::vector<Tensor> inputs;
        Tensor output;
        double scalar = 0.0;
    };
    std::vector<Node> nodes_;
    bool recording_ = true;
};

struct SgdConfig {
    double learning_rate = 0.01;
    double momentum = 0.9;
    /// Global L2 bound on the gradient of one step; 0 disables clipping.
    double max_grad_norm = 0.0;
};

/// SGD with heavy-ball momentum: v <- momentum*v + grad; p <- p - lr*v.
/// With max_grad_norm > 0 the gradients of all parameters are first scaled
/// together so their joint norm does not exceed the bound.
///
/// Velocity buffers are aligned with the parameter list passed to step().
/// The list may grow between calls (new heads are appended); any other
/// change in shape is rejected. Parameters that received no gradient since
/// the last step are left untouched, including their velocity.
class Sgd {
public:
    explicit Sgd(SgdConfig config = {});

    void step(std::span<Tensor> params);
    const SgdConfig& config() const { return config_; }
    std::span<const std::vector<double>> velocity() const { return velocity_; }

private:
    SgdConfig config_;
    std::vector<std::vector<double>> velocity_;
    std::vector<Shape> shapes_;
};

struct GradientBlockReport {
    std::string name;
    std::size_t size = 0;
    double max_relative_error = 0.0;
};

struct GradientReport {
    std::vector<GradientBlockReport> blocks;
    double max_relative_error = 0.0;
    bool passed(double tolerance) const { return max_relative_error < tolerance; }
};

/// Loss function for gradient checking: builds a scalar loss on `tape`
/// from the current parameter values.
using LossBuilder = std::function<Tensor(Tape&)>;

/// Gradients smaller than this are compared in absolute terms. Some blocks
/// have an exactly zero gradient (a bias shifting embeddings and centroids
/// alike), where a ratio would only measure rounding noise.
inline constexpr double kGradientFloor = 1e-5;

/// Compares analytic gradients with central finite differences for every
/// entry of every block in `params`. The per-block error is normwise:
/// max|analytic - numeric| / max(max|analytic|, max|numeric|, kGradientFloor).
GradientReport gradient_check(const LossBuilder& loss, std::span<Tensor> params,
                              std::span<const std::string> names = {}, double step = 1e-4);

}  // namespace cmatch
