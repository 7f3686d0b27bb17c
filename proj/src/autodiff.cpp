#include "cmatch/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

#include <Eigen/Core>

namespace cmatch {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMatrixMap = Eigen::Map<RowMatrix>;
using ConstRowMatrixMap = Eigen::Map<const RowMatrix>;

}  // namespace

std::string shape_to_string(const Shape& shape) {
    std::ostringstream out;
    out << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out << ',';
        out << shape[i];
    }
    out << ']';
    return out.str();
}

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto e : shape) n *= e;
    return n;
}

// ---------------------------------------------------------------------------
// Tensor

Tensor::Tensor() : Tensor(Shape{1}, std::vector<double>{0.0}) {}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad)
    : data_(std::make_shared<Storage>()) {
    if (shape.empty()) throw std::invalid_argument("tensor shape must have at least one extent");
    for (auto e : shape) {
        if (e == 0) throw std::invalid_argument("tensor extents must be positive, got " + shape_to_string(shape));
    }
    if (shape_numel(shape) != values.size()) {
        throw std::invalid_argument("tensor shape " + shape_to_string(shape) + " does not match " +
                                    std::to_string(values.size()) + " values");
    }
    data_->grad.assign(values.size(), 0.0);
    data_->shape = std::move(shape);
    data_->values = std::move(values);
    data_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{1}, {value}); }

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
    return Tensor(Shape{rows, cols}, std::move(values));
}

Tensor Tensor::vector(std::vector<double> values) {
    auto n = values.size();
    return Tensor(Shape{n}, std::move(values));
}

std::size_t Tensor::rows() const { return rank() == 1 ? 1 : data_->shape[0]; }

std::size_t Tensor::cols() const { return data_->shape.back(); }

double Tensor::at(std::size_t r, std::size_t c) const { return data_->values[r * cols() + c]; }

double Tensor::item() const {
    if (size() != 1) throw std::invalid_argument("item() on tensor of shape " + shape_to_string(shape()));
    return data_->values[0];
}

std::vector<double> Tensor::row(std::size_t r) const {
    auto c = cols();
    auto first = data_->values.begin() + static_cast<std::ptrdiff_t>(r * c);
    return {first, first + static_cast<std::ptrdiff_t>(c)};
}

void Tensor::zero_grad() {
    std::fill(data_->grad.begin(), data_->grad.end(), 0.0);
    data_->has_grad = false;
}

Tensor Tensor::clone() const {
    Tensor copy(data_->shape, data_->values, data_->requires_grad);
    return copy;
}

Tensor Tensor::detach() const { return Tensor(data_->shape, data_->values, false); }

// ---------------------------------------------------------------------------
// Primitive forward/backward kernels

std::string op_name(OpKind kind) {
    switch (kind) {
        case OpKind::matmul: return "matmul";
        case OpKind::add: return "add";
        case OpKind::subtract: return "subtract";
        case OpKind::multiply: return "multiply";
        case OpKind::relu: return "relu";
        case OpKind::sigmoid: return "sigmoid";
        case OpKind::exp: return "exp";
        case OpKind::log: return "log";
        case OpKind::mean: return "mean";
        case OpKind::sum: return "sum";
        case OpKind::row_sum: return "row_sum";
        case OpKind::squared_distance: return "squared_distance";
        case OpKind::sqrt: return "sqrt";
        case OpKind::negate: return "negate";
        case OpKind::scale: return "scale";
        case OpKind::concat_rows: return "concat_rows";
        case OpKind::softmax: return "softmax";
        case OpKind::log_softmax: return "log_softmax";
    }
    return "unknown";
}

namespace {

[[noreturn]] void shape_error(OpKind kind, std::span<const Tensor> inputs) {
    std::string msg = op_name(kind) + ": incompatible shapes";
    for (const auto& t : inputs) msg += " " + shape_to_string(t.shape());
    throw std::invalid_argument(msg);
}

void expect_arity(OpKind kind, std::span<const Tensor> inputs, std::size_t n) {
    if (inputs.size() != n) {
        throw std::invalid_argument(op_name(kind) + ": expected " + std::to_string(n) + " inputs, got " +
                                    std::to_string(inputs.size()));
    }
}

bool is_row_broadcast(const Tensor& a, const Tensor& b) {
    return a.rank() == 2 && b.rank() == 1 && b.size() == a.cols();
}

// Row-wise reductions over the last axis treat a rank-1 tensor as one row.
std::size_t row_count(const Tensor& t) { return t.size() / t.cols(); }

Tensor forward(OpKind kind, std::span<const Tensor> in, double scalar) {
    switch (kind) {
        case OpKind::matmul: {
            expect_arity(kind, in, 2);
            const auto& a = in[0];
            const auto& b = in[1];
            if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows()) shape_error(kind, in);
            const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
            std::vector<double> out(n * m, 0.0);
            RowMatrixMap(out.data(), n, m).noalias() = ConstRowMatrixMap(a.values().data(), n, k) *
                                                       ConstRowMatrixMap(b.values().data(), k, m);
            return Tensor(Shape{n, m}, std::move(out));
        }
        case OpKind::add:
        case OpKind::subtract: {
            expect_arity(kind, in, 2);
            const auto& a = in[0];
            const auto& b = in[1];
            const double sign = kind == OpKind::add ? 1.0 : -1.0;
            std::vector<double> out(a.values().begin(), a.values().end());
            auto bv = b.values();
            if (a.shape() == b.shape()) {
                for (std::size_t i = 0; i < out.size(); ++i) out[i] += sign * bv[i];
            } else if (is_row_broadcast(a, b)) {
                const std::size_t m = a.cols();
                for (std::size_t i = 0; i < out.size(); ++i) out[i] += sign * bv[i % m];
            } else {
                shape_error(kind, in);
            }
            return Tensor(a.shape(), std::move(out));
        }
        case OpKind::multiply: {
            expect_arity(kind, in, 2);
            if (in[0].shape() != in[1].shape()) shape_error(kind, in);
            auto av = in[0].values();
            auto bv = in[1].values();
            std::vector<double> out(av.size());
            for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
            return Tensor(in[0].shape(), std::move(out));
        }
        case OpKind::relu:
        case OpKind::sigmoid:
        case OpKind::exp:
        case OpKind::log:
        case OpKind::sqrt:
        case OpKind::negate:
        case OpKind::scale: {
            expect_arity(kind, in, 1);
            auto xv = in[0].values();
            std::vector<double> out(xv.size());
            for (std::size_t i = 0; i < out.size(); ++i) {
                const double x = xv[i];
                switch (kind) {
                    case OpKind::relu: out[i] = x > 0.0 ? x : 0.0; break;
                    case OpKind::sigmoid:
                        out[i] = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
                        break;
                    case OpKind::exp: out[i] = std::exp(x); break;
                    case OpKind::log: out[i] = std::log(x); break;
                    case OpKind::sqrt: out[i] = std::sqrt(x); break;
                    case OpKind::negate: out[i] = -x; break;
                    default: out[i] = scalar * x; break;
                }
            }
            return Tensor(in[0].shape(), std::move(out));
        }
        case OpKind::mean:
        case OpKind::sum: {
            expect_arity(kind, in, 1);
            double total = 0.0;
            for (double v : in[0].values()) total += v;
            if (kind == OpKind::mean) total /= static_cast<double>(in[0].size());
            return Tensor::scalar(total);
        }
        case OpKind::row_sum: {
            expect_arity(kind, in, 1);
            if (in[0].rank() != 2) shape_error(kind, in);
            const std::size_t n = in[0].rows(), m = in[0].cols();
            auto xv = in[0].values();
            std::vector<double> out(n, 0.0);
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t j = 0; j < m; ++j) out[i] += xv[i * m + j];
            }
            return Tensor(Shape{n}, std::move(out));
        }
        case OpKind::squared_distance: {
            expect_arity(kind, in, 2);
            const auto& a = in[0];
            const auto& b = in[1];
            if (a.rank() != b.rank() || a.rank() > 2 || a.cols() != b.cols()) shape_error(kind, in);
            const std::size_t n = a.rows(), m = b.rows(), d = a.cols();
            auto av = a.values();
            auto bv = b.values();
            std::vector<double> out(n * m);
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t j = 0; j < m; ++j) {
                    double acc = 0.0;
                    for (std::size_t p = 0; p < d; ++p) {
                        const double diff = av[i * d + p] - bv[j * d + p];
                        acc += diff * diff;
                    }
                    out[i * m + j] = acc;
                }
            }
            if (a.rank() == 1) return Tensor::scalar(out[0]);
            return Tensor(Shape{n, m}, std::move(out));
        }
        case OpKind::concat_rows: {
            if (in.empty()) throw std::invalid_argument("concat_rows: no inputs");
            const std::size_t m = in[0].cols();
            std::size_t n = 0;
            std::vector<double> out;
            for (const auto& t : in) {
                if (t.rank() != 2 || t.cols() != m) shape_error(kind, in);
                n += t.rows();
                out.insert(out.end(), t.values().begin(), t.values().end());
            }
            return Tensor(Shape{n, m}, std::move(out));
        }
        case OpKind::softmax:
        case OpKind::log_softmax: {
            expect_arity(kind, in, 1);
            const auto& x = in[0];
            const std::size_t n = row_count(x), m = x.cols();
            auto xv = x.values();
            std::vector<double> out(x.size());
            for (std::size_t i = 0; i < n; ++i) {
                const double* row = xv.data() + i * m;
                const double mx = *std::max_element(row, row + m);
                double denom = 0.0;
                for (std::size_t j = 0; j < m; ++j) denom += std::exp(row[j] - mx);
                const double log_denom = std::log(denom);
                for (std::size_t j = 0; j < m; ++j) {
                    const double shifted = row[j] - mx;
                    out[i * m + j] = kind == OpKind::softmax ? std::exp(shifted) / denom : shifted - log_denom;
                }
            }
            return Tensor(x.shape(), std::move(out));
        }
    }
    throw std::invalid_argument("unknown op kind");
}

void accumulate(Tensor& t, std::size_t i, double g) { t.mutable_grad()[i] += g; }

void backward_node(OpKind kind, std::vector<Tensor>& in, const Tensor& out, double scalar) {
    auto gout = out.grad();
    auto yv = out.values();
    switch (kind) {
        case OpKind::matmul: {
            auto& a = in[0];
            auto& b = in[1];
            const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
            const ConstRowMatrixMap g(gout.data(), n, m);
            if (a.requires_grad()) {
                RowMatrixMap(a.mutable_grad().data(), n, k).noalias() +=
                    g * ConstRowMatrixMap(b.values().data(), k, m).transpose();
            }
            if (b.requires_grad()) {
                RowMatrixMap(b.mutable_grad().data(), k, m).noalias() +=
                    ConstRowMatrixMap(a.values().data(), n, k).transpose() * g;
            }
            return;
        }
        case OpKind::add:
        case OpKind::subtract: {
            auto& a = in[0];
            auto& b = in[1];
            const double sign = kind == OpKind::add ? 1.0 : -1.0;
            if (a.requires_grad()) {
                for (std::size_t i = 0; i < gout.size(); ++i) accumulate(a, i, gout[i]);
            }
            if (b.requires_grad()) {
                const std::size_t m = b.size();
                for (std::size_t i = 0; i < gout.size(); ++i) accumulate(b, i % m, sign * gout[i]);
            }
            return;
        }
        case OpKind::multiply: {
            auto& a = in[0];
            auto& b = in[1];
            auto av = a.values();
            auto bv = b.values();
            if (a.requires_grad()) {
                for (std::size_t i = 0; i < gout.size(); ++i) accumulate(a, i, gout[i] * bv[i]);
            }
            if (b.requires_grad()) {
                for (std::size_t i = 0; i < gout.size(); ++i) accumulate(b, i, gout[i] * av[i]);
            }
            return;
        }
        default: break;
    }

    auto& x = in[0];
    if (kind == OpKind::concat_rows) {
        std::size_t offset = 0;
        for (auto& part : in) {
            if (part.requires_grad()) {
                for (std::size_t i = 0; i < part.size(); ++i) accumulate(part, i, gout[offset + i]);
            }
            offset += part.size();
        }
        return;
    }
    if (kind == OpKind::squared_distance) {
        auto& a = in[0];
        auto& b = in[1];
        const std::size_t n = a.rows(), m = b.rows(), d = a.cols();
        auto av = a.values();
        auto bv = b.values();
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < m; ++j) {
                const double g = 2.0 * gout[i * m + j];
                if (g == 0.0) continue;
                for (std::size_t p = 0; p < d; ++p) {
                    const double diff = g * (av[i * d + p] - bv[j * d + p]);
                    if (a.requires_grad()) accumulate(a, i * d + p, diff);
                    if (b.requires_grad()) accumulate(b, j * d + p, -diff);
                }
            }
        }
        return;
    }
    if (!x.requires_grad()) return;
    auto gx = x.mutable_grad();
    auto xv = x.values();
    switch (kind) {
        case OpKind::relu:
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += xv[i] > 0.0 ? gout[i] : 0.0;
            return;
        case OpKind::sigmoid:
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gout[i] * yv[i] * (1.0 - yv[i]);
            return;
        case OpKind::exp:
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gout[i] * yv[i];
            return;
        case OpKind::log:
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gout[i] / xv[i];
            return;
        case OpKind::sqrt:
            // sqrt is not differentiable at 0; use the zero subgradient there
            // so distances between coincident points stay finite.
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += yv[i] > 0.0 ? gout[i] / (2.0 * yv[i]) : 0.0;
            return;
        case OpKind::negate:
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] -= gout[i];
            return;
        case OpKind::scale:
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += scalar * gout[i];
            return;
        case OpKind::sum:
            for (double& g : gx) g += gout[0];
            return;
        case OpKind::mean: {
            const double g = gout[0] / static_cast<double>(gx.size());
            for (double& v : gx) v += g;
            return;
        }
        case OpKind::row_sum: {
            const std::size_t m = x.cols();
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gout[i / m];
            return;
        }
        case OpKind::softmax:
        case OpKind::log_softmax: {
            const std::size_t n = row_count(x), m = x.cols();
            for (std::size_t i = 0; i < n; ++i) {
                const std::size_t base = i * m;
                if (kind == OpKind::softmax) {
                    double dot = 0.0;
                    for (std::size_t j = 0; j < m; ++j) dot += gout[base + j] * yv[base + j];
                    for (std::size_t j = 0; j < m; ++j) gx[base + j] += yv[base + j] * (gout[base + j] - dot);
                } else {
                    double total = 0.0;
                    for (std::size_t j = 0; j < m; ++j) total += gout[base + j];
                    for (std::size_t j = 0; j < m; ++j) gx[base + j] += gout[base + j] - std::exp(yv[base + j]) * total;
                }
            }
            return;
        }
        default: break;
    }
}

}  // namespace

// ---------------------------------------------------------------------------
// Tape

Tensor Tape::apply(OpKind kind, std::span<const Tensor> inputs, double scalar) {
    Tensor out = forward(kind, inputs, scalar);
    for (double v : out.values()) {
        if (!std::isfinite(v)) throw std::domain_error(op_name(kind) + " produced a non-finite value");
    }
    const bool tracked = recording_ && std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
    if (tracked) {
        out.set_requires_grad(true);
        nodes_.push_back(Node{kind, std::vector<Tensor>(inputs.begin(), inputs.end()), out, scalar});
    }
    return out;
}

Tensor Tape::matmul(const Tensor& a, const Tensor& b) {
    const Tensor in[] = {a, b};
    return apply(OpKind::matmul, in);
}
Tensor Tape::add(const Tensor& a, const Tensor& b) {
    const Tensor in[] = {a, b};
    return apply(OpKind::add, in);
}
Tensor Tape::subtract(const Tensor& a, const Tensor& b) {
    const Tensor in[] = {a, b};
    return apply(OpKind::subtract, in);
}
Tensor Tape::multiply(const Tensor& a, const Tensor& b) {
    const Tensor in[] = {a, b};
    return apply(OpKind::multiply, in);
}
Tensor Tape::squared_distance(const Tensor& a, const Tensor& b) {
    const Tensor in[] = {a, b};
    return apply(OpKind::squared_distance, in);
}
Tensor Tape::relu(const Tensor& x) { return apply(OpKind::relu, std::span(&x, 1)); }
Tensor Tape::sigmoid(const Tensor& x) { return apply(OpKind::sigmoid, std::span(&x, 1)); }
Tensor Tape::exp(const Tensor& x) { return apply(OpKind::exp, std::span(&x, 1)); }
Tensor Tape::log(const Tensor& x) { return apply(OpKind::log, std::span(&x, 1)); }
Tensor Tape::mean(const Tensor& x) { return apply(OpKind::mean, std::span(&x, 1)); }
Tensor Tape::sum(const Tensor& x) { return apply(OpKind::sum, std::span(&x, 1)); }
Tensor Tape::row_sum(const Tensor& x) { return apply(OpKind::row_sum, std::span(&x, 1)); }
Tensor Tape::sqrt(const Tensor& x) { return apply(OpKind::sqrt, std::span(&x, 1)); }
Tensor Tape::negate(const Tensor& x) { return apply(OpKind::negate, std::span(&x, 1)); }
Tensor Tape::scale(const Tensor& x, double factor) { return apply(OpKind::scale, std::span(&x, 1), factor); }
Tensor Tape::concat_rows(std::span<const Tensor> parts) { return apply(OpKind::concat_rows, parts); }
Tensor Tape::softmax(const Tensor& x) { return apply(OpKind::softmax, std::span(&x, 1)); }
Tensor Tape::log_softmax(const Tensor& x) { return apply(OpKind::log_softmax, std::span(&x, 1)); }

Tensor Tape::distance(const Tensor& a, const Tensor& b) { return sqrt(squared_distance(a, b)); }

Tensor Tape::row_distance(const Tensor& a, const Tensor& b) {
    auto diff = subtract(a, b);
    return sqrt(row_sum(multiply(diff, diff)));
}

void Tape::backward(const Tensor& loss) {
    if (loss.size() != 1) {
        throw std::invalid_argument("backward requires a scalar loss, got shape " + shape_to_string(loss.shape()));
    }
    if (nodes_.empty()) throw std::logic_error("backward called on an empty tape");

    Tensor seed = loss;
    seed.mutable_grad()[0] += 1.0;
    std::unordered_set<const void*> live{loss.id()};
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        if (!live.count(it->output.id())) continue;
        backward_node(it->kind, it->inputs, it->output, it->scalar);
        for (auto& input : it->inputs) {
            if (!input.requires_grad()) continue;
            input.mark_grad();
            live.insert(input.id());
        }
    }
    nodes_.clear();
}

// ---------------------------------------------------------------------------
// Sgd

Sgd::Sgd(SgdConfig config) : config_(config) {
    if (!(config.learning_rate > 0.0)) throw std::invalid_argument("learning rate must be positive");
    if (config.momentum < 0.0 || config.momentum >= 1.0) throw std::invalid_argument("momentum must lie in [0, 1)");
    if (!(config.max_grad_norm >= 0.0)) throw std::invalid_argument("max_grad_norm must be non-negative");
}

void Sgd::step(std::span<Tensor> params) {
    if (params.size() < velocity_.size()) {
        throw std::invalid_argument("sgd: parameter list shrank from " + std::to_string(velocity_.size()) + " to " +
                                    std::to_string(params.size()));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (i < shapes_.size() && shapes_[i] != params[i].shape()) {
            throw std::invalid_argument("sgd: parameter " + std::to_string(i) + " changed shape from " +
                                        shape_to_string(shapes_[i]) + " to " + shape_to_string(params[i].shape()));
        }
    }
    for (std::size_t i = velocity_.size(); i < params.size(); ++i) {
        velocity_.emplace_back(params[i].size(), 0.0);
        shapes_.push_back(params[i].shape());
    }
    double scale = 1.0;
    if (config_.max_grad_norm > 0.0) {
        double sq = 0.0;
        for (const auto& p : params) {
            if (!p.has_grad()) continue;
            for (double g : p.grad()) sq += g * g;
        }
        const double norm = std::sqrt(sq);
        if (norm > config_.max_grad_norm) scale = config_.max_grad_norm / norm;
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& p = params[i];
        if (!p.has_grad()) continue;
        auto& v = velocity_[i];
        auto values = p.mutable_values();
        auto grad = p.grad();
        for (std::size_t j = 0; j < v.size(); ++j) {
            v[j] = config_.momentum * v[j] + scale * grad[j];
            values[j] -= config_.learning_rate * v[j];
        }
        p.zero_grad();
    }
}

// ---------------------------------------------------------------------------
// Gradient checking

GradientReport gradient_check(const LossBuilder& loss, std::span<Tensor> params, std::span<const std::string> names,
                              double step) {
    for (auto& p : params) p.zero_grad();
    {
        Tape tape;
        auto value = loss(tape);
        tape.backward(value);
    }
    auto evaluate = [&] {
        Tape tape;
        return loss(tape).item();
    };

    GradientReport report;
    for (std::size_t b = 0; b < params.size(); ++b) {
        auto& p = params[b];
        std::vector<double> analytic(p.grad().begin(), p.grad().end());
        std::vector<double> numeric(p.size());
        auto values = p.mutable_values();
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double original = values[i];
            values[i] = original + step;
            const double plus = evaluate();
            values[i] = original - step;
            const double minus = evaluate();
            values[i] = original;
            numeric[i] = (plus - minus) / (2.0 * step);
        }
        double max_diff = 0.0, max_mag = kGradientFloor;
        for (std::size_t i = 0; i < p.size(); ++i) {
            max_diff = std::max(max_diff, std::abs(analytic[i] - numeric[i]));
            max_mag = std::max({max_mag, std::abs(analytic[i]), std::abs(numeric[i])});
        }
        GradientBlockReport block;
        block.name = b < names.size() ? names[b] : "block" + std::to_string(b);
        block.size = p.size();
        block.max_relative_error = max_diff / max_mag;
        report.max_relative_error = std::max(report.max_relative_error, block.max_relative_error);
        report.blocks.push_back(std::move(block));
        p.zero_grad();
    }
    return report;
}

}  // namespace cmatch
