#include "flowdup/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "flowdup/errors.hpp"

namespace flowdup {

std::size_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        os << (i ? "x" : "") << shape[i];
    }
    os << ']';
    return os.str();
}

Tensor::Tensor() : shape_{1}, data_(std::make_shared<const std::vector<double>>(1, 0.0)) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)) {
    for (std::size_t dim : shape_) {
        if (dim == 0) {
            throw EmptyBatchError("tensor dimensions must be positive, got " +
                                  shape_string(shape_));
        }
    }
    if (shape_numel(shape_) != data.size()) {
        throw DimensionError("shape " + shape_string(shape_) + " does not hold " +
                             std::to_string(data.size()) + " values");
    }
    data_ = std::make_shared<const std::vector<double>>(std::move(data));
}

Tensor Tensor::scalar(double value) { return Tensor({1}, {value}); }

Tensor Tensor::vector(std::vector<double> values) {
    const std::size_t n = values.size();
    return Tensor({n}, std::move(values));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
    return Tensor({rows, cols}, std::move(values));
}

Tensor Tensor::zeros(Shape shape) { return filled(std::move(shape), 0.0); }

Tensor Tensor::filled(Shape shape, double value) {
    const std::size_t n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, value));
}

std::size_t Tensor::rows() const {
    if (rank() != 2) {
        throw DimensionError("rows() needs a matrix, got " + shape_string(shape_));
    }
    return shape_[0];
}

std::size_t Tensor::cols() const {
    if (rank() != 2) {
        throw DimensionError("cols() needs a matrix, got " + shape_string(shape_));
    }
    return shape_[1];
}

double Tensor::at(std::size_t row, std::size_t col) const { return (*data_)[row * cols() + col]; }

double Tensor::item() const {
    if (numel() != 1) {
        throw DimensionError("item() needs a single element, got " + shape_string(shape_));
    }
    return (*data_)[0];
}

Tensor Tensor::detached() const {
    Tensor t = *this;
    t.tape_ = nullptr;
    t.node_ = 0;
    return t;
}

// --- Tape ---------------------------------------------------------------

Tensor Tape::leaf(const Tensor& value) {
    Tensor t = value.detached();
    t.tape_ = this;
    t.node_ = nodes_.size();
    nodes_.push_back(Node{value.numel(), {}, {}});
    return t;
}

Tensor Tape::record(Shape shape, std::vector<double> values,
                    std::initializer_list<const Tensor*> inputs, BackwardFn backward) {
    Tensor out(std::move(shape), std::move(values));
    Node node;
    node.numel = out.numel();
    bool any_tracked = false;
    for (const Tensor* in : inputs) {
        if (in->tracked()) {
            if (in->tape() != this) {
                throw ContractError("op mixes tensors from different tapes");
            }
            any_tracked = true;
            node.inputs.push_back(static_cast<std::ptrdiff_t>(in->node_id()));
        } else {
            node.inputs.push_back(-1);
        }
    }
    if (!any_tracked) {
        return out;
    }
    node.backward = std::move(backward);
    out.tape_ = this;
    out.node_ = nodes_.size();
    nodes_.push_back(std::move(node));
    return out;
}

Gradients Tape::backward(const Tensor& root) const {
    if (!root.tracked() || root.tape() != this) {
        throw ContractError("backward: root is not a node of this tape");
    }
    if (root.numel() != 1) {
        throw ContractError("backward: root must be scalar, got " + shape_string(root.shape()));
    }
    Gradients result;
    result.tape_ = this;
    auto& grads = result.grads_;
    grads.resize(nodes_.size());
    grads[root.node_id()].assign(1, 1.0);

    std::vector<double*> in_ptrs;
    for (std::size_t id = root.node_id() + 1; id-- > 0;) {
        const Node& node = nodes_[id];
        if (grads[id].empty() || !node.backward) {
            continue;
        }
        in_ptrs.clear();
        for (std::ptrdiff_t in : node.inputs) {
            if (in < 0) {
                in_ptrs.push_back(nullptr);
                continue;
            }
            auto& buf = grads[static_cast<std::size_t>(in)];
            if (buf.empty()) {
                buf.assign(nodes_[static_cast<std::size_t>(in)].numel, 0.0);
            }
            in_ptrs.push_back(buf.data());
        }
        node.backward(grads[id], in_ptrs);
    }
    return result;
}

Tensor Gradients::of(const Tensor& t) const {
    auto g = raw(t);
    if (g.empty()) {
        return Tensor::zeros(t.shape());
    }
    return Tensor(t.shape(), std::vector<double>(g.begin(), g.end()));
}

std::span<const double> Gradients::raw(const Tensor& t) const {
    if (!t.tracked() || t.tape() != tape_) {
        throw ContractError("gradient requested for a tensor not on this tape");
    }
    return grads_[t.node_id()];
}

// --- ops ------------------------------------------------------------------

namespace {

Tape* tape_of(std::initializer_list<const Tensor*> inputs) {
    for (const Tensor* t : inputs) {
        if (t->tracked()) {
            return t->tape();
        }
    }
    return nullptr;
}

// Records when some input is tracked; otherwise returns a plain value.
Tensor make(Shape shape, std::vector<double> values, std::initializer_list<const Tensor*> inputs,
            Tape::BackwardFn backward) {
    if (Tape* tape = tape_of(inputs)) {
        return tape->record(std::move(shape), std::move(values), inputs, std::move(backward));
    }
    return Tensor(std::move(shape), std::move(values));
}

void require_matrix(const Tensor& t, const char* op) {
    if (t.rank() != 2) {
        throw DimensionError(std::string(op) + ": expected a matrix, got " +
                             shape_string(t.shape()));
    }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                             " vs " + shape_string(b.shape()));
    }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_matrix(a, "matmul");
    require_matrix(b, "matmul");
    const std::size_t m = a.rows(), p = a.cols(), q = b.cols();
    if (b.rows() != p) {
        throw DimensionError("matmul: inner dimensions disagree, " + shape_string(a.shape()) +
                             " x " + shape_string(b.shape()));
    }
    const auto A = a.data();
    const auto B = b.data();
    std::vector<double> out(m * q, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        double* row = out.data() + i * q;
        for (std::size_t k = 0; k < p; ++k) {
            const double aik = A[i * p + k];
            const double* brow = B.data() + k * q;
            for (std::size_t j = 0; j < q; ++j) {
                row[j] += aik * brow[j];
            }
        }
    }
    return make({m, q}, std::move(out), {&a, &b},
                [a, b, m, p, q](std::span<const double> g, std::span<double* const> gin) {
                    const auto A = a.data();
                    const auto B = b.data();
                    if (double* ga = gin[0]) {
                        // dA = G * B^T
                        for (std::size_t i = 0; i < m; ++i) {
                            for (std::size_t k = 0; k < p; ++k) {
                                double acc = 0.0;
                                for (std::size_t j = 0; j < q; ++j) {
                                    acc += g[i * q + j] * B[k * q + j];
                                }
                                ga[i * p + k] += acc;
                            }
                        }
                    }
                    if (double* gb = gin[1]) {
                        // dB = A^T * G
                        for (std::size_t i = 0; i < m; ++i) {
                            for (std::size_t k = 0; k < p; ++k) {
                                const double aik = A[i * p + k];
                                for (std::size_t j = 0; j < q; ++j) {
                                    gb[k * q + j] += aik * g[i * q + j];
                                }
                            }
                        }
                    }
                });
}

Tensor matvec(const Tensor& a, const Tensor& x) {
    require_matrix(a, "matvec");
    const std::size_t m = a.rows(), n = a.cols();
    if (x.rank() != 1 || x.numel() != n) {
        throw DimensionError("matvec: " + shape_string(a.shape()) + " times " +
                             shape_string(x.shape()));
    }
    const auto A = a.data();
    const auto X = x.data();
    std::vector<double> out(m, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            acc += A[i * n + j] * X[j];
        }
        out[i] = acc;
    }
    return make({m}, std::move(out), {&a, &x},
                [a, x, m, n](std::span<const double> g, std::span<double* const> gin) {
                    const auto A = a.data();
                    const auto X = x.data();
                    if (double* ga = gin[0]) {
                        for (std::size_t i = 0; i < m; ++i) {
                            for (std::size_t j = 0; j < n; ++j) {
                                ga[i * n + j] += g[i] * X[j];
                            }
                        }
                    }
                    if (double* gx = gin[1]) {
                        for (std::size_t i = 0; i < m; ++i) {
                            for (std::size_t j = 0; j < n; ++j) {
                                gx[j] += A[i * n + j] * g[i];
                            }
                        }
                    }
                });
}

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = a[i] + b[i];
    }
    return make(a.shape(), std::move(out), {&a, &b},
                [](std::span<const double> g, std::span<double* const> gin) {
                    for (double* gi : gin) {
                        if (gi) {
                            for (std::size_t i = 0; i < g.size(); ++i) {
                                gi[i] += g[i];
                            }
                        }
                    }
                });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = a[i] - b[i];
    }
    return make(a.shape(), std::move(out), {&a, &b},
                [](std::span<const double> g, std::span<double* const> gin) {
                    if (double* ga = gin[0]) {
                        for (std::size_t i = 0; i < g.size(); ++i) {
                            ga[i] += g[i];
                        }
                    }
                    if (double* gb = gin[1]) {
                        for (std::size_t i = 0; i < g.size(); ++i) {
                            gb[i] -= g[i];
                        }
                    }
                });
}

Tensor add_bias(const Tensor& a, const Tensor& bias) {
    require_matrix(a, "add_bias");
    const std::size_t m = a.rows(), n = a.cols();
    if (bias.rank() != 1 || bias.numel() != n) {
        throw DimensionError("add_bias: bias " + shape_string(bias.shape()) + " for matrix " +
                             shape_string(a.shape()));
    }
    std::vector<double> out(a.values());
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            out[i * n + j] += bias[j];
        }
    }
    return make(a.shape(), std::move(out), {&a, &bias},
                [m, n](std::span<const double> g, std::span<double* const> gin) {
                    if (double* ga = gin[0]) {
                        for (std::size_t i = 0; i < m * n; ++i) {
                            ga[i] += g[i];
                        }
                    }
                    if (double* gb = gin[1]) {
                        for (std::size_t i = 0; i < m; ++i) {
                            for (std::size_t j = 0; j < n; ++j) {
                                gb[j] += g[i * n + j];
                            }
                        }
                    }
                });
}

Tensor scale(const Tensor& a, double factor) {
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = a[i] * factor;
    }
    return make(a.shape(), std::move(out), {&a},
                [factor](std::span<const double> g, std::span<double* const> gin) {
                    for (std::size_t i = 0; i < g.size(); ++i) {
                        gin[0][i] += factor * g[i];
                    }
                });
}

Tensor relu(const Tensor& a) {
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = a[i] > 0.0 ? a[i] : 0.0;
    }
    // Subgradient at exactly 0 is 0.
    return make(a.shape(), std::move(out), {&a},
                [a](std::span<const double> g, std::span<double* const> gin) {
                    for (std::size_t i = 0; i < g.size(); ++i) {
                        if (a[i] > 0.0) {
                            gin[0][i] += g[i];
                        }
                    }
                });
}

Tensor mean_rows(const Tensor& a) {
    if (a.rank() != 2) {
        throw DimensionError("mean_rows: expected a matrix, got " + shape_string(a.shape()));
    }
    const std::size_t m = a.rows(), e = a.cols();
    // Each column is summed in sorted order so the result does not depend on
    // row order at all.
    std::vector<double> out(e);
    std::vector<double> column(m);
    for (std::size_t j = 0; j < e; ++j) {
        for (std::size_t i = 0; i < m; ++i) {
            column[i] = a[i * e + j];
        }
        std::sort(column.begin(), column.end());
        double acc = 0.0;
        for (double value : column) {
            acc += value;
        }
        out[j] = acc / static_cast<double>(m);
    }
    return make({e}, std::move(out), {&a},
                [m, e](std::span<const double> g, std::span<double* const> gin) {
                    const double inv = 1.0 / static_cast<double>(m);
                    for (std::size_t i = 0; i < m; ++i) {
                        for (std::size_t j = 0; j < e; ++j) {
                            gin[0][i * e + j] += g[j] * inv;
                        }
                    }
                });
}

Tensor sum(const Tensor& a) {
    double acc = 0.0;
    for (double v : a.data()) {
        acc += v;
    }
    const std::size_t n = a.numel();
    return make({1}, {acc}, {&a}, [n](std::span<const double> g, std::span<double* const> gin) {
        for (std::size_t i = 0; i < n; ++i) {
            gin[0][i] += g[0];
        }
    });
}

Tensor sq_l2(const Tensor& a) {
    double acc = 0.0;
    for (double v : a.data()) {
        acc += v * v;
    }
    return make({1}, {acc}, {&a}, [a](std::span<const double> g, std::span<double* const> gin) {
        for (std::size_t i = 0; i < a.numel(); ++i) {
            gin[0][i] += 2.0 * a[i] * g[0];
        }
    });
}

Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> labels) {
    require_matrix(logits, "softmax_cross_entropy");
    const std::size_t b = logits.rows(), c = logits.cols();
    if (labels.size() != b) {
        throw DimensionError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                             " labels for " + std::to_string(b) + " rows");
    }
    std::vector<double> probs(b * c);
    double total = 0.0;
    for (std::size_t i = 0; i < b; ++i) {
        const int y = labels[i];
        if (y < 0 || static_cast<std::size_t>(y) >= c) {
            throw LabelError("label " + std::to_string(y) + " outside [0, " + std::to_string(c) +
                             ")");
        }
        double mx = logits[i * c];
        for (std::size_t j = 1; j < c; ++j) {
            mx = std::max(mx, logits[i * c + j]);
        }
        double z = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            probs[i * c + j] = std::exp(logits[i * c + j] - mx);
            z += probs[i * c + j];
        }
        for (std::size_t j = 0; j < c; ++j) {
            probs[i * c + j] /= z;
        }
        total += std::log(z) - (logits[i * c + static_cast<std::size_t>(y)] - mx);
    }
    std::vector<int> ys(labels.begin(), labels.end());
    return make({1}, {total / static_cast<double>(b)}, {&logits},
                [probs = std::move(probs), ys = std::move(ys), b, c](
                    std::span<const double> g, std::span<double* const> gin) {
                    const double w = g[0] / static_cast<double>(b);
                    for (std::size_t i = 0; i < b; ++i) {
                        for (std::size_t j = 0; j < c; ++j) {
                            const double onehot = static_cast<int>(j) == ys[i] ? 1.0 : 0.0;
                            gin[0][i * c + j] += w * (probs[i * c + j] - onehot);
                        }
                    }
                });
}

Tensor reshape(const Tensor& a, Shape shape) {
    if (shape_numel(shape) != a.numel()) {
        throw DimensionError("reshape: " + shape_string(a.shape()) + " to " + shape_string(shape));
    }
    return make(std::move(shape), a.values(), {&a},
                [](std::span<const double> g, std::span<double* const> gin) {
                    for (std::size_t i = 0; i < g.size(); ++i) {
                        gin[0][i] += g[i];
                    }
                });
}

Tensor slice(const Tensor& a, std::size_t offset, Shape shape) {
    const std::size_t n = shape_numel(shape);
    if (offset + n > a.numel()) {
        throw DimensionError("slice: range [" + std::to_string(offset) + ", " +
                             std::to_string(offset + n) + ") exceeds " + shape_string(a.shape()));
    }
    const auto src = a.data().subspan(offset, n);
    return make(std::move(shape), std::vector<double>(src.begin(), src.end()), {&a},
                [offset](std::span<const double> g, std::span<double* const> gin) {
                    for (std::size_t i = 0; i < g.size(); ++i) {
                        gin[0][offset + i] += g[i];
                    }
                });
}

std::vector<int> argmax_rows(const Tensor& logits) {
    require_matrix(logits, "argmax_rows");
    const std::size_t b = logits.rows(), c = logits.cols();
    std::vector<int> out(b, 0);
    for (std::size_t i = 0; i < b; ++i) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < c; ++j) {
            if (logits[i * c + j] > logits[i * c + best]) {
                best = j;
            }
        }
        out[i] = static_cast<int>(best);
    }
    return out;
}

Tensor gather_rows(const Tensor& a, std::span<const std::size_t> rows) {
    require_matrix(a, "gather_rows");
    const std::size_t n = a.cols();
    if (rows.empty()) {
        throw EmptyBatchError("gather_rows: no rows selected");
    }
    std::vector<double> out;
    out.reserve(rows.size() * n);
    for (std::size_t r : rows) {
        if (r >= a.rows()) {
            throw DimensionError("gather_rows: row " + std::to_string(r) + " out of range");
        }
        const auto row = a.data().subspan(r * n, n);
        out.insert(out.end(), row.begin(), row.end());
    }
    return Tensor::matrix(rows.size(), n, std::move(out));
}

Tensor finite_diff_grad(const std::function<double(const Tensor&)>& fn, const Tensor& at,
                        double step) {
    if (!(step > 0.0)) {
        throw DomainError("finite_diff_grad: step must be positive");
    }
    std::vector<double> grad(at.numel());
    std::vector<double> probe(at.values());
    for (std::size_t i = 0; i < probe.size(); ++i) {
        const double x = probe[i];
        probe[i] = x + step;
        const double up = fn(Tensor(at.shape(), probe));
        probe[i] = x - step;
        const double down = fn(Tensor(at.shape(), probe));
        probe[i] = x;
        grad[i] = (up - down) / (2.0 * step);
    }
    return Tensor(at.shape(), std::move(grad));
}

}  // namespace flowdup
