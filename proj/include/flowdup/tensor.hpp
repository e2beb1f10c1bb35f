#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace flowdup {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

class Tape;

// Dense row-major array of doubles. The buffer is immutable and shared
// between copies; a tensor produced on a Tape additionally carries its node id.
class Tensor {
public:
    Tensor();
    Tensor(Shape shape, std::vector<double> data);

    static Tensor scalar(double value);
    static Tensor vector(std::vector<double> values);
    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values);
    static Tensor zeros(Shape shape);
    static Tensor filled(Shape shape, double value);

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t numel() const { return data_->size(); }
    std::size_t rows() const;
    std::size_t cols() const;

    std::span<const double> data() const { return *data_; }
    const std::vector<double>& values() const { return *data_; }
    double operator[](std::size_t i) const { return (*data_)[i]; }
    double at(std::size_t row, std::size_t col) const;
    double item() const;

    bool tracked() const { return tape_ != nullptr; }
    Tape* tape() const { return tape_; }
    std::size_t node_id() const { return node_; }

    // Same values, no tape node.
    Tensor detached() const;

private:
    friend class Tape;

    Shape shape_;
    std::shared_ptr<const std::vector<double>> data_;
    Tape* tape_ = nullptr;
    std::size_t node_ = 0;
};

class Gradients {
public:
    // Gradient of the root with respect to `t` (zeros if `t` does not feed the root).
    Tensor of(const Tensor& t) const;
    std::span<const double> raw(const Tensor& t) const;

private:
    friend class Tape;

    const Tape* tape_ = nullptr;
    std::vector<std::vector<double>> grads_;
};

// Append-only record of one objective evaluation. Nodes are numbered in
// creation order, so inputs always precede outputs.
class Tape {
public:
    // Receives the output gradient and one accumulation buffer per input
    // (nullptr for untracked inputs).
    using BackwardFn = std::function<void(std::span<const double> grad_out,
                                          std::span<double* const> grad_in)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Tensor leaf(const Tensor& value);

    // Builds the op output; records a node only when some input is tracked.
    Tensor record(Shape shape, std::vector<double> values,
                  std::initializer_list<const Tensor*> inputs, BackwardFn backward);

    Gradients backward(const Tensor& root) const;

    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        std::size_t numel = 0;
        std::vector<std::ptrdiff_t> inputs;  // -1 for constants
        BackwardFn backward;
    };

    std::vector<Node> nodes_;
};

// Ops. Each records onto the tape of its tracked inputs, if any.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor matvec(const Tensor& a, const Tensor& x);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor add_bias(const Tensor& a, const Tensor& bias);
Tensor scale(const Tensor& a, double factor);
Tensor relu(const Tensor& a);
Tensor mean_rows(const Tensor& a);
Tensor sum(const Tensor& a);
Tensor sq_l2(const Tensor& a);
Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> labels);
Tensor reshape(const Tensor& a, Shape shape);
// Contiguous flat range [offset, offset + numel(shape)) of `a`, reshaped.
Tensor slice(const Tensor& a, std::size_t offset, Shape shape);

// Row-wise argmax; ties resolve to the lowest index.
std::vector<int> argmax_rows(const Tensor& logits);

// Rows of a matrix selected by index, untracked.
Tensor gather_rows(const Tensor& a, std::span<const std::size_t> rows);

// Central-difference gradient estimate of a scalar function.
Tensor finite_diff_grad(const std::function<double(const Tensor&)>& fn, const Tensor& at,
                        double step);

}  // namespace flowdup
