#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace loraseg {

using Shape = std::vector<std::int64_t>;

inline std::int64_t shape_numel(const Shape &shape) {
    return std::accumulate(shape.begin(), shape.end(), std::int64_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape &shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
    os << ']';
    return os.str();
}

class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

template <typename T>
struct TensorNode {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad; // empty until a backward pass reaches the node
    bool requires_grad = false;
    bool is_leaf = true;
};

// Row-major n-d array with shared storage. Copies of a Tensor alias the same
// node; use clone() for a deep copy.
template <typename T>
class Tensor {
public:
    using value_type = T;
    using Node = TensorNode<T>;

    Tensor() = default;

    explicit Tensor(Shape shape, T fill = T(0)) : node_(std::make_shared<Node>()) {
        for (auto d : shape)
            if (d < 0) throw ShapeError("negative dimension in shape " + shape_str(shape));
        node_->data.assign(static_cast<std::size_t>(shape_numel(shape)), fill);
        node_->shape = std::move(shape);
    }

    Tensor(Shape shape, std::vector<T> values) : node_(std::make_shared<Node>()) {
        if (static_cast<std::int64_t>(values.size()) != shape_numel(shape))
            throw ShapeError("value count " + std::to_string(values.size()) + " does not match shape " +
                             shape_str(shape));
        node_->shape = std::move(shape);
        node_->data = std::move(values);
    }

    static Tensor scalar(T value) { return Tensor(Shape{}, std::vector<T>{value}); }

    bool defined() const { return static_cast<bool>(node_); }
    const Shape &shape() const { return node_->shape; }
    int rank() const { return static_cast<int>(node_->shape.size()); }
    std::int64_t dim(int axis) const {
        const int r = rank();
        if (axis < 0) axis += r;
        if (axis < 0 || axis >= r) throw ShapeError("axis out of range for shape " + shape_str(shape()));
        return node_->shape[static_cast<std::size_t>(axis)];
    }
    std::size_t numel() const { return node_->data.size(); }

    std::span<const T> data() const { return node_->data; }
    // Mutation is reserved for initialisation, optimiser steps and merges.
    std::span<T> mutable_data() { return node_->data; }

    T item() const {
        if (numel() != 1) throw ShapeError("item() on non-scalar tensor of shape " + shape_str(shape()));
        return node_->data[0];
    }

    bool requires_grad() const { return node_->requires_grad; }
    bool is_leaf() const { return node_->is_leaf; }

    Tensor &set_requires_grad(bool flag) {
        if (!node_->is_leaf) throw std::logic_error("requires_grad can only be toggled on leaf tensors");
        node_->requires_grad = flag;
        if (!flag) node_->grad.clear();
        return *this;
    }

    bool has_grad() const { return !node_->grad.empty(); }
    std::span<const T> grad() const { return node_->grad; }
    std::span<T> mutable_grad() { return node_->grad; }
    void clear_grad() { node_->grad.clear(); }

    Tensor clone() const { return Tensor(shape(), node_->data); }

    template <typename U>
    Tensor<U> cast() const {
        std::vector<U> out(node_->data.begin(), node_->data.end());
        return Tensor<U>(shape(), std::move(out));
    }

    const std::shared_ptr<Node> &node() const { return node_; }
    bool same_storage(const Tensor &other) const { return node_ == other.node_; }

    static Tensor from_node(std::shared_ptr<Node> node) {
        Tensor t;
        t.node_ = std::move(node);
        return t;
    }

private:
    std::shared_ptr<Node> node_;
};

} // namespace loraseg
