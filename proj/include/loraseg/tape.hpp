#pragma once

#include <functional>
#include <memory>
#include <stdexcept>
#include <vector>

#include "loraseg/tensor.hpp"

namespace loraseg {

// Ordered record of differentiable primitive applications. Ops append to the
// tape active on the calling thread; backward() replays it in reverse.
template <typename T>
class Tape {
public:
    using NodePtr = std::shared_ptr<TensorNode<T>>;

    struct Entry {
        const char *op;
        std::vector<NodePtr> inputs;
        NodePtr output;
        std::function<void()> backward;
    };

    Tape() = default;
    Tape(const Tape &) = delete;
    Tape &operator=(const Tape &) = delete;

    void record(const char *op, std::vector<NodePtr> inputs, NodePtr output, std::function<void()> backward) {
        entries_.push_back(Entry{op, std::move(inputs), std::move(output), std::move(backward)});
    }

    std::size_t size() const { return entries_.size(); }
    const std::vector<Entry> &entries() const { return entries_; }
    void clear() { entries_.clear(); }

    // Gradients of `loss` with respect to every requires_grad tensor reached by
    // the tape. Previous gradients on those tensors are overwritten.
    void backward(const Tensor<T> &loss) {
        if (loss.numel() != 1)
            throw ShapeError("backward needs a scalar output, got shape " + shape_str(loss.shape()));
        if (!loss.requires_grad()) throw std::logic_error("backward on a tensor that was not recorded");
        for (auto &e : entries_) {
            for (auto &in : e.inputs)
                if (in && in->requires_grad) in->grad.assign(in->data.size(), T(0));
            e.output->grad.assign(e.output->data.size(), T(0));
        }
        loss.node()->grad.assign(1, T(1));
        for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) it->backward();
    }

    static Tape *active() { return active_; }

private:
    template <typename>
    friend class TapeScope;
    static inline thread_local Tape *active_ = nullptr;
    std::vector<Entry> entries_;
};

// Makes `tape` the recording target on this thread for the scope's lifetime.
template <typename T>
class TapeScope {
public:
    explicit TapeScope(Tape<T> &tape) : previous_(Tape<T>::active_) { Tape<T>::active_ = &tape; }
    ~TapeScope() { Tape<T>::active_ = previous_; }
    TapeScope(const TapeScope &) = delete;
    TapeScope &operator=(const TapeScope &) = delete;

private:
    Tape<T> *previous_;
};

} // namespace loraseg
