#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "attnguide/errors.hpp"
#include "attnguide/rng.hpp"

namespace attnguide {

inline std::string shape_str(const std::vector<size_t>& shape) {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
    os << ")";
    return os.str();
}

inline size_t shape_numel(const std::vector<size_t>& shape) {
    size_t n = 1;
    for (size_t d : shape) {
        if (d == 0) throw ParameterError("tensor dimensions must be positive");
        n *= d;
    }
    return n;
}

// Dense row-major tensor storage plus its differentiation state. grad is
// either empty (not populated) or exactly data.size() long. tape_id/node
// identify the tape entry that produced this tensor; tape_id 0 marks a leaf.
template <typename S>
struct TensorData {
    std::vector<size_t> shape;
    std::vector<S> data;
    std::vector<S> grad;
    bool requires_grad = false;
    uint64_t tape_id = 0;
    int node = -1;
};

template <typename S>
class Tape;

// Shared handle over TensorData. Copies alias the same storage; use clone()
// for a deep copy. The scalar type S is float for training/sampling runs and
// double for verification runs.
template <typename S>
class Tensor {
public:
    using Scalar = S;

    Tensor() : d_(std::make_shared<TensorData<S>>()) {}

    Tensor(std::vector<size_t> shape, std::vector<S> values)
        : d_(std::make_shared<TensorData<S>>()) {
        size_t n = shape_numel(shape);
        if (n != values.size())
            throw DimensionError("value count " + std::to_string(values.size()) +
                                 " does not match shape " + shape_str(shape));
        d_->shape = std::move(shape);
        d_->data = std::move(values);
    }

    static Tensor zeros(std::vector<size_t> shape) { return full(std::move(shape), S(0)); }
    static Tensor ones(std::vector<size_t> shape) { return full(std::move(shape), S(1)); }

    static Tensor full(std::vector<size_t> shape, S value) {
        Tensor t;
        size_t n = shape_numel(shape);
        t.d_->shape = std::move(shape);
        t.d_->data.assign(n, value);
        return t;
    }

    static Tensor scalar(S value) { return Tensor({1}, {value}); }

    static Tensor randn(std::vector<size_t> shape, Rng& rng, double stddev = 1.0) {
        Tensor t = zeros(std::move(shape));
        for (S& v : t.d_->data) v = static_cast<S>(rng.normal() * stddev);
        return t;
    }

    const std::vector<size_t>& shape() const { return d_->shape; }
    size_t rank() const { return d_->shape.size(); }
    size_t size(size_t axis) const { return d_->shape.at(axis); }
    size_t numel() const { return d_->data.size(); }

    std::vector<S>& data() { return d_->data; }
    const std::vector<S>& data() const { return d_->data; }

    S& operator[](size_t flat) { return d_->data[flat]; }
    const S& operator[](size_t flat) const { return d_->data[flat]; }

    // 2-D accessor; row-major.
    S& at(size_t r, size_t c) { return d_->data[r * d_->shape[1] + c]; }
    const S& at(size_t r, size_t c) const { return d_->data[r * d_->shape[1] + c]; }

    S scalar_value() const {
        if (numel() != 1) throw ContractError("scalar_value on tensor of shape " + shape_str(shape()));
        return d_->data[0];
    }

    bool requires_grad() const { return d_->requires_grad; }
    Tensor& set_requires_grad(bool rg) {
        d_->requires_grad = rg;
        return *this;
    }

    bool has_grad() const { return !d_->grad.empty(); }
    const std::vector<S>& grad() const {
        if (d_->grad.empty()) throw ContractError("gradient not populated");
        return d_->grad;
    }
    void clear_grad() { d_->grad.clear(); }

    bool on_tape() const { return d_->node >= 0; }

    // Deep copy; the copy is a leaf with no gradient.
    Tensor clone() const {
        Tensor t;
        t.d_->shape = d_->shape;
        t.d_->data = d_->data;
        t.d_->requires_grad = d_->requires_grad;
        return t;
    }

    // Same storage values as a fresh leaf (drops tape linkage and grad).
    Tensor detach() const { return clone().set_requires_grad(false); }

    std::shared_ptr<TensorData<S>>& ptr() { return d_; }
    const std::shared_ptr<TensorData<S>>& ptr() const { return d_; }

private:
    std::shared_ptr<TensorData<S>> d_;
};

// Records the operations of one forward computation in execution order and
// replays their backward rules in reverse. A tape is confined to one thread;
// independent tapes may run on parallel workers.
template <typename S>
class Tape {
public:
    struct Entry {
        std::vector<std::shared_ptr<TensorData<S>>> inputs;
        std::shared_ptr<TensorData<S>> output;
        std::function<void()> backward;
    };

    Tape() : id_(next_id()) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    uint64_t id() const { return id_; }
    size_t size() const { return entries_.size(); }

    int record(std::vector<std::shared_ptr<TensorData<S>>> inputs,
               std::shared_ptr<TensorData<S>> output, std::function<void()> backward) {
        int idx = static_cast<int>(entries_.size());
        for (const auto& in : inputs) {
            // Topological invariant: anything produced on this tape precedes
            // its consumers. Tensors from other tapes act as leaves here.
            if (in->tape_id == id_ && in->node >= idx)
                throw ContractError("tape order violated");
        }
        output->tape_id = id_;
        output->node = idx;
        entries_.push_back({std::move(inputs), std::move(output), std::move(backward)});
        return idx;
    }

    // Populates gradients of every requires_grad tensor reachable from loss.
    // Gradients are overwritten (not accumulated) across backward calls, so
    // replaying the same tape is bit-for-bit deterministic.
    void backward(const Tensor<S>& loss) {
        if (loss.numel() != 1)
            throw ContractError("backward requires a scalar loss, got shape " + shape_str(loss.shape()));
        const auto& ld = loss.ptr();
        if (ld->tape_id != id_ || ld->node < 0 || static_cast<size_t>(ld->node) >= entries_.size() ||
            entries_[static_cast<size_t>(ld->node)].output != ld)
            throw ContractError("backward on a loss that is detached from this tape");
        for (auto& e : entries_) {
            e.output->grad.clear();
            for (auto& in : e.inputs) in->grad.clear();
        }
        ld->grad.assign(1, S(1));
        for (int i = ld->node; i >= 0; --i) {
            Entry& e = entries_[static_cast<size_t>(i)];
            if (!e.output->grad.empty()) e.backward();
        }
    }

    void clear() { entries_.clear(); }

private:
    static uint64_t next_id() {
        static std::atomic<uint64_t> counter{1};
        return counter.fetch_add(1);
    }

    std::vector<Entry> entries_;
    uint64_t id_;
};

// RAII scope installing a tape as the thread's recording target. Ops record
// onto the active tape only when an input requires gradients; with no scope
// open, forwards run in plain inference mode.
template <typename S>
class TapeScope {
public:
    explicit TapeScope(Tape<S>& tape) : prev_(active_) { active_ = &tape; }
    ~TapeScope() { active_ = prev_; }
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

    static Tape<S>* active() { return active_; }

private:
    Tape<S>* prev_;
    static thread_local Tape<S>* active_;
};

template <typename S>
thread_local Tape<S>* TapeScope<S>::active_ = nullptr;

// Allocates (zero-filled) the grad buffer if absent.
template <typename S>
inline std::vector<S>& ensure_grad(TensorData<S>& t) {
    if (t.grad.empty()) t.grad.assign(t.data.size(), S(0));
    return t.grad;
}

}  // namespace attnguide
