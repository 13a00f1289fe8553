#pragma once

#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "poselift/tensor.hpp"

namespace poselift::ad {

// Named trainable array. Gradients accumulate additively across backward
// passes until zero_grad().
class Parameter {
  public:
    Parameter() = default;
    Parameter(std::string name, std::vector<int> shape, bool requires_grad = true)
        : name(std::move(name)), shape(std::move(shape)), requires_grad(requires_grad) {
        std::size_t n = 1;
        for (int d : this->shape) {
            if (d <= 0) raise(ErrorKind::dimension, "Parameter dim must be positive: " + this->name);
            n *= static_cast<std::size_t>(d);
        }
        value.assign(n, 0.0);
        grad.assign(n, 0.0);
    }

    std::size_t size() const { return value.size(); }

    void zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }

    std::string name;
    std::vector<int> shape;
    std::vector<double> value;
    std::vector<double> grad;
    bool requires_grad = true;
};

// Handle to a node on the tape.
struct Var {
    int idx = -1;
    bool valid() const { return idx >= 0; }
};

// Define-by-run tape: forward ops append nodes in topological order, so the
// reverse sweep visits each node exactly once. Rebuilt for every forward pass.
class Tape {
  public:
    using BackwardFn = std::function<void(Tape&, Var self)>;

    Var leaf(Tensor3 value) { return push(std::move(value), nullptr); }

    Var record(Tensor3 value, BackwardFn backward) {
        return push(std::move(value), std::move(backward));
    }

    const Tensor3& value(Var v) const { return nodes_[check(v)].value; }
    Tensor3& value_mut(Var v) { return nodes_[check(v)].value; }

    // Gradient buffer of a node; allocated (zero) lazily during backward.
    Tensor3& grad(Var v) {
        Node& n = nodes_[check(v)];
        if (n.grad.data.empty()) {
            n.grad = Tensor3(n.value.batch, n.value.channels, n.value.time);
        }
        return n.grad;
    }

    // Reverse sweep from a scalar loss node (shape (1,1,1)).
    void backward(Var loss) {
        if (nodes_.empty()) raise(ErrorKind::empty_input, "backward on empty tape");
        const Tensor3& lv = value(loss);
        if (lv.size() != 1)
            raise(ErrorKind::dimension, "backward requires a scalar loss, got " + lv.shape_str());
        grad(loss).data[0] = 1.0;
        for (int i = loss.idx; i >= 0; --i) {
            if (nodes_[i].backward && !nodes_[i].grad.data.empty()) nodes_[i].backward(*this, Var{i});
        }
    }

    void clear() { nodes_.clear(); }
    std::size_t size() const { return nodes_.size(); }

  private:
    struct Node {
        Tensor3 value;
        Tensor3 grad;
        BackwardFn backward;
    };

    Var push(Tensor3 value, BackwardFn backward) {
        nodes_.push_back(Node{std::move(value), Tensor3{}, std::move(backward)});
        return Var{static_cast<int>(nodes_.size()) - 1};
    }

    int check(Var v) const {
        if (v.idx < 0 || v.idx >= static_cast<int>(nodes_.size()))
            raise(ErrorKind::dimension, "invalid tape handle");
        return v.idx;
    }

    std::vector<Node> nodes_;
};

}  // namespace poselift::ad
