#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "rcdepth/common.hpp"
#include "rcdepth/params.hpp"
#include "rcdepth/tensor.hpp"

namespace rcdepth {

class Tape;

// Handle to a node on a Tape. Cheap to copy; valid as long as the tape lives.
struct Var {
    Tape* tape = nullptr;
    std::uint32_t id = 0;

    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
    std::size_t rows() const { return value().extent(0); }
    std::size_t cols() const { return value().extent(1); }
};

// Records a forward computation as a flat node list; backward() replays it
// in reverse, accumulating adjoints. Gradient buffers are allocated lazily
// so a forward-only pass stores values only. One backward sweep per tape.
class Tape {
public:
    using BackwardFn = std::function<void(Tape&, const Tensor& out_grad)>;

    Var constant(Tensor value) { return emplace(std::move(value), BackwardFn()); }

    // Leaf bound to a named parameter; memoized so repeated lookups share
    // one node (and thus one adjoint) per tape.
    Var param(ParameterStore& store, const std::string& name) {
        auto it = param_nodes_.find(name);
        if (it != param_nodes_.end()) return Var{this, it->second};
        Var v = emplace(store.value(name), BackwardFn());
        param_nodes_.emplace(name, v.id);
        return v;
    }

    template <class F>
    Var make(Tensor value, F&& backward) {
        return emplace(std::move(value), BackwardFn(std::forward<F>(backward)));
    }

    const Tensor& value(std::uint32_t id) const { return nodes_[id].value; }
    std::size_t size() const { return nodes_.size(); }

    // Adjoint accumulator for a node, created zero-filled on first touch.
    Tensor& grad_slot(std::uint32_t id) {
        Tensor& g = grads_[id];
        if (g.empty() && nodes_[id].value.numel() > 0) g = Tensor::zeros(nodes_[id].value.shape());
        return g;
    }

    // Reverse sweep from a scalar loss. If a store is given, parameter
    // adjoints are added into its gradient slots afterwards.
    void backward(const Var& loss, ParameterStore* store = nullptr) {
        if (loss.tape != this) throw StateError("backward: loss var belongs to a different tape");
        if (nodes_.empty()) throw StateError("backward without a recorded forward pass");
        if (backward_done_) throw StateError("backward called twice on one tape");
        if (nodes_[loss.id].value.numel() != 1) throw ShapeError("backward: loss must be a scalar");
        grads_.assign(nodes_.size(), Tensor());
        grad_slot(loss.id)[0] = 1.0;
        for (std::uint32_t id = loss.id + 1; id-- > 0;) {
            Node& n = nodes_[id];
            if (!n.backward) continue;
            const Tensor& g = grads_[id];
            if (g.empty()) continue;
            n.backward(*this, g);
        }
        backward_done_ = true;
        if (store) {
            for (const auto& [name, id] : param_nodes_) {
                const Tensor& g = grads_[id];
                if (g.empty()) continue;
                Tensor& acc = store->grad(name);
                for (std::size_t i = 0; i < acc.numel(); ++i) acc[i] += g[i];
            }
        }
    }

    // Adjoint of any node after backward(); zero tensor if the node did not
    // contribute to the loss.
    const Tensor& grad(const Var& v) {
        if (!backward_done_) throw StateError("grad requested before backward");
        if (v.tape != this) throw StateError("grad: var belongs to a different tape");
        return grad_slot(v.id);
    }

    bool backward_done() const { return backward_done_; }

private:
    struct Node {
        Tensor value;
        BackwardFn backward;
    };

    Var emplace(Tensor value, BackwardFn fn) {
        if (backward_done_) throw StateError("tape extended after backward");
        std::uint32_t id = static_cast<std::uint32_t>(nodes_.size());
        nodes_.push_back(Node{std::move(value), std::move(fn)});
        return Var{this, id};
    }

    std::vector<Node> nodes_;
    std::vector<Tensor> grads_;
    std::map<std::string, std::uint32_t> param_nodes_;
    bool backward_done_ = false;
};

inline const Tensor& Var::value() const {
    if (!tape) throw StateError("value() on default-constructed Var");
    return tape->value(id);
}

}  // namespace rcdepth
