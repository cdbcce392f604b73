#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "def/nn/param_store.hpp"
#include "def/nn/tensor.hpp"

namespace def::nn {

struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
    Tensor value;
    Tensor grad;
    bool needs_grad = false;
    std::vector<Var> parents;
    std::function<void(Node&)> backward;

    /// Gradient buffer, zero-filled on first access.
    Tensor& grad_buffer();
};

/// Define-by-run tape. In recording mode every node that (transitively)
/// touches parameters keeps its inputs alive and a closure that pushes its
/// gradient to them; parameter gradients land in `sink`. In inference mode
/// nothing is retained, so intermediates are freed as soon as they fall out
/// of scope.
class Graph {
public:
    Graph() = default;
    explicit Graph(ParamStore* sink) : sink_(sink) {}

    bool recording() const { return sink_ != nullptr; }
    ParamStore* sink() const { return sink_; }

    Var input(Tensor value, bool requires_grad = false);

    /// Creates a node. `uses_params` marks ops whose backward writes into the
    /// parameter sink.
    Var make(Tensor value, std::vector<Var> parents, bool uses_params,
             std::function<void(Node&)> backward);

    /// Seeds d(out) = upstream and runs the tape in reverse.
    void backward(const Var& out, const Tensor& upstream);

    std::size_t tape_size() const { return tape_.size(); }

private:
    ParamStore* sink_ = nullptr;
    std::vector<Var> tape_;
};

}  // namespace def::nn
