#include "def/nn/autograd.hpp"

#include <stdexcept>

namespace def::nn {

Tensor& Node::grad_buffer()
{
    if (grad.empty() && !value.empty())
        grad = Tensor(value.channels, value.batch, value.height, value.width);
    return grad;
}

Var Graph::input(Tensor value, bool requires_grad)
{
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    node->needs_grad = requires_grad && recording();
    if (node->needs_grad) tape_.push_back(node);
    return node;
}

Var Graph::make(Tensor value, std::vector<Var> parents, bool uses_params,
                std::function<void(Node&)> backward)
{
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    if (!recording()) return node;

    bool any_parent = false;
    for (const auto& p : parents) any_parent = any_parent || p->needs_grad;
    node->needs_grad = uses_params || any_parent;
    if (node->needs_grad) {
        node->parents = std::move(parents);
        node->backward = std::move(backward);
        tape_.push_back(node);
    }
    return node;
}

void Graph::backward(const Var& out, const Tensor& upstream)
{
    if (!recording()) throw std::logic_error("backward: graph was not recorded");
    if (!out || !out->needs_grad) throw std::logic_error("backward: output has no recorded history");
    if (!upstream.same_shape(out->value))
        throw std::invalid_argument("backward: upstream gradient shape " + upstream.shape_str() +
                                    " does not match output " + out->value.shape_str());
    Tensor& g = out->grad_buffer();
    for (std::size_t i = 0; i < g.data.size(); ++i) g.data[i] += upstream.data[i];

    for (auto it = tape_.rbegin(); it != tape_.rend(); ++it) {
        Node& node = **it;
        if (node.backward && !node.grad.empty()) node.backward(node);
    }
    tape_.clear();
}

}  // namespace def::nn
