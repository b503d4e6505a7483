#include "synthaug/graph.hpp"

namespace synthaug::ad {

template <typename T>
void Graph<T>::check_id(NodeId id) const {
    if (id >= nodes_.size()) throw ShapeError("graph: reference to unknown node " + std::to_string(id));
}

template <typename T>
typename Graph<T>::NodeId Graph<T>::push(NodeInfo info, OpFn fn, Var<T> probe) {
    info.shape = probe.shape();
    nodes_.push_back(std::move(info));
    fns_.push_back(std::move(fn));
    probes_.push_back(std::move(probe));
    return nodes_.size() - 1;
}

template <typename T>
typename Graph<T>::NodeId Graph<T>::input(const std::string& name, Shape shape) {
    if (inputs_.count(name) || params_.count(name)) throw ShapeError("graph: duplicate name '" + name + "'");
    // Probe with a positive constant so ops with restricted domains (log) accept it.
    auto probe = Var<T>::constant(BasicTensor<T>(shape, T(0.5)));
    const NodeId id = push({"input", name, {}, {}}, nullptr, probe);
    inputs_[name] = id;
    return id;
}

template <typename T>
typename Graph<T>::NodeId Graph<T>::parameter(const std::string& name, BasicTensor<T> value, bool requires_grad) {
    if (inputs_.count(name) || params_.count(name)) throw ShapeError("graph: duplicate name '" + name + "'");
    auto var = requires_grad ? Var<T>::parameter(std::move(value)) : Var<T>::constant(std::move(value));
    const NodeId id = push({"parameter", name, {}, {}}, nullptr, var);
    params_[name] = id;
    return id;
}

template <typename T>
typename Graph<T>::NodeId Graph<T>::apply(const std::string& op, std::vector<NodeId> inputs, OpFn fn) {
    std::vector<Var<T>> args;
    for (NodeId i : inputs) {
        check_id(i);
        args.push_back(probes_[i]);
    }
    Var<T> probe;
    {
        NoGradGuard guard;
        probe = fn(args, EvalContext{});
    }
    return push({op, "", std::move(inputs), {}}, std::move(fn), std::move(probe));
}

template <typename T>
typename Graph<T>::NodeId Graph<T>::linear(NodeId x, NodeId weight, std::optional<NodeId> bias) {
    std::vector<NodeId> in{x, weight};
    if (bias) in.push_back(*bias);
    return apply("linear", in, [](std::span<const Var<T>> a, const EvalContext&) {
        return ad::linear(a[0], a[1], a.size() > 2 ? a[2] : Var<T>{});
    });
}

template <typename T>
typename Graph<T>::NodeId Graph<T>::conv2d(NodeId x, NodeId weight, std::optional<NodeId> bias, int padding) {
    std::vector<NodeId> in{x, weight};
    if (bias) in.push_back(*bias);
    return apply("conv2d", in, [padding](std::span<const Var<T>> a, const EvalContext&) {
        return ad::conv2d(a[0], a[1], a.size() > 2 ? a[2] : Var<T>{}, padding);
    });
}

template <typename T>
typename Graph<T>::NodeId Graph<T>::batch_norm(NodeId x, NodeId gamma, NodeId beta) {
    check_id(gamma);
    const Shape cshape = nodes_[gamma].shape;
    auto* mean = &buffers_.emplace_back(cshape, T(0));
    auto* var = &buffers_.emplace_back(cshape, T(1));
    return apply("batch_norm", {x, gamma, beta}, [mean, var](std::span<const Var<T>> a, const EvalContext& ctx) {
        return ad::batch_norm(a[0], a[1], a[2], *mean, *var, ctx.training);
    });
}

#define SYNTHAUG_UNARY_NODE(NAME)                                                                      \
    template <typename T>                                                                              \
    typename Graph<T>::NodeId Graph<T>::NAME(NodeId x) {                                               \
        return apply(#NAME, {x}, [](std::span<const Var<T>> a, const EvalContext&) { return ad::NAME(a[0]); }); \
    }

SYNTHAUG_UNARY_NODE(upsample_nearest2)
SYNTHAUG_UNARY_NODE(relu)
SYNTHAUG_UNARY_NODE(silu)
SYNTHAUG_UNARY_NODE(tanh)
SYNTHAUG_UNARY_NODE(avg_pool2)
SYNTHAUG_UNARY_NODE(max_pool2)
SYNTHAUG_UNARY_NODE(flatten)

#undef SYNTHAUG_UNARY_NODE

template <typename T>
typename Graph<T>::NodeId Graph<T>::leaky_relu(NodeId x, T slope) {
    return apply("leaky_relu", {x},
                 [slope](std::span<const Var<T>> a, const EvalContext&) { return ad::leaky_relu(a[0], slope); });
}

template <typename T>
typename Graph<T>::NodeId Graph<T>::add(NodeId a, NodeId b) {
    return apply("add", {a, b}, [](std::span<const Var<T>> v, const EvalContext&) { return ad::add(v[0], v[1]); });
}

template <typename T>
typename Graph<T>::NodeId Graph<T>::scale(NodeId x, T s) {
    return apply("scale", {x}, [s](std::span<const Var<T>> v, const EvalContext&) { return ad::scale(v[0], s); });
}

template <typename T>
typename Graph<T>::NodeId Graph<T>::concat_channels(NodeId a, NodeId b) {
    return apply("concat_channels", {a, b},
                 [](std::span<const Var<T>> v, const EvalContext&) { return ad::concat(v[0], v[1], 1); });
}

template <typename T>
typename Graph<T>::NodeId Graph<T>::softmax_cross_entropy(NodeId logits, NodeId labels) {
    return apply("softmax_cross_entropy", {logits, labels}, [](std::span<const Var<T>> v, const EvalContext&) {
        std::vector<int> ys;
        for (T y : v[1].value().storage()) ys.push_back(static_cast<int>(y));
        // Probe labels are not valid class indices; clamp them so dry runs only check geometry.
        const int classes = static_cast<int>(v[0].shape().size() == 2 ? v[0].shape()[1] : 1);
        for (int& y : ys) y = std::clamp(y, 0, classes - 1);
        return ad::softmax_cross_entropy(v[0], std::span<const int>(ys));
    });
}

template <typename T>
typename Graph<T>::NodeId Graph<T>::mse(NodeId a, NodeId b) {
    return apply("mse", {a, b}, [](std::span<const Var<T>> v, const EvalContext&) { return ad::mse(v[0], v[1]); });
}

template <typename T>
void Graph<T>::mark_output(const std::string& name, NodeId id) {
    check_id(id);
    outputs_[name] = id;
}

template <typename T>
BasicTensor<T>& Graph<T>::parameter_value(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::out_of_range("graph: no parameter '" + name + "'");
    return probes_[it->second].mutable_value();
}

template <typename T>
std::map<std::string, BasicTensor<T>> Graph<T>::evaluate(const std::map<std::string, BasicTensor<T>>& inputs,
                                                         bool checked, EvalContext ctx) {
    for (const auto& [name, value] : inputs) {
        if (!inputs_.count(name)) throw ShapeError("graph: unknown input '" + name + "'");
    }
    std::vector<Var<T>> values(nodes_.size());
    for (NodeId id = 0; id < nodes_.size(); ++id) {
        const NodeInfo& info = nodes_[id];
        if (info.op == "input") {
            auto it = inputs.find(info.name);
            if (it == inputs.end()) throw ShapeError("graph: unbound input '" + info.name + "'");
            if (it->second.shape() != info.shape) {
                throw ShapeError("graph: input '" + info.name + "' has shape " + shape_to_string(it->second.shape()) +
                                 ", expected " + shape_to_string(info.shape));
            }
            values[id] = Var<T>::constant(it->second);
        } else if (info.op == "parameter") {
            values[id] = probes_[id];
        } else {
            std::vector<Var<T>> args;
            for (NodeId i : info.inputs) args.push_back(values[i]);
            values[id] = fns_[id](args, ctx);
        }
    }
    std::map<std::string, BasicTensor<T>> out;
    for (const auto& [name, id] : outputs_) {
        if (checked && !values[id].value().all_finite()) {
            throw NumericError("graph: output '" + name + "' is not finite");
        }
        out[name] = values[id].value();
    }
    last_values_ = std::move(values);
    return out;
}

template <typename T>
std::map<std::string, BasicTensor<T>> Graph<T>::backpropagate(const std::string& loss_output) {
    if (last_values_.empty()) throw std::logic_error("graph: backpropagate called before evaluate");
    auto it = outputs_.find(loss_output);
    if (it == outputs_.end()) throw std::out_of_range("graph: no output '" + loss_output + "'");
    for (const auto& [name, id] : params_) probes_[id].zero_grad();
    ad::backward(last_values_[it->second]);
    std::map<std::string, BasicTensor<T>> grads;
    for (const auto& [name, id] : params_) {
        const Var<T>& p = probes_[id];
        if (!p.requires_grad()) continue;
        grads[name] = p.grad().empty() ? BasicTensor<T>(p.shape()) : p.grad();
    }
    return grads;
}

template class Graph<float>;
template class Graph<double>;

} // namespace synthaug::ad
