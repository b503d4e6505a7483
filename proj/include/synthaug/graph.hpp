#pragma once

#include <deque>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "synthaug/ops.hpp"

namespace synthaug::ad {

// Declarative computation graph over the primitive op set.
//
// Nodes are appended in order, so every node's inputs precede it. Each node is
// dry-run on probe values when added; incompatible shapes therefore fail at
// construction rather than at evaluation.
template <typename T>
class Graph {
public:
    using NodeId = std::size_t;

    struct EvalContext {
        bool training = false;
        RngStream* rng = nullptr;
    };
    using OpFn = std::function<Var<T>(std::span<const Var<T>>, const EvalContext&)>;

    struct NodeInfo {
        std::string op;
        std::string name; // inputs and parameters only
        std::vector<NodeId> inputs;
        Shape shape;
    };

    NodeId input(const std::string& name, Shape shape);
    NodeId parameter(const std::string& name, BasicTensor<T> value, bool requires_grad = true);

    // Generic node; `fn` receives the values of `inputs` in order.
    NodeId apply(const std::string& op, std::vector<NodeId> inputs, OpFn fn);

    NodeId linear(NodeId x, NodeId weight, std::optional<NodeId> bias = std::nullopt);
    NodeId conv2d(NodeId x, NodeId weight, std::optional<NodeId> bias, int padding);
    NodeId upsample_nearest2(NodeId x);
    NodeId batch_norm(NodeId x, NodeId gamma, NodeId beta);
    NodeId relu(NodeId x);
    NodeId leaky_relu(NodeId x, T slope = T(0.2));
    NodeId silu(NodeId x);
    NodeId tanh(NodeId x);
    NodeId avg_pool2(NodeId x);
    NodeId max_pool2(NodeId x);
    NodeId flatten(NodeId x);
    NodeId add(NodeId a, NodeId b);
    NodeId scale(NodeId x, T s);
    NodeId concat_channels(NodeId a, NodeId b);
    // `labels` is an input node holding class indices as values.
    NodeId softmax_cross_entropy(NodeId logits, NodeId labels);
    NodeId mse(NodeId a, NodeId b);

    void mark_output(const std::string& name, NodeId id);

    // Runs the graph. Throws ShapeError on unbound or mis-shaped inputs and, when
    // `checked`, NumericError if any output is non-finite.
    std::map<std::string, BasicTensor<T>> evaluate(const std::map<std::string, BasicTensor<T>>& inputs,
                                                   bool checked = true, EvalContext ctx = {});

    // Gradients of the named scalar output with respect to every trainable parameter
    // from the most recent evaluate(). Parameters not on the loss path get zeros.
    std::map<std::string, BasicTensor<T>> backpropagate(const std::string& loss_output);

    const std::vector<NodeInfo>& nodes() const noexcept { return nodes_; }
    const Shape& shape_of(NodeId id) const { return nodes_.at(id).shape; }
    BasicTensor<T>& parameter_value(const std::string& name);

private:
    NodeId push(NodeInfo info, OpFn fn, Var<T> probe);
    void check_id(NodeId id) const;

    std::vector<NodeInfo> nodes_;
    std::vector<OpFn> fns_;
    std::vector<Var<T>> probes_;
    std::map<std::string, NodeId> inputs_;
    std::map<std::string, NodeId> params_;
    std::map<std::string, NodeId> outputs_;
    std::deque<BasicTensor<T>> buffers_; // batch-norm running statistics
    std::vector<Var<T>> last_values_;
};

} // namespace synthaug::ad
