#pragma once

#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "vmnf/tensor.hpp"

namespace vmnf {

// Reverse-mode autodiff over a define-by-run graph. Leaves hold parameters or
// inputs; every op returns a fresh node whose backward rule is the exact
// vector-Jacobian product. Graphs are rebuilt each forward pass and are
// single-threaded per model instance.

struct Node;
using NodePtr = std::shared_ptr<Node>;

struct Node {
    Tensor value;
    Tensor grad;  // allocated by backward()
    bool requires_grad = false;
    std::vector<NodePtr> parents;
    std::function<void(Node&)> backward_fn;  // accumulates this node's grad into parents
    const char* op = "leaf";
};

// Leaf holding trainable or differentiable-input data.
NodePtr leaf(Tensor value, bool requires_grad = true);
// Leaf that never receives gradients (data batches, masks, priors).
NodePtr constant(Tensor value);
NodePtr constant_scalar(double v);

// --- elementwise, broadcasting over rank <= 2 ---
NodePtr add(const NodePtr& a, const NodePtr& b);
NodePtr sub(const NodePtr& a, const NodePtr& b);
NodePtr mul(const NodePtr& a, const NodePtr& b);
NodePtr exp(const NodePtr& a);
NodePtr log(const NodePtr& a);  // DomainError on non-positive input
NodePtr tanh(const NodePtr& a);
NodePtr neg(const NodePtr& a);
NodePtr max_const(const NodePtr& a, double c);  // elementwise max(a, c)
NodePtr scale(const NodePtr& a, double k);
NodePtr add_const(const NodePtr& a, double c);

// --- linear algebra ---
NodePtr matmul(const NodePtr& a, const NodePtr& b);  // [m,k] x [k,n]
NodePtr transpose(const NodePtr& a);                 // [m,n] -> [n,m]
NodePtr matrix_inverse(const NodePtr& a);            // [d,d]; partial-pivot elimination

// --- reductions and structure ---
NodePtr sum_all(const NodePtr& a);   // -> scalar
NodePtr mean_all(const NodePtr& a);  // -> scalar
NodePtr row_sum(const NodePtr& a);   // [n,m] -> [n]
NodePtr col_mean(const NodePtr& a);  // [n,m] -> [m]
NodePtr broadcast_to(const NodePtr& a, const Shape& target);
NodePtr reshape(const NodePtr& a, const Shape& target);
NodePtr gather_cols(const NodePtr& a, std::vector<std::size_t> idx);  // column slice/permute
NodePtr concat_cols(const NodePtr& a, const NodePtr& b);
// Overflow-safe logsumexp over the last axis: [n,m] -> [n], [m] -> scalar.
NodePtr logsumexp(const NodePtr& a);

struct Param {
    std::string name;
    NodePtr node;
};
using ParamList = std::vector<Param>;
using GradMap = std::map<std::string, Tensor>;

// Propagates d(loss)/d(node) through the graph and returns the gradient for
// every listed param. Params the loss does not reach get exact zeros.
// Repeated calls on the same graph produce identical results.
GradMap backward(const NodePtr& loss, const ParamList& params);

// Propagation only; gradients are left on node.grad. Used where gradients
// w.r.t. non-param leaves are wanted.
void backward_into(const NodePtr& loss);

// Nodes in dependency order, leaves first, root last.
std::vector<Node*> topo_order(const NodePtr& root);

}  // namespace vmnf
