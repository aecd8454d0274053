#pragma once

#include <map>
#include <string>
#include <vector>

#include "vmnf/autodiff.hpp"
#include "vmnf/rng.hpp"

namespace vmnf {

// Fully connected net: affine-tanh-...-affine, linear output.
// Weights start uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out)), biases zero.
struct Mlp {
    std::vector<std::size_t> widths;
    std::vector<NodePtr> weights;  // [w_i, w_{i+1}]
    std::vector<NodePtr> biases;   // [w_{i+1}]

    Mlp() = default;
    Mlp(std::vector<std::size_t> layer_widths, Rng& rng);

    NodePtr forward(const NodePtr& x) const;
    void zero_final_layer();
    void collect_params(const std::string& prefix, ParamList& out) const;
    std::size_t param_count() const;
    std::size_t d_in() const { return widths.front(); }
    std::size_t d_out() const { return widths.back(); }
};

// Rows of softmax(logits / T). T <= 0 is a domain error.
NodePtr softmax_with_temperature(const NodePtr& logits, double T);
// log of the above, overflow-safe.
NodePtr log_softmax_with_temperature(const NodePtr& logits, double T);

// Mean over batch of -log probs[row, label]; probabilities clamped at 1e-12.
NodePtr cross_entropy(const NodePtr& probs, const std::vector<std::size_t>& labels);

// Adam with decoupled weight decay: the shrinkage step runs before the
// moment update, so decay never enters the moment estimates.
struct Adam {
    double lr = 0.001;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
    long t = 0;
    std::map<std::string, Tensor> m;
    std::map<std::string, Tensor> v;

    Adam() = default;
    Adam(double learning_rate, double wd) : lr(learning_rate), weight_decay(wd) {}

    void step(const ParamList& params, const GradMap& grads);
};

}  // namespace vmnf
