#include "vmnf/nn.hpp"

#include <cmath>

#include "vmnf/error.hpp"

namespace vmnf {

Mlp::Mlp(std::vector<std::size_t> layer_widths, Rng& rng) : widths(std::move(layer_widths)) {
    if (widths.size() < 2) throw ContractError("mlp: need at least input and output widths");
    for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
        std::size_t fan_in = widths[i], fan_out = widths[i + 1];
        double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        Tensor w(Shape{fan_in, fan_out});
        for (std::size_t k = 0; k < w.size(); ++k) w[k] = rng.uniform(-a, a);
        weights.push_back(leaf(std::move(w)));
        biases.push_back(leaf(Tensor(Shape{fan_out})));
    }
}

NodePtr Mlp::forward(const NodePtr& x) const {
    const Shape& s = x->value.shape();
    if (s.size() != 2 || s[1] != widths.front())
        throw ShapeError("mlp: input " + shape_str(s) + " does not match width " +
                         std::to_string(widths.front()));
    NodePtr h = x;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        h = add(matmul(h, weights[i]), biases[i]);
        if (i + 1 < weights.size()) h = tanh(h);
    }
    return h;
}

void Mlp::zero_final_layer() {
    Tensor& w = weights.back()->value;
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = 0.0;
    Tensor& b = biases.back()->value;
    for (std::size_t i = 0; i < b.size(); ++i) b[i] = 0.0;
}

void Mlp::collect_params(const std::string& prefix, ParamList& out) const {
    for (std::size_t i = 0; i < weights.size(); ++i) {
        out.push_back({prefix + "/w" + std::to_string(i), weights[i]});
        out.push_back({prefix + "/b" + std::to_string(i), biases[i]});
    }
}

std::size_t Mlp::param_count() const {
    std::size_t n = 0;
    for (std::size_t i = 0; i + 1 < widths.size(); ++i)
        n += widths[i] * widths[i + 1] + widths[i + 1];
    return n;
}

NodePtr log_softmax_with_temperature(const NodePtr& logits, double T) {
    if (!(T > 0.0)) throw DomainError("softmax: temperature must be positive, got " +
                                      std::to_string(T));
    NodePtr scaled = scale(logits, 1.0 / T);
    NodePtr lse = logsumexp(scaled);
    if (scaled->value.ndim() == 2)
        lse = reshape(lse, Shape{scaled->value.rows(), 1});
    return sub(scaled, lse);
}

NodePtr softmax_with_temperature(const NodePtr& logits, double T) {
    return exp(log_softmax_with_temperature(logits, T));
}

NodePtr cross_entropy(const NodePtr& probs, const std::vector<std::size_t>& labels) {
    const Shape& s = probs->value.shape();
    if (s.size() != 2) throw ShapeError("cross_entropy: probs must be [batch, K], got " +
                                        shape_str(s));
    std::size_t n = s[0], k = s[1];
    if (labels.size() != n)
        throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for batch " +
                         std::to_string(n));
    Tensor onehot(Shape{n, k});
    for (std::size_t i = 0; i < n; ++i) {
        if (labels[i] >= k)
            throw IndexError("cross_entropy: label " + std::to_string(labels[i]) +
                             " out of range for K=" + std::to_string(k));
        onehot.at(i, labels[i]) = 1.0;
    }
    NodePtr picked = row_sum(mul(probs, constant(std::move(onehot))));
    return neg(mean_all(log(max_const(picked, 1e-12))));
}

void Adam::step(const ParamList& params, const GradMap& grads) {
    ++t;
    double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (const Param& p : params) {
        auto git = grads.find(p.name);
        if (git == grads.end())
            throw ContractError("adam: no gradient for parameter " + p.name);
        const Tensor& g = git->second;
        Tensor& theta = p.node->value;
        if (!g.same_shape(theta) && g.size() != theta.size())
            throw ShapeError("adam: gradient shape mismatch for " + p.name);
        auto mit = m.find(p.name);
        if (mit == m.end()) {
            mit = m.emplace(p.name, Tensor(theta.shape())).first;
            v.emplace(p.name, Tensor(theta.shape()));
        }
        Tensor& mt = mit->second;
        Tensor& vt = v.at(p.name);
        for (std::size_t i = 0; i < theta.size(); ++i) {
            theta[i] -= lr * weight_decay * theta[i];
            mt[i] = beta1 * mt[i] + (1.0 - beta1) * g[i];
            vt[i] = beta2 * vt[i] + (1.0 - beta2) * g[i] * g[i];
            double mhat = mt[i] / bc1;
            double vhat = vt[i] / bc2;
            theta[i] -= lr * mhat / (std::sqrt(vhat) + eps);
        }
    }
}

}  // namespace vmnf
