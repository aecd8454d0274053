#pragma once

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "vmnf/nn.hpp"

namespace vmnf {

struct FlowResult {
    NodePtr y;
    NodePtr log_det;  // [batch]
};

// Mutable named state that is not trained but must survive checkpointing.
using StateList = std::vector<std::pair<std::string, Tensor*>>;

class FlowLayer {
public:
    virtual ~FlowLayer() = default;
    // z -> x, the sampling direction, with per-row log|det dx/dz|.
    virtual FlowResult forward(const NodePtr& z) = 0;
    // x -> z, the density direction, with per-row log|det dz/dx|.
    virtual FlowResult inverse(const NodePtr& x) = 0;
    virtual void collect_params(const std::string& prefix, ParamList& out) = 0;
    virtual void collect_state(const std::string&, StateList&) {}
    virtual void set_training(bool) {}
    virtual std::size_t dim() const = 0;
    virtual const char* type_name() const = 0;
};

// Invertible linear map A = P L (U + diag(s)) plus bias. P is fixed at
// construction; L (unit lower), U (strictly upper), log|s| and the bias train.
// Signs of s are fixed at +1 so log|det A| stays a sum of the log-scales.
class PluLayer : public FlowLayer {
public:
    PluLayer(std::size_t d, Rng& rng);

    FlowResult forward(const NodePtr& z) override;
    FlowResult inverse(const NodePtr& x) override;
    void collect_params(const std::string& prefix, ParamList& out) override;
    std::size_t dim() const override { return d_; }
    const char* type_name() const override { return "plu"; }

    NodePtr matrix() const;  // A assembled in-graph

    std::vector<std::size_t> perm;  // row i of P has its one in column perm[i]
    NodePtr lower;                  // [D,D], strict lower part used
    NodePtr upper;                  // [D,D], strict upper part used
    NodePtr log_s;                  // [D]
    NodePtr bias;                   // [D]

private:
    NodePtr log_det_node(std::size_t batch, bool inverse_dir) const;
    std::size_t d_;
};

// x_i = z_i for z_i >= 0, alpha * z_i otherwise, with alpha = exp(a) > 0.
class PreluLayer : public FlowLayer {
public:
    explicit PreluLayer(std::size_t d, double alpha_init = 1.0);

    FlowResult forward(const NodePtr& z) override;
    FlowResult inverse(const NodePtr& x) override;
    void collect_params(const std::string& prefix, ParamList& out) override;
    std::size_t dim() const override { return d_; }
    const char* type_name() const override { return "prelu"; }

    double alpha() const;

    NodePtr a;  // scalar, alpha = exp(a)

private:
    std::size_t d_;
};

// Normalizes with batch statistics while training (stashing them so the
// immediately following inverse is exact) and with running statistics
// otherwise. Running stats update only in training-mode forward.
class BatchNormLayer : public FlowLayer {
public:
    explicit BatchNormLayer(std::size_t d, double eps = 1e-5, double momentum = 0.1);

    FlowResult forward(const NodePtr& z) override;
    FlowResult inverse(const NodePtr& x) override;
    void collect_params(const std::string&, ParamList&) override {}
    void collect_state(const std::string& prefix, StateList& out) override;
    void set_training(bool on) override { training_ = on; }
    std::size_t dim() const override { return d_; }
    const char* type_name() const override { return "batchnorm"; }

    Tensor running_mean;
    Tensor running_var;

private:
    FlowResult denormalize(const NodePtr& x, const Tensor& mean, const Tensor& var) const;
    std::size_t d_;
    double eps_;
    double momentum_;
    bool training_ = false;
    bool has_stash_ = false;
    Tensor stash_mean_, stash_var_;
};

// Affine coupling: dims with mask 1 pass through and drive the s/t nets;
// dims with mask 0 are rescaled and shifted. The s output is bounded by
// tanh times a learnable positive gain so the scale cannot blow up.
class CouplingLayer : public FlowLayer {
public:
    CouplingLayer(std::vector<int> mask, const std::vector<std::size_t>& hidden, Rng& rng);

    FlowResult forward(const NodePtr& z) override;
    FlowResult inverse(const NodePtr& x) override;
    void collect_params(const std::string& prefix, ParamList& out) override;
    std::size_t dim() const override { return d_; }
    const char* type_name() const override { return "coupling"; }

    std::vector<int> mask;
    Mlp s_net, t_net;
    NodePtr log_gain;  // scalar

private:
    NodePtr reassemble(const NodePtr& transformed, const NodePtr& kept) const;
    std::pair<NodePtr, NodePtr> conditioner(const NodePtr& kept) const;  // (s, t)
    std::size_t d_;
    std::vector<std::size_t> keep_idx_, trans_idx_, inv_perm_;
};

// Connectivity masks for a MADE net with widths [D, h..., 2D]; outputs are
// (mu, alpha) per dimension, each depending only on strictly earlier
// dimensions under the given ordering.
std::vector<Tensor> build_made_masks(const std::vector<std::size_t>& widths, std::size_t D,
                                     const std::vector<std::size_t>& ordering);

// MLP with per-layer connectivity masks applied to the weights.
struct MadeNet {
    MadeNet() = default;
    MadeNet(std::size_t D, const std::vector<std::size_t>& hidden,
            std::vector<std::size_t> ordering, Rng& rng);

    NodePtr forward(const NodePtr& x) const;  // [n, 2D]: mu columns then alpha columns
    void collect_params(const std::string& prefix, ParamList& out) const;
    void zero_final_layer() { net.zero_final_layer(); }

    Mlp net;
    std::vector<Tensor> masks;
    std::vector<std::size_t> ordering;
    std::size_t D = 0;
};

// Autoregressive affine transform. The density direction is a single pass;
// the sampling direction rebuilds one dimension at a time and is evaluated
// on values only.
class MafLayer : public FlowLayer {
public:
    MafLayer(std::size_t d, const std::vector<std::size_t>& hidden,
             std::vector<std::size_t> ordering, Rng& rng);

    FlowResult forward(const NodePtr& z) override;
    FlowResult inverse(const NodePtr& x) override;
    void collect_params(const std::string& prefix, ParamList& out) override;
    std::size_t dim() const override { return d_; }
    const char* type_name() const override { return "maf"; }

    MadeNet made;

private:
    std::size_t d_;
};

// Alternating conditioner masks: even layer index marks even dims with 1.
std::vector<std::vector<int>> build_alternating_masks(std::size_t D, std::size_t L);

// Per-row log density of the standard normal in D dims.
NodePtr base_log_prob(const NodePtr& z);

class FlowStack {
public:
    explicit FlowStack(std::size_t d) : d_(d) {}

    void add_layer(std::unique_ptr<FlowLayer> layer);
    std::size_t size() const { return layers_.size(); }
    std::size_t dim() const { return d_; }
    FlowLayer& layer(std::size_t i) { return *layers_[i]; }

    // log f_X(x): invert layer by layer from the data side, accumulating
    // inverse log-dets, then add the base log density.
    NodePtr log_prob(const NodePtr& x);
    // Push base draws through every layer forward. Use eval mode.
    Tensor sample(std::size_t n, Rng& rng);

    std::pair<NodePtr, NodePtr> forward_all(const NodePtr& z);
    std::pair<NodePtr, NodePtr> inverse_all(const NodePtr& x);

    void collect_params(const std::string& prefix, ParamList& out);
    void collect_state(const std::string& prefix, StateList& out);
    void set_training(bool on);

private:
    std::size_t d_;
    std::vector<std::unique_ptr<FlowLayer>> layers_;
};

// Stacks matching the experiment architectures.
std::unique_ptr<FlowStack> make_realnvp_stack(std::size_t d, std::size_t blocks,
                                              std::size_t hidden, Rng& rng);
std::unique_ptr<FlowStack> make_maf_stack(std::size_t d, std::size_t blocks, std::size_t hidden,
                                          Rng& rng);

}  // namespace vmnf
