#include "vmnf/flows.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "vmnf/error.hpp"

namespace vmnf {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

NodePtr spread_scalar(const NodePtr& s, std::size_t batch) {
    return broadcast_to(s, Shape{batch});
}

Tensor row_constants(const std::vector<double>& v) { return Tensor(Shape{v.size()}, v); }

void check_batch_input(const NodePtr& x, std::size_t d, const char* who) {
    const Shape& s = x->value.shape();
    if (s.size() != 2 || s[1] != d)
        throw ShapeError(std::string(who) + ": expected [batch, " + std::to_string(d) +
                         "], got " + shape_str(s));
}

}  // namespace

PluLayer::PluLayer(std::size_t d, Rng& rng) : d_(d) {
    if (d < 1) throw ContractError("plu: dimension must be positive");
    perm.resize(d);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    rng.shuffle(perm);
    lower = leaf(Tensor(Shape{d, d}));
    upper = leaf(Tensor(Shape{d, d}));
    log_s = leaf(Tensor(Shape{d}));
    bias = leaf(Tensor(Shape{d}));
}

NodePtr PluLayer::matrix() const {
    Tensor p_mat(Shape{d_, d_});
    Tensor eye(Shape{d_, d_});
    Tensor strict_lower(Shape{d_, d_});
    Tensor strict_upper(Shape{d_, d_});
    for (std::size_t i = 0; i < d_; ++i) {
        p_mat.at(i, perm[i]) = 1.0;
        eye.at(i, i) = 1.0;
        for (std::size_t j = 0; j < i; ++j) strict_lower.at(i, j) = 1.0;
        for (std::size_t j = i + 1; j < d_; ++j) strict_upper.at(i, j) = 1.0;
    }
    NodePtr l_full = add(constant(eye), mul(lower, constant(strict_lower)));
    NodePtr diag_s = mul(constant(std::move(eye)), broadcast_to(exp(log_s), Shape{d_, d_}));
    NodePtr u_full = add(mul(upper, constant(strict_upper)), diag_s);
    return matmul(constant(std::move(p_mat)), matmul(l_full, u_full));
}

NodePtr PluLayer::log_det_node(std::size_t batch, bool inverse_dir) const {
    NodePtr s = sum_all(log_s);
    if (inverse_dir) s = neg(s);
    return spread_scalar(s, batch);
}

FlowResult PluLayer::forward(const NodePtr& z) {
    check_batch_input(z, d_, "plu");
    NodePtr x = add(matmul(z, transpose(matrix())), bias);
    return {x, log_det_node(z->value.rows(), false)};
}

FlowResult PluLayer::inverse(const NodePtr& x) {
    check_batch_input(x, d_, "plu");
    NodePtr z = matmul(sub(x, bias), transpose(matrix_inverse(matrix())));
    return {z, log_det_node(x->value.rows(), true)};
}

void PluLayer::collect_params(const std::string& prefix, ParamList& out) {
    out.push_back({prefix + "/L", lower});
    out.push_back({prefix + "/U", upper});
    out.push_back({prefix + "/log_s", log_s});
    out.push_back({prefix + "/b", bias});
}

PreluLayer::PreluLayer(std::size_t d, double alpha_init) : d_(d) {
    if (!(alpha_init > 0.0)) throw DomainError("prelu: alpha must be positive");
    a = leaf(Tensor::scalar(std::log(alpha_init)));
}

double PreluLayer::alpha() const { return std::exp(a->value[0]); }

namespace {

// min(v, 0) built from the max primitive.
NodePtr negative_part(const NodePtr& v) { return neg(max_const(neg(v), 0.0)); }

Tensor negative_counts(const Tensor& v) {
    Tensor counts(Shape{v.rows()});
    for (std::size_t i = 0; i < v.rows(); ++i) {
        double c = 0.0;
        for (std::size_t j = 0; j < v.cols(); ++j)
            if (v.at(i, j) < 0.0) c += 1.0;
        counts[i] = c;
    }
    return counts;
}

}  // namespace

FlowResult PreluLayer::forward(const NodePtr& z) {
    check_batch_input(z, d_, "prelu");
    NodePtr x = add(max_const(z, 0.0), mul(exp(a), negative_part(z)));
    NodePtr log_det = mul(constant(negative_counts(z->value)), a);
    return {x, log_det};
}

FlowResult PreluLayer::inverse(const NodePtr& x) {
    check_batch_input(x, d_, "prelu");
    NodePtr z = add(max_const(x, 0.0), mul(exp(neg(a)), negative_part(x)));
    NodePtr log_det = mul(constant(negative_counts(x->value)), neg(a));
    return {z, log_det};
}

void PreluLayer::collect_params(const std::string& prefix, ParamList& out) {
    out.push_back({prefix + "/a", a});
}

BatchNormLayer::BatchNormLayer(std::size_t d, double eps, double momentum)
    : running_mean(Shape{d}),
      running_var(Shape{d}, 1.0),
      d_(d),
      eps_(eps),
      momentum_(momentum) {}

FlowResult BatchNormLayer::forward(const NodePtr& z) {
    check_batch_input(z, d_, "batchnorm");
    std::size_t n = z->value.rows();
    if (training_) {
        if (n < 2) throw ContractError("batchnorm: training batch must have at least 2 rows");
        NodePtr mu = col_mean(z);
        NodePtr diff = sub(z, mu);
        NodePtr var = col_mean(mul(diff, diff));
        NodePtr log_var_eps = log(add_const(var, eps_));
        NodePtr x = mul(diff, exp(scale(log_var_eps, -0.5)));
        NodePtr log_det = spread_scalar(scale(sum_all(log_var_eps), -0.5), n);

        for (std::size_t j = 0; j < d_; ++j) {
            running_mean[j] = (1.0 - momentum_) * running_mean[j] + momentum_ * mu->value[j];
            running_var[j] = (1.0 - momentum_) * running_var[j] + momentum_ * var->value[j];
        }
        stash_mean_ = mu->value;
        stash_var_ = var->value;
        has_stash_ = true;
        return {x, log_det};
    }
    std::vector<double> inv_std(d_);
    double ld = 0.0;
    for (std::size_t j = 0; j < d_; ++j) {
        double ve = running_var[j] + eps_;
        inv_std[j] = 1.0 / std::sqrt(ve);
        ld -= 0.5 * std::log(ve);
    }
    NodePtr x = mul(sub(z, constant(running_mean)), constant(row_constants(inv_std)));
    return {x, constant(Tensor(Shape{n}, ld))};
}

FlowResult BatchNormLayer::denormalize(const NodePtr& x, const Tensor& mean,
                                       const Tensor& var) const {
    std::size_t n = x->value.rows();
    std::vector<double> std_dev(d_);
    double ld = 0.0;
    for (std::size_t j = 0; j < d_; ++j) {
        double ve = var[j] + eps_;
        std_dev[j] = std::sqrt(ve);
        ld += 0.5 * std::log(ve);
    }
    NodePtr z = add(mul(x, constant(row_constants(std_dev))), constant(mean));
    return {z, constant(Tensor(Shape{n}, ld))};
}

FlowResult BatchNormLayer::inverse(const NodePtr& x) {
    check_batch_input(x, d_, "batchnorm");
    if (training_ && has_stash_) return denormalize(x, stash_mean_, stash_var_);
    return denormalize(x, running_mean, running_var);
}

void BatchNormLayer::collect_state(const std::string& prefix, StateList& out) {
    out.push_back({prefix + "/running_mean", &running_mean});
    out.push_back({prefix + "/running_var", &running_var});
}

CouplingLayer::CouplingLayer(std::vector<int> mask_in, const std::vector<std::size_t>& hidden,
                             Rng& rng)
    : mask(std::move(mask_in)), d_(mask.size()) {
    if (d_ < 2) throw ContractError("coupling: need at least 2 dims");
    for (std::size_t j = 0; j < d_; ++j) {
        if (mask[j] != 0 && mask[j] != 1) throw ContractError("coupling: mask entries must be 0/1");
        if (mask[j] == 1)
            keep_idx_.push_back(j);
        else
            trans_idx_.push_back(j);
    }
    if (keep_idx_.empty() || trans_idx_.empty())
        throw ContractError("coupling: mask needs both kept and transformed dims");

    inv_perm_.resize(d_);
    for (std::size_t t = 0; t < trans_idx_.size(); ++t) inv_perm_[trans_idx_[t]] = t;
    for (std::size_t k = 0; k < keep_idx_.size(); ++k)
        inv_perm_[keep_idx_[k]] = trans_idx_.size() + k;

    std::vector<std::size_t> widths;
    widths.push_back(keep_idx_.size());
    widths.insert(widths.end(), hidden.begin(), hidden.end());
    widths.push_back(trans_idx_.size());
    s_net = Mlp(widths, rng);
    s_net.zero_final_layer();
    t_net = Mlp(widths, rng);
    t_net.zero_final_layer();
    log_gain = leaf(Tensor::scalar(0.0));
}

std::pair<NodePtr, NodePtr> CouplingLayer::conditioner(const NodePtr& kept) const {
    NodePtr s = mul(tanh(s_net.forward(kept)), exp(log_gain));
    NodePtr t = t_net.forward(kept);
    return {s, t};
}

NodePtr CouplingLayer::reassemble(const NodePtr& transformed, const NodePtr& kept) const {
    return gather_cols(concat_cols(transformed, kept), inv_perm_);
}

FlowResult CouplingLayer::forward(const NodePtr& z) {
    check_batch_input(z, d_, "coupling");
    NodePtr kept = gather_cols(z, keep_idx_);
    NodePtr trans = gather_cols(z, trans_idx_);
    auto [s, t] = conditioner(kept);
    NodePtr out = add(mul(trans, exp(s)), t);
    return {reassemble(out, kept), row_sum(s)};
}

FlowResult CouplingLayer::inverse(const NodePtr& x) {
    check_batch_input(x, d_, "coupling");
    NodePtr kept = gather_cols(x, keep_idx_);
    NodePtr trans = gather_cols(x, trans_idx_);
    auto [s, t] = conditioner(kept);
    NodePtr out = mul(sub(trans, t), exp(neg(s)));
    return {reassemble(out, kept), neg(row_sum(s))};
}

void CouplingLayer::collect_params(const std::string& prefix, ParamList& out) {
    s_net.collect_params(prefix + "/s", out);
    t_net.collect_params(prefix + "/t", out);
    out.push_back({prefix + "/log_gain", log_gain});
}

std::vector<Tensor> build_made_masks(const std::vector<std::size_t>& widths, std::size_t D,
                                     const std::vector<std::size_t>& ordering) {
    if (D < 1) throw ContractError("made: dimension must be positive");
    if (widths.size() < 2 || widths.front() != D || widths.back() != 2 * D)
        throw ContractError("made: widths must run from D inputs to 2D outputs");
    if (ordering.size() != D) throw ContractError("made: ordering size mismatch");
    std::vector<std::size_t> pos(D, D);
    for (std::size_t p = 0; p < D; ++p) {
        if (ordering[p] >= D || pos[ordering[p]] != D)
            throw ContractError("made: ordering must be a permutation of the dims");
        pos[ordering[p]] = p + 1;  // 1-based autoregressive position
    }

    std::size_t cycle = D > 1 ? D - 1 : 1;
    std::vector<std::vector<std::size_t>> degrees(widths.size());
    degrees[0].resize(D);
    for (std::size_t j = 0; j < D; ++j) degrees[0][j] = pos[j];
    for (std::size_t l = 1; l + 1 < widths.size(); ++l) {
        degrees[l].resize(widths[l]);
        for (std::size_t u = 0; u < widths[l]; ++u) degrees[l][u] = 1 + (u % cycle);
    }
    degrees.back().resize(2 * D);
    for (std::size_t k = 0; k < 2 * D; ++k) degrees.back()[k] = pos[k % D];

    std::vector<Tensor> masks;
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
        bool output_layer = (l + 2 == widths.size());
        Tensor m(Shape{widths[l], widths[l + 1]});
        for (std::size_t j = 0; j < widths[l]; ++j)
            for (std::size_t k = 0; k < widths[l + 1]; ++k) {
                bool connected = output_layer ? degrees[l + 1][k] > degrees[l][j]
                                              : degrees[l + 1][k] >= degrees[l][j];
                m.at(j, k) = connected ? 1.0 : 0.0;
            }
        masks.push_back(std::move(m));
    }
    return masks;
}

MadeNet::MadeNet(std::size_t dims, const std::vector<std::size_t>& hidden,
                 std::vector<std::size_t> ordering_in, Rng& rng)
    : ordering(std::move(ordering_in)), D(dims) {
    std::vector<std::size_t> widths;
    widths.push_back(D);
    widths.insert(widths.end(), hidden.begin(), hidden.end());
    widths.push_back(2 * D);
    net = Mlp(widths, rng);
    masks = build_made_masks(widths, D, ordering);
    for (std::size_t l = 0; l < masks.size(); ++l) {
        Tensor& w = net.weights[l]->value;
        for (std::size_t i = 0; i < w.size(); ++i) w[i] *= masks[l][i];
    }
    net.zero_final_layer();
}

NodePtr MadeNet::forward(const NodePtr& x) const {
    const Shape& s = x->value.shape();
    if (s.size() != 2 || s[1] != D)
        throw ShapeError("made: expected [batch, " + std::to_string(D) + "], got " +
                         shape_str(s));
    NodePtr h = x;
    for (std::size_t l = 0; l < net.weights.size(); ++l) {
        NodePtr w = mul(net.weights[l], constant(masks[l]));
        h = add(matmul(h, w), net.biases[l]);
        if (l + 1 < net.weights.size()) h = tanh(h);
    }
    return h;
}

void MadeNet::collect_params(const std::string& prefix, ParamList& out) const {
    net.collect_params(prefix, out);
}

MafLayer::MafLayer(std::size_t d, const std::vector<std::size_t>& hidden,
                   std::vector<std::size_t> ordering, Rng& rng)
    : made(d, hidden, std::move(ordering), rng), d_(d) {}

FlowResult MafLayer::inverse(const NodePtr& x) {
    check_batch_input(x, d_, "maf");
    NodePtr out = made.forward(x);
    std::vector<std::size_t> mu_idx(d_), alpha_idx(d_);
    for (std::size_t j = 0; j < d_; ++j) {
        mu_idx[j] = j;
        alpha_idx[j] = d_ + j;
    }
    NodePtr mu = gather_cols(out, mu_idx);
    NodePtr alpha = gather_cols(out, alpha_idx);
    NodePtr z = mul(sub(x, mu), exp(neg(alpha)));
    return {z, neg(row_sum(alpha))};
}

FlowResult MafLayer::forward(const NodePtr& z) {
    check_batch_input(z, d_, "maf");
    std::size_t n = z->value.rows();
    Tensor x(Shape{n, d_});
    Tensor log_det(Shape{n});
    for (std::size_t p = 0; p < d_; ++p) {
        std::size_t dim = made.ordering[p];
        NodePtr out = made.forward(constant(x));
        for (std::size_t i = 0; i < n; ++i) {
            double mu = out->value.at(i, dim);
            double alpha = out->value.at(i, d_ + dim);
            x.at(i, dim) = z->value.at(i, dim) * std::exp(alpha) + mu;
            log_det[i] += alpha;
        }
    }
    return {constant(std::move(x)), constant(std::move(log_det))};
}

void MafLayer::collect_params(const std::string& prefix, ParamList& out) {
    made.collect_params(prefix + "/made", out);
}

std::vector<std::vector<int>> build_alternating_masks(std::size_t D, std::size_t L) {
    if (D < 2) throw ContractError("alternating masks: need at least 2 dims");
    std::vector<std::vector<int>> masks;
    for (std::size_t l = 0; l < L; ++l) {
        std::vector<int> m(D);
        for (std::size_t j = 0; j < D; ++j) m[j] = ((j % 2 == 0) == (l % 2 == 0)) ? 1 : 0;
        masks.push_back(std::move(m));
    }
    return masks;
}

NodePtr base_log_prob(const NodePtr& z) {
    const Shape& s = z->value.shape();
    if (s.size() != 2) throw ShapeError("base_log_prob: expected [batch, D], got " + shape_str(s));
    double d = static_cast<double>(s[1]);
    return add_const(scale(row_sum(mul(z, z)), -0.5), -0.5 * d * kLog2Pi);
}

void FlowStack::add_layer(std::unique_ptr<FlowLayer> layer) {
    if (layer->dim() != d_)
        throw ContractError("stack: layer dimension " + std::to_string(layer->dim()) +
                            " does not match stack dimension " + std::to_string(d_));
    layers_.push_back(std::move(layer));
}

NodePtr FlowStack::log_prob(const NodePtr& x) {
    auto [z, log_det] = inverse_all(x);
    return add(base_log_prob(z), log_det);
}

std::pair<NodePtr, NodePtr> FlowStack::inverse_all(const NodePtr& x) {
    check_batch_input(x, d_, "stack");
    std::size_t n = x->value.rows();
    NodePtr cur = x;
    NodePtr total = constant(Tensor(Shape{n}));
    for (std::size_t l = layers_.size(); l-- > 0;) {
        FlowResult r = layers_[l]->inverse(cur);
        if (!r.y->value.all_finite() || !r.log_det->value.all_finite())
            throw NumericError("stack: non-finite inverse output", static_cast<int>(l));
        cur = r.y;
        total = add(total, r.log_det);
    }
    return {cur, total};
}

std::pair<NodePtr, NodePtr> FlowStack::forward_all(const NodePtr& z) {
    check_batch_input(z, d_, "stack");
    std::size_t n = z->value.rows();
    NodePtr cur = z;
    NodePtr total = constant(Tensor(Shape{n}));
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        FlowResult r = layers_[l]->forward(cur);
        if (!r.y->value.all_finite() || !r.log_det->value.all_finite())
            throw NumericError("stack: non-finite forward output", static_cast<int>(l));
        cur = r.y;
        total = add(total, r.log_det);
    }
    return {cur, total};
}

Tensor FlowStack::sample(std::size_t n, Rng& rng) {
    if (n < 1) throw ContractError("stack: sample count must be positive");
    Tensor z(Shape{n, d_});
    for (std::size_t i = 0; i < z.size(); ++i) z[i] = rng.normal();
    auto [x, log_det] = forward_all(constant(std::move(z)));
    (void)log_det;
    return x->value;
}

void FlowStack::collect_params(const std::string& prefix, ParamList& out) {
    for (std::size_t l = 0; l < layers_.size(); ++l)
        layers_[l]->collect_params(prefix + "/" + std::to_string(l), out);
}

void FlowStack::collect_state(const std::string& prefix, StateList& out) {
    for (std::size_t l = 0; l < layers_.size(); ++l)
        layers_[l]->collect_state(prefix + "/" + std::to_string(l), out);
}

void FlowStack::set_training(bool on) {
    for (auto& layer : layers_) layer->set_training(on);
}

std::unique_ptr<FlowStack> make_realnvp_stack(std::size_t d, std::size_t blocks,
                                              std::size_t hidden, Rng& rng) {
    auto stack = std::make_unique<FlowStack>(d);
    auto masks = build_alternating_masks(d, blocks);
    for (std::size_t b = 0; b < blocks; ++b)
        stack->add_layer(std::make_unique<CouplingLayer>(masks[b],
                                                         std::vector<std::size_t>{hidden}, rng));
    return stack;
}

std::unique_ptr<FlowStack> make_maf_stack(std::size_t d, std::size_t blocks, std::size_t hidden,
                                          Rng& rng) {
    auto stack = std::make_unique<FlowStack>(d);
    std::vector<std::size_t> natural(d);
    std::iota(natural.begin(), natural.end(), std::size_t{0});
    std::vector<std::size_t> reversed(natural.rbegin(), natural.rend());
    for (std::size_t b = 0; b < blocks; ++b)
        stack->add_layer(std::make_unique<MafLayer>(
            d, std::vector<std::size_t>{hidden}, b % 2 == 0 ? natural : reversed, rng));
    return stack;
}

}  // namespace vmnf
