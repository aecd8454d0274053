#include "vmnf/vmonf.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <utility>

#include "vmnf/error.hpp"

namespace vmnf {

namespace {

const double kLogQFloor = std::log(1e-12);

double mean_of(const Tensor& t) {
    double s = 0.0;
    for (std::size_t i = 0; i < t.size(); ++i) s += t[i];
    return s / static_cast<double>(t.size());
}

}  // namespace

double TemperatureSchedule::at(std::size_t epoch) const {
    return std::max(t_min, t0 * std::exp(-lambda * static_cast<double>(epoch)));
}

TemperatureSchedule TemperatureSchedule::for_total_epochs(std::size_t total_epochs, double t0,
                                                          double t_min) {
    if (!(t_min > 0.0) || !(t0 >= t_min))
        throw DomainError("temperature schedule: need t0 >= t_min > 0");
    if (total_epochs == 0) throw ContractError("temperature schedule: zero epochs");
    TemperatureSchedule s;
    s.t0 = t0;
    s.t_min = t_min;
    const std::size_t floor_epoch = std::max<std::size_t>(1, (2 * total_epochs) / 3);
    s.lambda = std::log(t0 / t_min) / static_cast<double>(floor_epoch);
    return s;
}

MixtureModel::MixtureModel(std::vector<std::unique_ptr<FlowStack>> comps, Mlp posterior_net)
    : components(std::move(comps)), posterior(std::move(posterior_net)) {
    if (components.empty()) throw ContractError("mixture: needs at least one component");
    for (const auto& c : components)
        if (!c) throw ContractError("mixture: null component");
    d_ = components[0]->dim();
    for (const auto& c : components)
        if (c->dim() != d_) throw ContractError("mixture: component dims differ");
    if (posterior.widths.empty() || posterior.d_in() != d_ ||
        posterior.d_out() != components.size())
        throw ContractError("mixture: posterior net must map D inputs to K logits");
    log_prior.assign(components.size(), -std::log(static_cast<double>(components.size())));
}

NodePtr MixtureModel::component_log_matrix(const NodePtr& x) {
    const std::size_t n = x->value.rows();
    NodePtr mat;
    for (std::size_t k = 0; k < components.size(); ++k) {
        NodePtr lp = components[k]->log_prob(x);
        if (!lp->value.all_finite())
            throw NumericError("mixture: non-finite component log-likelihood",
                               static_cast<int>(k));
        NodePtr col = reshape(lp, Shape{n, 1});
        mat = mat ? concat_cols(mat, col) : col;
    }
    return mat;
}

NodePtr MixtureModel::responsibilities(const NodePtr& x, double T) {
    return softmax_with_temperature(posterior_logits(x), T);
}

std::pair<NodePtr, ElboTerms> MixtureModel::elbo(const NodePtr& x, double T) {
    NodePtr log_q = log_softmax_with_temperature(posterior_logits(x), T);
    return elbo_with_log_q(x, log_q);
}

std::pair<NodePtr, ElboTerms> MixtureModel::elbo_with_log_q(const NodePtr& x,
                                                            const NodePtr& log_q) {
    const std::size_t n = x->value.rows();
    if (n == 0) throw ContractError("elbo: empty batch");
    if (x->value.cols() != d_) throw ShapeError("elbo: data dim does not match model");
    if (log_q->value.rows() != n || log_q->value.cols() != num_components())
        throw ShapeError("elbo: log q must be [batch, K]");

    NodePtr logp = component_log_matrix(x);
    NodePtr q = exp(log_q);
    NodePtr log_q_floored = max_const(log_q, kLogQFloor);
    NodePtr prior_row = constant(Tensor(Shape{num_components()}, log_prior));

    NodePtr recon_vec = row_sum(mul(q, logp));
    NodePtr prior_vec = row_sum(mul(q, prior_row));
    NodePtr ent_vec = neg(row_sum(mul(q, log_q_floored)));
    NodePtr elbo_vec = add(add(recon_vec, prior_vec), ent_vec);
    NodePtr scalar = mean_all(elbo_vec);

    ElboTerms terms;
    terms.recon = recon_vec->value;
    terms.prior = prior_vec->value;
    terms.entropy = ent_vec->value;
    terms.mean_recon = mean_of(terms.recon);
    terms.mean_prior = mean_of(terms.prior);
    terms.mean_entropy = mean_of(terms.entropy);
    terms.mean_elbo = scalar->value[0];
    return {scalar, terms};
}

Tensor MixtureModel::exact_log_evidence(const NodePtr& x) {
    if (x->value.rows() == 0) throw ContractError("log evidence: empty batch");
    NodePtr logp = component_log_matrix(x);
    NodePtr prior_row = constant(Tensor(Shape{num_components()}, log_prior));
    return logsumexp(add(logp, prior_row))->value;
}

std::vector<std::size_t> MixtureModel::assign_cluster(const Tensor& x) {
    const std::size_t n = x.rows();
    if (n == 0) throw ContractError("assign_cluster: empty batch");
    Tensor r = responsibilities(constant(x), 1.0)->value;
    const std::size_t K = num_components();
    std::vector<std::size_t> out(n, 0);
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t best = 0;
        for (std::size_t k = 1; k < K; ++k)
            if (r.at(i, k) > r.at(i, best)) best = k;
        out[i] = best;
    }
    return out;
}

Tensor MixtureModel::sample_component(std::size_t k, std::size_t n, unsigned long seed) {
    if (k >= num_components())
        throw IndexError("sample_component: component index out of range");
    Rng rng(seed);
    return components[k]->sample(n, rng);
}

void MixtureModel::collect_params(ParamList& out) const {
    for (std::size_t k = 0; k < components.size(); ++k)
        collect_component_params(k, out);
    collect_posterior_params(out);
}

void MixtureModel::collect_component_params(std::size_t k, ParamList& out) const {
    if (k >= components.size()) throw IndexError("mixture: component index out of range");
    components[k]->collect_params("comp" + std::to_string(k), out);
}

void MixtureModel::collect_posterior_params(ParamList& out) const {
    posterior.collect_params("posterior", out);
}

void MixtureModel::collect_state(StateList& out) {
    for (std::size_t k = 0; k < components.size(); ++k)
        components[k]->collect_state("comp" + std::to_string(k), out);
}

void MixtureModel::set_training(bool on) {
    for (auto& c : components) c->set_training(on);
}

MixtureOptimizer::MixtureOptimizer(MixtureModel& model, double lr, double weight_decay)
    : post_adam_(lr, weight_decay) {
    const std::size_t K = model.num_components();
    comp_params_.resize(K);
    comp_adams_.assign(K, Adam(lr, weight_decay));
    for (std::size_t k = 0; k < K; ++k) {
        model.collect_component_params(k, comp_params_[k]);
        all_params_.insert(all_params_.end(), comp_params_[k].begin(), comp_params_[k].end());
    }
    model.collect_posterior_params(post_params_);
    all_params_.insert(all_params_.end(), post_params_.begin(), post_params_.end());
}

void MixtureOptimizer::step_all(const GradMap& grads) {
    for (std::size_t k = 0; k < comp_adams_.size(); ++k)
        comp_adams_[k].step(comp_params_[k], grads);
    post_adam_.step(post_params_, grads);
}

void MixtureOptimizer::step_component(std::size_t k, const GradMap& grads) {
    if (k >= comp_adams_.size()) throw IndexError("optimizer: component index out of range");
    comp_adams_[k].step(comp_params_[k], grads);
}

void MixtureOptimizer::step_posterior(const GradMap& grads) {
    post_adam_.step(post_params_, grads);
}

EpochMetrics train_epoch_unsupervised(MixtureModel& model, MixtureOptimizer& opt,
                                      const Tensor& points, double T, std::size_t batch_size,
                                      Rng& rng) {
    const std::size_t n = points.rows();
    const std::size_t d = points.cols();
    if (n == 0) throw ContractError("train: empty dataset");
    if (d != model.dim()) throw ShapeError("train: data dim does not match model");
    if (batch_size == 0) throw ContractError("train: batch size must be positive");

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);

    EpochMetrics acc;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < n; start += batch_size, ++batch_index) {
        const std::size_t b = std::min(batch_size, n - start);
        Tensor batch(Shape{b, d});
        for (std::size_t i = 0; i < b; ++i)
            for (std::size_t j = 0; j < d; ++j) batch.at(i, j) = points.at(order[start + i], j);
        try {
            NodePtr x = constant(batch);
            auto [elbo_node, terms] = model.elbo(x, T);
            NodePtr loss = neg(elbo_node);
            GradMap grads = backward(loss, opt.all_params());
            opt.step_all(grads);
            const double w = static_cast<double>(b);
            acc.elbo += terms.mean_elbo * w;
            acc.recon += terms.mean_recon * w;
            acc.prior += terms.mean_prior * w;
            acc.entropy += terms.mean_entropy * w;
        } catch (const NumericError& e) {
            throw NumericError(std::string(e.what()) + " (batch " + std::to_string(batch_index) +
                                   ")",
                               e.layer_index);
        }
    }
    const double dn = static_cast<double>(n);
    acc.elbo /= dn;
    acc.recon /= dn;
    acc.prior /= dn;
    acc.entropy /= dn;
    return acc;
}

SupervisedEpochMetrics supervised_epoch(MixtureModel& model, MixtureOptimizer& opt,
                                        const Tensor& points,
                                        const std::vector<std::size_t>& labels) {
    const std::size_t n = points.rows();
    const std::size_t d = points.cols();
    const std::size_t K = model.num_components();
    if (n == 0) throw ContractError("supervised: empty dataset");
    if (d != model.dim()) throw ShapeError("supervised: data dim does not match model");
    if (labels.size() != n) throw ShapeError("supervised: one label per row required");
    for (std::size_t l : labels)
        if (l >= K) throw IndexError("supervised: label out of range");

    SupervisedEpochMetrics m;
    m.component_nll.assign(K, std::numeric_limits<double>::quiet_NaN());
    for (std::size_t k = 0; k < K; ++k) {
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < n; ++i)
            if (labels[i] == k) idx.push_back(i);
        if (idx.empty()) {
            m.skipped_components.push_back(k);
            continue;
        }
        Tensor xk(Shape{idx.size(), d});
        for (std::size_t i = 0; i < idx.size(); ++i)
            for (std::size_t j = 0; j < d; ++j) xk.at(i, j) = points.at(idx[i], j);
        NodePtr lp = model.components[k]->log_prob(constant(xk));
        NodePtr loss = neg(mean_all(lp));
        GradMap grads = backward(loss, opt.component_params(k));
        opt.step_component(k, grads);
        m.component_nll[k] = loss->value[0];
    }

    NodePtr probs = model.responsibilities(constant(points), 1.0);
    NodePtr ce = cross_entropy(probs, labels);
    GradMap grads = backward(ce, opt.posterior_params());
    opt.step_posterior(grads);
    m.cross_entropy = ce->value[0];
    return m;
}

std::vector<SupervisedEpochMetrics> pretrain_supervised(MixtureModel& model,
                                                        MixtureOptimizer& opt,
                                                        const Tensor& points,
                                                        const std::vector<std::size_t>& labels,
                                                        std::size_t epochs,
                                                        std::vector<std::string>* warnings) {
    std::vector<SupervisedEpochMetrics> out;
    out.reserve(epochs);
    for (std::size_t e = 0; e < epochs; ++e) {
        out.push_back(supervised_epoch(model, opt, points, labels));
        if (e == 0 && warnings)
            for (std::size_t k : out.back().skipped_components)
                warnings->push_back("component " + std::to_string(k) +
                                    " has no labeled examples; skipping its supervised steps");
    }
    return out;
}

std::vector<TrainRecord> train_semisupervised(MixtureModel& model, MixtureOptimizer& opt,
                                              const Tensor& labeled_points,
                                              const std::vector<std::size_t>& labels,
                                              const Tensor& unlabeled_points,
                                              const TemperatureSchedule& schedule,
                                              std::size_t epochs, std::size_t batch_size,
                                              Rng& rng, std::size_t unsup_per_sup,
                                              std::vector<std::string>* warnings) {
    if (labels.empty() || labeled_points.rows() == 0)
        throw ContractError("semisupervised training requires labeled examples");
    if (labels.size() != labeled_points.rows())
        throw ShapeError("semisupervised: one label per labeled row required");
    if (unlabeled_points.rows() == 0)
        throw ContractError("semisupervised training requires unlabeled examples");

    std::vector<TrainRecord> records;
    records.reserve(epochs);
    bool warned = false;
    for (std::size_t e = 0; e < epochs; ++e) {
        const double T = schedule.at(e);
        TrainRecord rec;
        rec.temperature = T;
        rec.supervised = (e % (unsup_per_sup + 1)) == 0;
        if (rec.supervised) {
            SupervisedEpochMetrics sm = supervised_epoch(model, opt, labeled_points, labels);
            if (!warned && warnings) {
                for (std::size_t k : sm.skipped_components)
                    warnings->push_back("component " + std::to_string(k) +
                                        " has no labeled examples; skipping its supervised steps");
                warned = true;
            }
            rec.supervised_metrics = std::move(sm);
            rec.metrics = eval_elbo(model, unlabeled_points, T);
        } else {
            rec.metrics = train_epoch_unsupervised(model, opt, unlabeled_points, T, batch_size,
                                                   rng);
        }
        records.push_back(std::move(rec));
    }
    return records;
}

EpochMetrics eval_elbo(MixtureModel& model, const Tensor& points, double T) {
    auto [node, terms] = model.elbo(constant(points), T);
    (void)node;
    EpochMetrics m;
    m.elbo = terms.mean_elbo;
    m.recon = terms.mean_recon;
    m.prior = terms.mean_prior;
    m.entropy = terms.mean_entropy;
    return m;
}

}  // namespace vmnf
