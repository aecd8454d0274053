#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "vmnf/flows.hpp"
#include "vmnf/nn.hpp"

namespace vmnf {

// Per-example decomposition of the objective, captured as values.
struct ElboTerms {
    Tensor recon;    // [batch] expected component log-likelihood under q
    Tensor prior;    // [batch] expected log prior under q
    Tensor entropy;  // [batch] entropy of q
    double mean_recon = 0.0;
    double mean_prior = 0.0;
    double mean_entropy = 0.0;
    double mean_elbo = 0.0;
};

struct TemperatureSchedule {
    double t0 = 5.0;
    double t_min = 1.0;
    double lambda = 0.0;

    double at(std::size_t epoch) const;
    // Decay rate chosen so the floor is reached at two thirds of the run.
    static TemperatureSchedule for_total_epochs(std::size_t total_epochs, double t0 = 5.0,
                                                double t_min = 1.0);
};

// K flow densities tied together by a neural posterior over the component
// index. The prior over components is uniform unless overwritten.
class MixtureModel {
public:
    MixtureModel(std::vector<std::unique_ptr<FlowStack>> comps, Mlp posterior_net);

    std::size_t dim() const { return d_; }
    std::size_t num_components() const { return components.size(); }

    // [n, K] matrix of log p(x | z=k), one column per component.
    NodePtr component_log_matrix(const NodePtr& x);
    NodePtr posterior_logits(const NodePtr& x) { return posterior.forward(x); }
    NodePtr responsibilities(const NodePtr& x, double T);

    // Exact discrete expectation over the K components; no sampling.
    std::pair<NodePtr, ElboTerms> elbo(const NodePtr& x, double T);
    // Same objective with the posterior replaced by an explicit log q matrix.
    std::pair<NodePtr, ElboTerms> elbo_with_log_q(const NodePtr& x, const NodePtr& log_q);

    // Per-row logsumexp_k(log prior_k + log p(x|k)); exact, evaluated.
    Tensor exact_log_evidence(const NodePtr& x);

    // Argmax responsibility at T=1, ties toward the lowest index.
    std::vector<std::size_t> assign_cluster(const Tensor& x);
    Tensor sample_component(std::size_t k, std::size_t n, unsigned long seed);

    void collect_params(ParamList& out) const;
    void collect_component_params(std::size_t k, ParamList& out) const;
    void collect_posterior_params(ParamList& out) const;
    void collect_state(StateList& out);
    void set_training(bool on);

    std::vector<std::unique_ptr<FlowStack>> components;
    Mlp posterior;
    std::vector<double> log_prior;

private:
    std::size_t d_;
};

// One Adam instance per component plus one for the posterior, so selective
// supervised updates leave untouched groups bitwise identical.
class MixtureOptimizer {
public:
    MixtureOptimizer(MixtureModel& model, double lr, double weight_decay);

    void step_all(const GradMap& grads);
    void step_component(std::size_t k, const GradMap& grads);
    void step_posterior(const GradMap& grads);

    const ParamList& all_params() const { return all_params_; }
    const ParamList& component_params(std::size_t k) const { return comp_params_.at(k); }
    const ParamList& posterior_params() const { return post_params_; }
    Adam& component_adam(std::size_t k) { return comp_adams_.at(k); }
    Adam& posterior_adam() { return post_adam_; }

private:
    std::vector<ParamList> comp_params_;
    ParamList post_params_;
    ParamList all_params_;
    std::vector<Adam> comp_adams_;
    Adam post_adam_;
};

struct EpochMetrics {
    double elbo = 0.0;
    double recon = 0.0;
    double prior = 0.0;
    double entropy = 0.0;
};

struct SupervisedEpochMetrics {
    std::vector<double> component_nll;  // NaN where a class had no examples
    double cross_entropy = 0.0;
    std::vector<std::size_t> skipped_components;
};

struct TrainRecord {
    bool supervised = false;
    double temperature = 1.0;
    EpochMetrics metrics;  // unsupervised: epoch means; supervised: evaluated on the unlabeled set
    std::optional<SupervisedEpochMetrics> supervised_metrics;
};

// One full pass over the data in shuffled minibatches, one optimizer step
// per batch on the negative objective. Metrics are example-weighted means.
EpochMetrics train_epoch_unsupervised(MixtureModel& model, MixtureOptimizer& opt,
                                      const Tensor& points, double T, std::size_t batch_size,
                                      Rng& rng);

// Full-batch selective step per component on its labeled slice, plus one
// posterior step on the labels. Classes without examples are skipped.
SupervisedEpochMetrics supervised_epoch(MixtureModel& model, MixtureOptimizer& opt,
                                        const Tensor& points,
                                        const std::vector<std::size_t>& labels);

std::vector<SupervisedEpochMetrics> pretrain_supervised(MixtureModel& model,
                                                        MixtureOptimizer& opt,
                                                        const Tensor& points,
                                                        const std::vector<std::size_t>& labels,
                                                        std::size_t epochs,
                                                        std::vector<std::string>* warnings = nullptr);

// Alternates supervised and unsupervised epochs, starting supervised;
// unsup_per_sup unsupervised epochs follow each supervised one.
std::vector<TrainRecord> train_semisupervised(MixtureModel& model, MixtureOptimizer& opt,
                                              const Tensor& labeled_points,
                                              const std::vector<std::size_t>& labels,
                                              const Tensor& unlabeled_points,
                                              const TemperatureSchedule& schedule,
                                              std::size_t epochs, std::size_t batch_size,
                                              Rng& rng, std::size_t unsup_per_sup = 1,
                                              std::vector<std::string>* warnings = nullptr);

// Objective evaluation without gradient steps.
EpochMetrics eval_elbo(MixtureModel& model, const Tensor& points, double T);

}  // namespace vmnf
