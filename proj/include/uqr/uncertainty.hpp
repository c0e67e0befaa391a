#pragma once

#include <vector>

#include "uqr/bayesian.hpp"
#include "uqr/params.hpp"
#include "uqr/rng.hpp"
#include "uqr/tensor.hpp"

namespace uqr::unc {

// Classifier outputs: answer-class logits and a non-negative per-logit
// aleatoric variance from a softplus head.
struct LogitVariancePair {
    Tensor logits;   // [M]
    Tensor sigma_sq; // [M], >= 0
};

struct HeadWeights {
    Tensor w1; // shared trunk, two FC layers with dropout after each
    Tensor b1;
    Tensor w2;
    Tensor b2;
    Tensor w_y; // logit head
    Tensor b_y;
    Tensor w_v; // variance head (softplus)
    Tensor b_v;
};

struct HeadIds {
    int w1 = -1;
    int b1 = -1;
    int w2 = -1;
    int b2 = -1;
    int w_y = -1;
    int b_y = -1;
    int w_v = -1;
    int b_v = -1;
};

LogitVariancePair classifier_heads(Tape& tape, const HeadWeights& w, Tensor f,
                                   double dropout_p, bool dropout_active, RngStream& rng);
LogitVariancePair classifier_heads(Tape& tape, ParamMap& pm, const HeadIds& ids, Tensor f,
                                   double dropout_p, bool dropout_active, RngStream& rng);

// Logit reparameterization trick: T Gaussian-corrupted copies of the logits,
// y_t = y + eps_t . sqrt(sigma_sq). Zero variance reproduces the logits.
struct DistortedLogitSet {
    std::vector<Tensor> samples;
};

DistortedLogitSet lrt_distort(Tape& tape, const LogitVariancePair& pair, int t_count,
                              RngStream& rng);

// L_GCE = -log[(1/T) sum_t softmax(y_t)[true]]; equals plain cross-entropy
// exactly when every sample is undistorted.
Tensor gce_loss(Tape& tape, const DistortedLogitSet& set, int true_class);

// Standard softmax cross-entropy on the undistorted logits.
Tensor ce_loss(Tape& tape, const LogitVariancePair& pair, int true_class);
Tensor ce_loss_logits(Tape& tape, Tensor logits, int true_class);

// L_VE = sum_d relu(exp(sigma_sq[d] + entropy) - e).
Tensor ve_loss(Tape& tape, Tensor sigma_sq, Tensor entropy_term);

// L_UDL = exp((L_y - L_GCE)^2); the literal reading [exp(L_y - L_GCE)]^2
// stays available behind the flag.
Tensor udl_loss(Tape& tape, Tensor l_y, Tensor l_gce, bool literal_power = false);

Tensor aleatoric_total(Tape& tape, Tensor l_gce, Tensor l_ve, Tensor l_udl);

// Shannon entropy of a softmax in nats, on-tape, computed from logits as
// logsumexp(y) - <p, y> so extreme logits cannot produce log(0).
Tensor entropy_from_logits(Tape& tape, Tensor logits);

// Plain-value entropy of a probability vector; 0 log 0 = 0.
double predictive_entropy(const std::vector<double>& probs);

// Decomposition over an MC sample set: mean per-sample entropy plus mean
// per-sample predicted variance, and the across-sample variance of the
// class-probability vector as the epistemic component.
struct UncertaintyReport {
    double entropy = 0.0;        // mean per-sample entropy (nats)
    double aleatoric_mean = 0.0; // mean predicted variance, averaged over classes
    double epistemic_var = 0.0;  // var across samples of class probs, mean over classes
    double sigma_sq_p = 0.0;     // entropy term + variance term
};

UncertaintyReport predictive_uncertainty(const bayes::MCSampleSet& samples);

// Attention rewrite: harvests the reversed gradient of the uncertainty loss
// at the image grid, rescales the attention map, and re-pools the grid.
struct RuamState {
    std::vector<double> alpha;        // incoming normalized attention
    std::vector<double> nabla_u;      // -lambda * dLu/d(grid), channel-mean
    std::vector<double> alpha_prime;  // nabla_u . alpha
    std::vector<double> alpha_dprime; // relu(a') + gamma_neg * relu(-a')
    std::vector<double> alpha_new;    // alpha + a'' . alpha
    std::vector<double> f_prime;      // grid @ alpha_new
    std::vector<double> f_dprime;     // f + f'
    Tensor f_final;                   // tape tensor for downstream layers
    Tensor alpha_new_t;
};

// grid_mat is the [c, cells] tensor the attention read from; l_u must be a
// scalar on the same tape. The harvest backward runs through a gradient
// reversal of strength lambda and is isolated from training by zeroing the
// tape gradients on both sides. nabla_override substitutes a fixed gradient
// map (finite-difference checks need the map held constant). nabla_clip
// bounds each map entry: the exp factors inside the VE/UDL losses can spike
// the harvested values by orders of magnitude, and the rewrite feeds them
// forward as features where no gradient clipping can reach. 0 disables.
RuamState ruam_update(Tape& tape, Tensor f, Tensor alpha, Tensor grid_mat, Tensor l_u,
                      double lambda, double gamma_neg, bool renormalize = false,
                      const std::vector<double>* nabla_override = nullptr,
                      double nabla_clip = 0.0);

} // namespace uqr::unc
