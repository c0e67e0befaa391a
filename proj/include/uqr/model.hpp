#pragma once

#include <optional>
#include <string>
#include <vector>

#include "uqr/bayesian.hpp"
#include "uqr/data.hpp"
#include "uqr/fusion.hpp"
#include "uqr/metrics.hpp"
#include "uqr/uncertainty.hpp"
#include "uqr/vae.hpp"

namespace uqr::model {

struct LossFlags {
    bool ce = true;
    bool gce = true;
    bool ve = true;
    // off by default: exp((L_y - L_GCE)^2) grows super-exponentially in the
    // loss gap and destabilizes training once the gap widens
    bool udl = false;
    bool kl = true;
    bool div = true;

    bool any() const { return ce || gce || ve || udl || kl || div; }
    bool any_aleatoric() const { return gce || ve || udl; }
};

struct ModelConfig {
    int vocab_size = -1;  // from data
    int num_classes = -1; // from data
    int emb_dim = 16;
    int lstm_hidden = 24;
    int attn_dim = 24;
    int z_dim = 16;
    int trunk_hidden = 32;
    std::vector<int> conv_channels = {8, 16, 16};

    std::vector<double> dropout_conv = {0.1, 0.2, 0.3};
    double dropout_fc = 0.5;
    bayes::LstmDropout lstm_dropout{0.3, 0.3, 0.5};
    bayes::DropoutPlacement placement = bayes::DropoutPlacement::AfterMaxPool;
    bayes::PoolKind pool = bayes::PoolKind::Max;

    LossFlags flags;
    double eta = 1.0;
    double div_weight = 1.0;
    int t_lrt = 8;    // LRT draws inside the GCE loss
    int k_latent = 8; // latent samples per round during training
    double lambda_ruam = 1.0;
    double gamma_neg = -2.0;
    bool ruam_enabled = true;
    double ruam_grad_clip = 5.0; // bound on the harvested map entries; 0 disables
    bool ruam_renormalize = false;
    bool ruam_feeds_latent = true;
    bool udl_literal = false;
    // softplus(-3) ~ 0.05: the variance head starts small so the GCE noise
    // does not swamp the classification signal at initialization
    double variance_bias_init = -3.0;

    int decoder_max_len = 8;
};

// All trainable parameters plus the id maps the forward passes need.
struct Network {
    ModelConfig cfg;
    ParamBank bank;

    int embedding = -1; // shared word embedding
    bayes::LstmParamIds q_lstm;
    bayes::LstmParamIds a_lstm; // answers and captions
    std::vector<bayes::ConvLayerSpec> conv_layers;
    fusion::HistoryIds history;
    fusion::AttentionIds attention;
    unc::HeadIds heads;
    vae::LatentIds latent;
    vae::DecoderIds decoder;

    int grid_channels() const { return cfg.conv_channels.back(); }
};

Network build_network(const ModelConfig& cfg, std::uint64_t init_seed);

struct ForwardOptions {
    bool dropout_active = true;
    bool ruam = true;                  // honored only when cfg.ruam_enabled
    bool compute_losses = true;        // needs gt labels
    // warmup epochs train with the aleatoric family disabled
    const LossFlags* flags_override = nullptr;
    // Per-round fixed RUAM gradient maps; used by finite-difference checks
    // so the (intentionally constant) map does not vary under perturbation.
    const std::vector<std::vector<double>>* fixed_nabla = nullptr;
};

struct RoundComputation {
    Tensor logits_final;   // drives the prediction
    Tensor sigma_sq_final; // aleatoric variance alongside it
    Tensor f_context;      // context the final heads consumed
    Tensor latent_mu;      // latent heads on the (possibly rewritten) context
    Tensor latent_log_var;
    std::vector<double> alpha; // pre-rewrite attention map
    bool ruam_applied = false;
    std::optional<unc::RuamState> ruam;

    // loss nodes; only the flagged ones are valid tensors
    Tensor l_y_class, l_y_token, l_kl, l_div, l_gce, l_ve, l_udl, l_u;
};

struct DialogComputation {
    std::vector<RoundComputation> rounds;
    Tensor total; // sum over rounds of the flagged components
    int cells_u = 0;
    int cells_v = 0;
};

// One stochastic pass over a dialog; expects encoded, truncated data with an
// image tensor attached.
DialogComputation forward_dialog(const Network& net, Tape& tape, ParamMap& pm,
                                 const data::EncodedDialog& dialog, RngStream& rng,
                                 const ForwardOptions& opts);

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

enum class RankBy { Classifier, Decoder };
RankBy parse_rank_by(const std::string& s);

struct RoundEval {
    std::vector<double> mean_probs;       // MC mean over classes
    std::vector<double> candidate_scores; // per candidate
    unc::UncertaintyReport report;
    std::vector<double> alpha;            // attention map of the first sample
    int rank = 0;
};

struct EvalOptions {
    int t_mc = 25;
    bool mc_dropout = true; // dropout active at eval (MC sampling)
    RankBy rank_by = RankBy::Classifier;
    bool with_ruam = false; // rewrite attention at eval (uses gt labels)
};

std::vector<RoundEval> eval_dialog(const Network& net, const data::EncodedDialog& dialog,
                                   const EvalOptions& opts, RngStream& rng);

// m reparameterized latent draws from the last round's posterior, stacked
// row-major [m, z] (or decoder hidden states when from_decoder_hidden).
std::vector<double> latent_matrix(const Network& net, const data::EncodedDialog& dialog,
                                  int m, bool from_decoder_hidden, RngStream& rng);

} // namespace uqr::model
