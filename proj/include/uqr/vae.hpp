#pragma once

#include <string>
#include <vector>

#include "uqr/params.hpp"
#include "uqr/rng.hpp"
#include "uqr/tensor.hpp"

namespace uqr::vae {

struct LatentGaussian {
    Tensor mu;      // [z]
    Tensor log_var; // [z]
};

struct LatentSampleSet {
    std::vector<Tensor> samples; // k latent vectors z_j
    Tensor alpha_bar;            // exact mean of the k samples
};

struct LatentIds {
    int w_mu = -1;    // [z, d]
    int w_sigma = -1; // [z, d]
};

// mu = W_mu f and log sigma^2 = W_sigma f, linear heads with no bias.
LatentGaussian project_latent(Tape& tape, Tensor w_mu, Tensor w_sigma, Tensor f);
LatentGaussian project_latent(Tape& tape, ParamMap& pm, const LatentIds& ids, Tensor f);

// z_j = mu + eps_j . sigma with eps_j ~ N(0,1); sigma = exp(log_var / 2).
LatentSampleSet sample_latents(Tape& tape, const LatentGaussian& g, int k, RngStream& rng);

// Closed-form KL(N(mu, sigma^2) || N(0, 1)) = 0.5 sum(mu^2 + sigma^2 - log sigma^2 - 1).
Tensor kl_loss(Tape& tape, const LatentGaussian& g);

// Mean centered-cosine over all unordered sample pairs; the 1e-8 floor on the
// norm product keeps collapsed samples at 0 instead of NaN.
Tensor diversity_loss(Tape& tape, const LatentSampleSet& set);
Tensor diversity_loss_pairs(Tape& tape, const std::vector<Tensor>& samples, Tensor alpha_bar);

struct DecoderIds {
    int embedding = -1; // [vocab, emb]
    int w_x = -1;       // lstm weights, hidden size == z
    int w_h = -1;
    int b = -1;
    int w_out = -1;     // [vocab, hidden]
    int b_out = -1;     // [vocab]
};

struct AnswerSequence {
    std::vector<int> token_ids;           // generated tokens, END/limit terminated
    std::vector<double> class_logits;     // per-candidate sequence log-likelihoods
};

enum class DecodeMode { Generate, ScoreCandidates };
DecodeMode parse_decode_mode(const std::string& s); // invalid -> UsageError

struct DecodeLimits {
    int max_len = 8;
    int start_id = 2;
    int end_id = 3;
};

// Generate: greedy argmax loop from z as h_0 (c_0 = 0) until END or max_len.
// ScoreCandidates: teacher-forced log-likelihood (tokens then END) of each
// candidate sequence.
AnswerSequence decode_answer(Tape& tape, ParamMap& pm, const DecoderIds& ids, Tensor z,
                             DecodeMode mode, const DecodeLimits& limits,
                             const std::vector<std::vector<int>>& candidates = {});

// Teacher-forced scoring that keeps the result on the tape (training path).
Tensor candidate_log_likelihood(Tape& tape, ParamMap& pm, const DecoderIds& ids, Tensor z,
                                const std::vector<int>& tokens, const DecodeLimits& limits);

// Mean negative log-probability of the target tokens (END appended).
Tensor token_ce_loss(Tape& tape, ParamMap& pm, const DecoderIds& ids, Tensor z,
                     const std::vector<int>& target_tokens, const DecodeLimits& limits);

} // namespace uqr::vae
