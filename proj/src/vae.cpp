#include "uqr/vae.hpp"

#include <algorithm>
#include <cmath>

namespace uqr::vae {

LatentGaussian project_latent(Tape& tape, Tensor w_mu, Tensor w_sigma, Tensor f) {
    LatentGaussian g;
    g.mu = tape.matmul(w_mu, f);
    g.log_var = tape.matmul(w_sigma, f);
    return g;
}

LatentGaussian project_latent(Tape& tape, ParamMap& pm, const LatentIds& ids, Tensor f) {
    return project_latent(tape, pm.get(ids.w_mu), pm.get(ids.w_sigma), f);
}

LatentSampleSet sample_latents(Tape& tape, const LatentGaussian& g, int k, RngStream& rng) {
    if (k < 1) throw UsageError("sample_latents needs k >= 1");
    int z_dim = static_cast<int>(g.mu.size());
    Tensor sigma = tape.exp(tape.mul_scalar(g.log_var, 0.5));
    LatentSampleSet set;
    set.samples.reserve(k);
    Tensor acc;
    for (int j = 0; j < k; ++j) {
        std::vector<double> eps(z_dim);
        for (double& e : eps) e = rng.normal();
        Tensor z = tape.add(g.mu, tape.mul(tape.constant({z_dim}, std::move(eps)), sigma));
        set.samples.push_back(z);
        acc = (j == 0) ? z : tape.add(acc, z);
    }
    set.alpha_bar = tape.mul_scalar(acc, 1.0 / static_cast<double>(k));
    return set;
}

Tensor kl_loss(Tape& tape, const LatentGaussian& g) {
    Tensor mu_sq = tape.mul(g.mu, g.mu);
    Tensor var = tape.exp(g.log_var);
    Tensor inner = tape.add_scalar(tape.sub(tape.add(mu_sq, var), g.log_var), -1.0);
    return tape.mul_scalar(tape.sum(inner), 0.5);
}

Tensor diversity_loss_pairs(Tape& tape, const std::vector<Tensor>& samples, Tensor alpha_bar) {
    int k = static_cast<int>(samples.size());
    if (k < 2) throw UsageError("diversity_loss needs k >= 2 samples");
    std::vector<Tensor> centered;
    std::vector<Tensor> norms;
    centered.reserve(k);
    norms.reserve(k);
    for (const Tensor& z : samples) {
        Tensor c = tape.sub(z, alpha_bar);
        centered.push_back(c);
        norms.push_back(tape.sqrt(tape.sum(tape.mul(c, c))));
    }
    Tensor total;
    bool first = true;
    for (int a = 0; a < k; ++a) {
        for (int b = a + 1; b < k; ++b) {
            Tensor dot = tape.sum(tape.mul(centered[a], centered[b]));
            Tensor denom = tape.max_scalar(tape.mul(norms[a], norms[b]), 1e-8);
            Tensor cos = tape.div(dot, denom);
            total = first ? cos : tape.add(total, cos);
            first = false;
        }
    }
    double pairs = 0.5 * k * (k - 1);
    return tape.mul_scalar(total, 1.0 / pairs);
}

Tensor diversity_loss(Tape& tape, const LatentSampleSet& set) {
    return diversity_loss_pairs(tape, set.samples, set.alpha_bar);
}

DecodeMode parse_decode_mode(const std::string& s) {
    if (s == "generate") return DecodeMode::Generate;
    if (s == "score-candidates") return DecodeMode::ScoreCandidates;
    throw UsageError("unknown decode mode: " + s);
}

namespace {

struct DecoderStep {
    Tensor h;
    Tensor c;
};

Tensor step_logits(Tape& tape, const LstmWeights& w, Tensor w_out, Tensor b_out,
                   Tensor emb, int token, DecoderStep& state) {
    Tensor x = tape.select_row(emb, token);
    auto hc = lstm_cell(x, state.h, state.c, w);
    state.h = hc.first;
    state.c = hc.second;
    return tape.add(tape.matmul(w_out, state.h), b_out);
}

// log p(token) = logits[token] - logsumexp(logits), kept on tape
Tensor log_prob_of(Tape& tape, Tensor logits, int token) {
    return tape.sub(tape.select(logits, token), tape.logsumexp(logits));
}

} // namespace

Tensor candidate_log_likelihood(Tape& tape, ParamMap& pm, const DecoderIds& ids, Tensor z,
                                const std::vector<int>& tokens, const DecodeLimits& limits) {
    LstmWeights w{pm.get(ids.w_x), pm.get(ids.w_h), pm.get(ids.b)};
    Tensor w_out = pm.get(ids.w_out);
    Tensor b_out = pm.get(ids.b_out);
    Tensor emb = pm.get(ids.embedding);
    int hidden = static_cast<int>(z.size());
    DecoderStep st{z, tape.zeros({hidden})};

    // teacher forcing: predict each candidate token, then END
    std::vector<int> seq;
    seq.reserve(tokens.size() + 1);
    for (size_t i = 0; i < tokens.size() && static_cast<int>(i) < limits.max_len; ++i) {
        seq.push_back(tokens[i]);
    }
    seq.push_back(limits.end_id);

    Tensor ll;
    int prev = limits.start_id;
    bool first = true;
    for (int target : seq) {
        Tensor logits = step_logits(tape, w, w_out, b_out, emb, prev, st);
        Tensor lp = log_prob_of(tape, logits, target);
        ll = first ? lp : tape.add(ll, lp);
        first = false;
        prev = target;
    }
    return ll;
}

AnswerSequence decode_answer(Tape& tape, ParamMap& pm, const DecoderIds& ids, Tensor z,
                             DecodeMode mode, const DecodeLimits& limits,
                             const std::vector<std::vector<int>>& candidates) {
    AnswerSequence out;
    if (mode == DecodeMode::Generate) {
        LstmWeights w{pm.get(ids.w_x), pm.get(ids.w_h), pm.get(ids.b)};
        Tensor w_out = pm.get(ids.w_out);
        Tensor b_out = pm.get(ids.b_out);
        Tensor emb = pm.get(ids.embedding);
        int hidden = static_cast<int>(z.size());
        DecoderStep st{z, tape.zeros({hidden})};
        int prev = limits.start_id;
        for (int t = 0; t < limits.max_len; ++t) {
            Tensor logits = step_logits(tape, w, w_out, b_out, emb, prev, st);
            const auto& lv = logits.value();
            int best = static_cast<int>(std::max_element(lv.begin(), lv.end()) - lv.begin());
            if (best == limits.end_id) break;
            out.token_ids.push_back(best);
            prev = best;
        }
        return out;
    }
    // ScoreCandidates
    out.class_logits.reserve(candidates.size());
    for (const auto& cand : candidates) {
        out.class_logits.push_back(
            candidate_log_likelihood(tape, pm, ids, z, cand, limits).scalar());
    }
    return out;
}

Tensor token_ce_loss(Tape& tape, ParamMap& pm, const DecoderIds& ids, Tensor z,
                     const std::vector<int>& target_tokens, const DecodeLimits& limits) {
    if (static_cast<int>(target_tokens.size()) > limits.max_len) {
        throw UsageError("target longer than the decoder limit");
    }
    Tensor ll = candidate_log_likelihood(tape, pm, ids, z, target_tokens, limits);
    double count = static_cast<double>(target_tokens.size() + 1); // tokens + END
    return tape.mul_scalar(ll, -1.0 / count);
}

} // namespace uqr::vae
