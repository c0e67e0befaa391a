#include "uqr/model.hpp"

#include <cmath>

namespace uqr::model {

Network build_network(const ModelConfig& cfg, std::uint64_t init_seed) {
    if (cfg.vocab_size < 5) throw ConfigError("vocab_size must be set from the data");
    if (cfg.num_classes < 2) throw ConfigError("num_classes must be set from the data");
    if (cfg.conv_channels.empty()) throw ConfigError("conv stack needs at least one layer");
    if (cfg.dropout_conv.size() != cfg.conv_channels.size()) {
        throw ConfigError("dropout_conv must list one rate per conv layer");
    }

    Network net;
    net.cfg = cfg;
    RngStream rng(init_seed);
    auto& b = net.bank;

    net.embedding = b.add_glorot("embedding", {cfg.vocab_size, cfg.emb_dim}, rng);

    auto add_lstm = [&](const std::string& prefix, int in_dim, int hidden) {
        bayes::LstmParamIds ids;
        ids.w_x = b.add_glorot(prefix + ".w_x", {4 * hidden, in_dim}, rng);
        ids.w_h = b.add_glorot(prefix + ".w_h", {4 * hidden, hidden}, rng);
        ids.b = b.add_zeros(prefix + ".b", {4 * hidden});
        return ids;
    };
    net.q_lstm = add_lstm("q_lstm", cfg.emb_dim, cfg.lstm_hidden);
    net.a_lstm = add_lstm("a_lstm", cfg.emb_dim, cfg.lstm_hidden);

    int in_ch = data::kImageChannels;
    for (size_t l = 0; l < cfg.conv_channels.size(); ++l) {
        bayes::ConvLayerSpec spec;
        int out_ch = cfg.conv_channels[l];
        spec.w_kernels = b.add_glorot("conv" + std::to_string(l) + ".k", {out_ch, in_ch, 3, 3}, rng);
        spec.w_bias = b.add_zeros("conv" + std::to_string(l) + ".b", {out_ch});
        spec.dropout_rate = cfg.dropout_conv[l];
        net.conv_layers.push_back(spec);
        in_ch = out_ch;
    }

    int d = cfg.lstm_hidden;
    net.history.w_proj = b.add_glorot("history.w_proj", {d, 2 * d}, rng);
    net.history.b_proj = b.add_zeros("history.b_proj", {d});
    net.history.w_gate = b.add_glorot("history.w_gate", {d, 2 * d}, rng);
    net.history.b_gate = b.add_zeros("history.b_gate", {d});

    int c = net.grid_channels();
    net.attention.w_cell = b.add_glorot("attn.w_cell", {cfg.attn_dim, c}, rng);
    net.attention.w_query = b.add_glorot("attn.w_query", {cfg.attn_dim, 2 * d}, rng);
    net.attention.b_cell = b.add_zeros("attn.b_cell", {cfg.attn_dim});
    net.attention.w_score = b.add_glorot("attn.w_score", {1, cfg.attn_dim}, rng);
    net.attention.b_score = b.add_zeros("attn.b_score", {1});

    net.heads.w1 = b.add_glorot("heads.w1", {cfg.trunk_hidden, c}, rng);
    net.heads.b1 = b.add_zeros("heads.b1", {cfg.trunk_hidden});
    net.heads.w2 = b.add_glorot("heads.w2", {cfg.trunk_hidden, cfg.trunk_hidden}, rng);
    net.heads.b2 = b.add_zeros("heads.b2", {cfg.trunk_hidden});
    net.heads.w_y = b.add_glorot("heads.w_y", {cfg.num_classes, cfg.trunk_hidden}, rng);
    net.heads.b_y = b.add_zeros("heads.b_y", {cfg.num_classes});
    net.heads.w_v = b.add_glorot("heads.w_v", {cfg.num_classes, cfg.trunk_hidden}, rng);
    net.heads.b_v = b.add("heads.b_v", {cfg.num_classes},
                          std::vector<double>(cfg.num_classes, cfg.variance_bias_init));

    net.latent.w_mu = b.add_glorot("latent.w_mu", {cfg.z_dim, c}, rng);
    net.latent.w_sigma = b.add_glorot("latent.w_sigma", {cfg.z_dim, c}, rng);

    net.decoder.embedding = net.embedding;
    net.decoder.w_x = b.add_glorot("decoder.w_x", {4 * cfg.z_dim, cfg.emb_dim}, rng);
    net.decoder.w_h = b.add_glorot("decoder.w_h", {4 * cfg.z_dim, cfg.z_dim}, rng);
    net.decoder.b = b.add_zeros("decoder.b", {4 * cfg.z_dim});
    net.decoder.w_out = b.add_glorot("decoder.w_out", {cfg.vocab_size, cfg.z_dim}, rng);
    net.decoder.b_out = b.add_zeros("decoder.b_out", {cfg.vocab_size});
    return net;
}

namespace {

struct DialogState {
    Tensor grid;    // [c, u, v]
    Tensor history; // [d]
};

DialogState encode_shared(const Network& net, Tape& tape, ParamMap& pm,
                          const data::EncodedDialog& dialog, RngStream& rng,
                          bool dropout_active) {
    if (!dialog.has_image || dialog.image.empty()) {
        throw UsageError("dialog " + std::to_string(dialog.dialog_id) + " carries no image tensor");
    }
    DialogState st;
    Tensor image = tape.constant({data::kImageChannels, data::kImageSide, data::kImageSide},
                                 dialog.image);
    bayes::ConvStackConfig conv;
    conv.layers = net.conv_layers;
    conv.placement = net.cfg.placement;
    conv.pool = net.cfg.pool;
    conv.dropout_active = dropout_active;
    RngStream conv_rng = rng.substream(101);
    st.grid = bayes::conv_stack_forward(tape, pm, conv, image, conv_rng);

    fusion::TextEncoderIds cap_ids{net.embedding, net.a_lstm};
    RngStream cap_rng = rng.substream(102);
    std::vector<int> caption = dialog.caption.empty() ? std::vector<int>{data::Vocab::kPad}
                                                      : dialog.caption;
    st.history = fusion::encode_text(tape, pm, cap_ids, caption, data::Vocab::kUnk,
                                     net.cfg.lstm_dropout, dropout_active, cap_rng);
    return st;
}

Tensor flag_sum(Tape& tape, const std::vector<std::pair<bool, Tensor>>& terms) {
    Tensor total;
    bool first = true;
    for (const auto& [on, term] : terms) {
        if (!on || !term.valid()) continue;
        total = first ? term : tape.add(total, term);
        first = false;
    }
    if (first) return tape.scalar_const(0.0);
    return total;
}

} // namespace

DialogComputation forward_dialog(const Network& net, Tape& tape, ParamMap& pm,
                                 const data::EncodedDialog& dialog, RngStream& rng,
                                 const ForwardOptions& opts) {
    ModelConfig cfg = net.cfg;
    if (opts.flags_override) cfg.flags = *opts.flags_override;
    DialogComputation out;
    DialogState st = encode_shared(net, tape, pm, dialog, rng, opts.dropout_active);

    fusion::TextEncoderIds q_ids{net.embedding, net.q_lstm};
    fusion::TextEncoderIds a_ids{net.embedding, net.a_lstm};
    vae::DecodeLimits limits{cfg.decoder_max_len, data::Vocab::kStart, data::Vocab::kEnd};

    for (size_t r = 0; r < dialog.rounds.size(); ++r) {
        const data::EncodedRound& round = dialog.rounds[r];
        RngStream round_rng = rng.substream(1000 + r);
        RoundComputation rc;

        Tensor q_enc = fusion::encode_text(tape, pm, q_ids, round.question, data::Vocab::kUnk,
                                           cfg.lstm_dropout, opts.dropout_active, round_rng);
        auto fuse = fusion::attend_fuse(tape, pm, net.attention, st.grid, q_enc, st.history);
        out.cells_u = fuse.cells_u;
        out.cells_v = fuse.cells_v;
        rc.alpha = fuse.alpha.value();

        auto heads_pre = unc::classifier_heads(tape, pm, net.heads, fuse.f, cfg.dropout_fc,
                                               opts.dropout_active, round_rng);

        Tensor f_final = fuse.f;
        bool want_losses = opts.compute_losses && round.gt_class >= 0;
        if (want_losses) {
            Tensor l_y_int = unc::ce_loss(tape, heads_pre, round.gt_class);
            if (cfg.flags.gce || cfg.flags.udl) {
                auto lrt = unc::lrt_distort(tape, heads_pre, cfg.t_lrt, round_rng);
                rc.l_gce = unc::gce_loss(tape, lrt, round.gt_class);
            }
            if (cfg.flags.ve) {
                Tensor h = unc::entropy_from_logits(tape, heads_pre.logits);
                rc.l_ve = unc::ve_loss(tape, heads_pre.sigma_sq, h);
            }
            if (cfg.flags.udl) {
                rc.l_udl = unc::udl_loss(tape, l_y_int, rc.l_gce, cfg.udl_literal);
            }
            rc.l_u = flag_sum(tape, {{cfg.flags.gce, rc.l_gce},
                                     {cfg.flags.ve, rc.l_ve},
                                     {cfg.flags.udl, rc.l_udl}});

            if (cfg.ruam_enabled && opts.ruam && cfg.flags.any_aleatoric()) {
                const std::vector<double>* fixed = nullptr;
                if (opts.fixed_nabla && r < opts.fixed_nabla->size()) {
                    fixed = &(*opts.fixed_nabla)[r];
                }
                rc.ruam = unc::ruam_update(tape, fuse.f, fuse.alpha, fuse.grid_mat, rc.l_u,
                                           cfg.lambda_ruam, cfg.gamma_neg,
                                           cfg.ruam_renormalize, fixed, cfg.ruam_grad_clip);
                f_final = rc.ruam->f_final;
                rc.ruam_applied = true;
            }
        }

        if (rc.ruam_applied) {
            auto heads_post = unc::classifier_heads(tape, pm, net.heads, f_final, cfg.dropout_fc,
                                                    opts.dropout_active, round_rng);
            rc.logits_final = heads_post.logits;
            rc.sigma_sq_final = heads_post.sigma_sq;
        } else {
            rc.logits_final = heads_pre.logits;
            rc.sigma_sq_final = heads_pre.sigma_sq;
        }
        rc.f_context = f_final;

        // latent heads are cheap; expose them for decoding and diversity
        Tensor f_vae = cfg.ruam_feeds_latent ? f_final : fuse.f;
        auto gaussian = vae::project_latent(tape, pm, net.latent, f_vae);
        rc.latent_mu = gaussian.mu;
        rc.latent_log_var = gaussian.log_var;

        if (want_losses) {
            rc.l_y_class = unc::ce_loss_logits(tape, rc.logits_final, round.gt_class);
            if (cfg.flags.kl) rc.l_kl = vae::kl_loss(tape, gaussian);
            auto samples = vae::sample_latents(tape, gaussian, std::max(cfg.k_latent, 1), round_rng);
            if (cfg.flags.div && samples.samples.size() >= 2) {
                rc.l_div = vae::diversity_loss(tape, samples);
            }
            if (!round.answer.empty()) {
                rc.l_y_token = vae::token_ce_loss(tape, pm, net.decoder, samples.samples[0],
                                                  round.answer, limits);
            }

            Tensor round_total = flag_sum(tape, {{cfg.flags.ce, rc.l_y_class},
                                                 {cfg.flags.ce, rc.l_y_token},
                                                 {cfg.flags.kl, rc.l_kl}});
            if (cfg.flags.div && rc.l_div.valid()) {
                round_total = tape.add(round_total, tape.mul_scalar(rc.l_div, cfg.div_weight));
            }
            if (cfg.flags.any_aleatoric()) {
                round_total = tape.add(round_total, tape.mul_scalar(rc.l_u, cfg.eta));
            }
            out.total = out.total.valid() ? tape.add(out.total, round_total) : round_total;
        }

        // roll the history forward with this round's recorded answer
        if (!round.answer.empty()) {
            Tensor a_enc = fusion::encode_text(tape, pm, a_ids, round.answer, data::Vocab::kUnk,
                                               cfg.lstm_dropout, opts.dropout_active, round_rng);
            st.history = fusion::update_history(tape, pm, net.history, st.history, q_enc, a_enc);
        }
        out.rounds.push_back(std::move(rc));
    }
    if (!out.total.valid()) out.total = tape.scalar_const(0.0);
    return out;
}

RankBy parse_rank_by(const std::string& s) {
    if (s == "classifier") return RankBy::Classifier;
    if (s == "decoder") return RankBy::Decoder;
    throw UsageError("unknown rank_by: " + s);
}

std::vector<RoundEval> eval_dialog(const Network& net, const data::EncodedDialog& dialog,
                                   const EvalOptions& opts, RngStream& rng) {
    if (opts.t_mc < 1) throw UsageError("eval needs t_mc >= 1");
    size_t n_rounds = dialog.rounds.size();
    std::vector<bayes::MCSampleSet> sets(n_rounds);
    for (auto& s : sets) s.t_count = opts.t_mc;
    std::vector<RoundEval> out(n_rounds);

    for (int t = 0; t < opts.t_mc; ++t) {
        RngStream pass_rng = rng.substream(static_cast<std::uint64_t>(t) + 1);
        Tape tape;
        ParamMap pm(tape, net.bank);
        ForwardOptions fopts;
        fopts.dropout_active = opts.mc_dropout;
        fopts.ruam = opts.with_ruam;
        fopts.compute_losses = opts.with_ruam; // the rewrite needs its loss node
        auto comp = forward_dialog(net, tape, pm, dialog, pass_rng, fopts);
        for (size_t r = 0; r < n_rounds; ++r) {
            Tensor probs = tape.softmax(comp.rounds[r].logits_final);
            sets[r].per_sample_probs.push_back(probs.value());
            sets[r].per_sample_variances.push_back(comp.rounds[r].sigma_sq_final.value());
            if (t == 0) out[r].alpha = comp.rounds[r].alpha;
        }
    }

    for (size_t r = 0; r < n_rounds; ++r) {
        out[r].mean_probs = bayes::mean_probs(sets[r]);
        out[r].report = unc::predictive_uncertainty(sets[r]);
    }

    if (opts.rank_by == RankBy::Classifier) {
        for (size_t r = 0; r < n_rounds; ++r) {
            const auto& round = dialog.rounds[r];
            out[r].candidate_scores.resize(round.candidates.size());
            for (size_t i = 0; i < round.candidates.size(); ++i) {
                int cls = round.candidate_classes[i];
                out[r].candidate_scores[i] =
                    (cls >= 0 && cls < static_cast<int>(out[r].mean_probs.size()))
                        ? out[r].mean_probs[cls]
                        : -1e300;
            }
        }
    } else {
        // teacher-forced sequence log-likelihood from the deterministic
        // latent mean of each round's context
        Tape tape;
        ParamMap pm(tape, net.bank);
        RngStream det_rng = rng.substream(777);
        ForwardOptions fopts;
        fopts.dropout_active = false;
        fopts.ruam = false;
        fopts.compute_losses = false;
        auto comp = forward_dialog(net, tape, pm, dialog, det_rng, fopts);
        vae::DecodeLimits limits{net.cfg.decoder_max_len, data::Vocab::kStart, data::Vocab::kEnd};
        for (size_t r = 0; r < n_rounds; ++r) {
            auto scored = vae::decode_answer(tape, pm, net.decoder, comp.rounds[r].latent_mu,
                                             vae::DecodeMode::ScoreCandidates, limits,
                                             dialog.rounds[r].candidates);
            out[r].candidate_scores = std::move(scored.class_logits);
        }
    }

    for (size_t r = 0; r < n_rounds; ++r) {
        metrics::RankedList list;
        list.scores = out[r].candidate_scores;
        list.gt_index = dialog.rounds[r].gt_index;
        out[r].rank = metrics::rank_of_gt(list);
    }
    return out;
}

std::vector<double> latent_matrix(const Network& net, const data::EncodedDialog& dialog,
                                  int m, bool from_decoder_hidden, RngStream& rng) {
    if (m < 1) throw UsageError("latent_matrix needs m >= 1");
    if (dialog.rounds.empty()) throw UsageError("latent_matrix needs at least one round");
    Tape tape;
    ParamMap pm(tape, net.bank);
    RngStream det_rng = rng.substream(11);
    ForwardOptions fopts;
    fopts.dropout_active = false;
    fopts.ruam = false;
    fopts.compute_losses = false;
    auto comp = forward_dialog(net, tape, pm, dialog, det_rng, fopts);
    const auto& last = comp.rounds.back();
    const auto& mu = last.latent_mu.value();
    const auto& log_var = last.latent_log_var.value();
    int z_dim = static_cast<int>(mu.size());

    std::vector<double> rows;
    rows.reserve(static_cast<size_t>(m) * z_dim);
    vae::DecodeLimits limits{net.cfg.decoder_max_len, data::Vocab::kStart, data::Vocab::kEnd};
    for (int j = 0; j < m; ++j) {
        std::vector<double> z(z_dim);
        for (int i = 0; i < z_dim; ++i) {
            z[i] = mu[i] + rng.normal() * std::exp(0.5 * log_var[i]);
        }
        if (!from_decoder_hidden) {
            rows.insert(rows.end(), z.begin(), z.end());
            continue;
        }
        // alternative embedding: the decoder's final hidden state after a
        // greedy unroll from this latent
        Tensor zt = tape.constant({z_dim}, z);
        auto gen = vae::decode_answer(tape, pm, net.decoder, zt, vae::DecodeMode::Generate, limits);
        LstmWeights w{pm.get(net.decoder.w_x), pm.get(net.decoder.w_h), pm.get(net.decoder.b)};
        Tensor emb = pm.get(net.decoder.embedding);
        Tensor h = zt;
        Tensor c = tape.zeros({z_dim});
        int prev = data::Vocab::kStart;
        std::vector<int> seq = gen.token_ids;
        seq.push_back(data::Vocab::kEnd);
        for (int tok : seq) {
            auto hc = lstm_cell(tape.select_row(emb, prev), h, c, w);
            h = hc.first;
            c = hc.second;
            prev = tok;
        }
        const auto& hv = h.value();
        rows.insert(rows.end(), hv.begin(), hv.end());
    }
    return rows;
}

} // namespace uqr::model
