#pragma once

#include <vector>

#include "uqr/bayesian.hpp"
#include "uqr/params.hpp"
#include "uqr/rng.hpp"
#include "uqr/tensor.hpp"

namespace uqr::fusion {

// Text encoder: shared embedding rows fed through a Bayesian LSTM. Out-of-
// vocabulary ids map to `unk_id` rather than erroring.
struct TextEncoderIds {
    int embedding = -1; // [vocab, emb_dim]
    bayes::LstmParamIds lstm;
};

Tensor encode_text(Tape& tape, ParamMap& pm, const TextEncoderIds& ids,
                   const std::vector<int>& tokens, int unk_id,
                   const bayes::LstmDropout& dropout, bool dropout_active,
                   RngStream& rng, bayes::LstmTrace* trace = nullptr);

// History update: candidate = tanh(W_h (q||a) + b_h), gate = sigmoid(W_g
// (q||a) + b_g), out = prev + gate . candidate. Zero projection weights keep
// the previous history unchanged.
struct HistoryWeights {
    Tensor w_proj; // [d, 2d]
    Tensor b_proj;
    Tensor w_gate; // [d, 2d]
    Tensor b_gate;
};

struct HistoryIds {
    int w_proj = -1;
    int b_proj = -1;
    int w_gate = -1;
    int b_gate = -1;
};

Tensor update_history(Tape& tape, const HistoryWeights& w,
                      Tensor prev_history, Tensor q_enc, Tensor a_enc);
Tensor update_history(Tape& tape, ParamMap& pm, const HistoryIds& ids,
                      Tensor prev_history, Tensor q_enc, Tensor a_enc);

// Per-cell scores g_a = tanh(W_c g_i + W_q (q||h) + b_c), attention
// alpha = softmax(W_a g_a + b_a) over the u*v cells, fused feature
// f = sum_cells alpha * g_i.
struct AttentionWeights {
    Tensor w_cell;  // [d_a, c]
    Tensor w_query; // [d_a, 2d]
    Tensor b_cell;  // [d_a]
    Tensor w_score; // [1, d_a]
    Tensor b_score; // [1]
};

struct AttentionIds {
    int w_cell = -1;
    int w_query = -1;
    int b_cell = -1;
    int w_score = -1;
    int b_score = -1;
};

struct FuseResult {
    Tensor f;        // [c]
    Tensor alpha;    // [cells], sums to 1
    Tensor grid_mat; // [c, cells] view the attention read from
    int cells_u = 0;
    int cells_v = 0;
};

// grid is [c, u, v] (or already flattened [c, cells] with u*v == cells).
FuseResult attend_fuse(Tape& tape, const AttentionWeights& w,
                       Tensor grid, Tensor q_enc, Tensor h_enc);
FuseResult attend_fuse(Tape& tape, ParamMap& pm, const AttentionIds& ids,
                       Tensor grid, Tensor q_enc, Tensor h_enc);

} // namespace uqr::fusion
