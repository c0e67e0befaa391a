#include "uqr/fusion.hpp"

namespace uqr::fusion {

Tensor encode_text(Tape& tape, ParamMap& pm, const TextEncoderIds& ids,
                   const std::vector<int>& tokens, int unk_id,
                   const bayes::LstmDropout& dropout, bool dropout_active,
                   RngStream& rng, bayes::LstmTrace* trace) {
    if (tokens.empty()) throw UsageError("encode_text needs at least one token");
    Tensor emb = pm.get(ids.embedding);
    int vocab = emb.shape()[0];
    std::vector<Tensor> steps;
    steps.reserve(tokens.size());
    for (int tok : tokens) {
        int id = (tok >= 0 && tok < vocab) ? tok : unk_id;
        steps.push_back(tape.select_row(emb, id));
    }
    return bayes::bayesian_lstm_forward(tape, pm, ids.lstm, steps, dropout,
                                        dropout_active, rng, trace);
}

Tensor update_history(Tape& tape, const HistoryWeights& w,
                      Tensor prev_history, Tensor q_enc, Tensor a_enc) {
    if (q_enc.size() != prev_history.size() || a_enc.size() != prev_history.size()) {
        throw ShapeError("update_history encodings must share one dimension");
    }
    Tensor qa = tape.concat({q_enc, a_enc});
    Tensor cand = tape.tanh(tape.add(tape.matmul(w.w_proj, qa), w.b_proj));
    Tensor gate = tape.sigmoid(tape.add(tape.matmul(w.w_gate, qa), w.b_gate));
    return tape.add(prev_history, tape.mul(gate, cand));
}

Tensor update_history(Tape& tape, ParamMap& pm, const HistoryIds& ids,
                      Tensor prev_history, Tensor q_enc, Tensor a_enc) {
    HistoryWeights w{pm.get(ids.w_proj), pm.get(ids.b_proj),
                     pm.get(ids.w_gate), pm.get(ids.b_gate)};
    return update_history(tape, w, prev_history, q_enc, a_enc);
}

FuseResult attend_fuse(Tape& tape, const AttentionWeights& w,
                       Tensor grid, Tensor q_enc, Tensor h_enc) {
    const Shape& gs = grid.shape();
    FuseResult out;
    Tensor grid_mat;
    if (gs.size() == 3) {
        out.cells_u = gs[1];
        out.cells_v = gs[2];
        grid_mat = tape.reshape(grid, {gs[0], gs[1] * gs[2]});
    } else if (gs.size() == 2) {
        out.cells_u = 1;
        out.cells_v = gs[1];
        grid_mat = grid;
    } else {
        throw ShapeError("attend_fuse grid must be [c,u,v] or [c,cells], got " + shape_str(gs));
    }
    int cells = grid_mat.shape()[1];

    Tensor qh = tape.concat({q_enc, h_enc});
    // W_c applied per spatial cell; the query projection is broadcast to
    // every column through a rank-1 product with a ones row.
    Tensor cell_proj = tape.matmul(w.w_cell, grid_mat); // [d_a, cells]
    Tensor query = tape.add(tape.matmul(w.w_query, qh), w.b_cell); // [d_a]
    int d_a = static_cast<int>(query.size());
    Tensor ones_row = tape.full({1, cells}, 1.0);
    Tensor query_cols = tape.matmul(tape.reshape(query, {d_a, 1}), ones_row); // [d_a, cells]
    Tensor g_a = tape.tanh(tape.add(cell_proj, query_cols));

    Tensor scores = tape.add(tape.matmul(w.w_score, g_a), w.b_score); // [1, cells]
    out.alpha = tape.softmax(tape.reshape(scores, {cells}));
    out.f = tape.matmul(grid_mat, out.alpha);
    out.grid_mat = grid_mat;
    return out;
}

FuseResult attend_fuse(Tape& tape, ParamMap& pm, const AttentionIds& ids,
                       Tensor grid, Tensor q_enc, Tensor h_enc) {
    AttentionWeights w{pm.get(ids.w_cell), pm.get(ids.w_query), pm.get(ids.b_cell),
                       pm.get(ids.w_score), pm.get(ids.b_score)};
    return attend_fuse(tape, w, grid, q_enc, h_enc);
}

} // namespace uqr::fusion
