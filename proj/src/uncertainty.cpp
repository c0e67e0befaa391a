#include "uqr/uncertainty.hpp"

#include <cmath>

namespace uqr::unc {

LogitVariancePair classifier_heads(Tape& tape, const HeadWeights& w, Tensor f,
                                   double dropout_p, bool dropout_active, RngStream& rng) {
    double p = dropout_active ? dropout_p : 0.0;
    Tensor t1 = tape.relu(tape.add(tape.matmul(w.w1, f), w.b1));
    if (p > 0.0) t1 = tape.mul(t1, bayes::dropout_mask(tape, t1.shape(), p, rng));
    Tensor t2 = tape.relu(tape.add(tape.matmul(w.w2, t1), w.b2));
    if (p > 0.0) t2 = tape.mul(t2, bayes::dropout_mask(tape, t2.shape(), p, rng));
    LogitVariancePair out;
    out.logits = tape.add(tape.matmul(w.w_y, t2), w.b_y);
    out.sigma_sq = tape.softplus(tape.add(tape.matmul(w.w_v, t2), w.b_v));
    return out;
}

LogitVariancePair classifier_heads(Tape& tape, ParamMap& pm, const HeadIds& ids, Tensor f,
                                   double dropout_p, bool dropout_active, RngStream& rng) {
    HeadWeights w{pm.get(ids.w1), pm.get(ids.b1), pm.get(ids.w2), pm.get(ids.b2),
                  pm.get(ids.w_y), pm.get(ids.b_y), pm.get(ids.w_v), pm.get(ids.b_v)};
    return classifier_heads(tape, w, f, dropout_p, dropout_active, rng);
}

DistortedLogitSet lrt_distort(Tape& tape, const LogitVariancePair& pair, int t_count,
                              RngStream& rng) {
    if (t_count < 1) throw UsageError("lrt_distort needs T >= 1");
    int m = static_cast<int>(pair.logits.size());
    Tensor sigma = tape.sqrt(pair.sigma_sq);
    DistortedLogitSet set;
    set.samples.reserve(t_count);
    for (int t = 0; t < t_count; ++t) {
        std::vector<double> eps(m);
        for (double& e : eps) e = rng.normal();
        Tensor noise = tape.mul(tape.constant({m}, std::move(eps)), sigma);
        set.samples.push_back(tape.add(pair.logits, noise));
    }
    return set;
}

Tensor gce_loss(Tape& tape, const DistortedLogitSet& set, int true_class) {
    if (set.samples.empty()) throw UsageError("gce_loss on an empty sample set");
    int t_count = static_cast<int>(set.samples.size());
    // -log mean_t softmax(y_t)[c] == log T - logsumexp_t(log softmax(y_t)[c])
    std::vector<Tensor> log_probs;
    log_probs.reserve(t_count);
    for (const Tensor& y : set.samples) {
        log_probs.push_back(tape.sub(tape.select(y, true_class), tape.logsumexp(y)));
    }
    Tensor stacked = tape.concat(log_probs);
    return tape.add_scalar(tape.neg(tape.logsumexp(stacked)), std::log(static_cast<double>(t_count)));
}

Tensor ce_loss_logits(Tape& tape, Tensor logits, int true_class) {
    if (true_class < 0 || true_class >= logits.size()) {
        throw UsageError("ce_loss class index out of range");
    }
    return tape.sub(tape.logsumexp(logits), tape.select(logits, true_class));
}

Tensor ce_loss(Tape& tape, const LogitVariancePair& pair, int true_class) {
    return ce_loss_logits(tape, pair.logits, true_class);
}

Tensor ve_loss(Tape& tape, Tensor sigma_sq, Tensor entropy_term) {
    Tensor sw = tape.add(sigma_sq, entropy_term); // entropy broadcast over classes
    Tensor gap = tape.add_scalar(tape.exp(sw), -std::exp(1.0));
    return tape.sum(tape.relu(gap));
}

Tensor udl_loss(Tape& tape, Tensor l_y, Tensor l_gce, bool literal_power) {
    Tensor diff = tape.sub(l_y, l_gce);
    if (literal_power) {
        Tensor e = tape.exp(diff);
        return tape.mul(e, e);
    }
    return tape.exp(tape.mul(diff, diff));
}

Tensor aleatoric_total(Tape& tape, Tensor l_gce, Tensor l_ve, Tensor l_udl) {
    return tape.add(tape.add(l_gce, l_ve), l_udl);
}

Tensor entropy_from_logits(Tape& tape, Tensor logits) {
    Tensor p = tape.softmax(logits);
    return tape.sub(tape.logsumexp(logits), tape.sum(tape.mul(p, logits)));
}

double predictive_entropy(const std::vector<double>& probs) {
    double sum = 0.0;
    for (double p : probs) {
        if (p < 0.0) throw DomainError("predictive_entropy on a negative probability");
        sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-6) {
        throw DomainError("predictive_entropy input does not sum to 1");
    }
    double h = 0.0;
    for (double p : probs) {
        if (p > 0.0) h -= p * std::log(p);
    }
    return h;
}

UncertaintyReport predictive_uncertainty(const bayes::MCSampleSet& samples) {
    if (samples.t_count < 1) throw UsageError("predictive_uncertainty needs T >= 1");
    UncertaintyReport r;
    double t_inv = 1.0 / static_cast<double>(samples.t_count);
    for (const auto& p : samples.per_sample_probs) r.entropy += predictive_entropy(p);
    r.entropy *= t_inv;

    for (const auto& v : samples.per_sample_variances) {
        double m = 0.0;
        for (double x : v) m += x;
        r.aleatoric_mean += v.empty() ? 0.0 : m / static_cast<double>(v.size());
    }
    r.aleatoric_mean *= t_inv;

    // epistemic: variance across samples of each class probability, then
    // averaged over classes
    size_t classes = samples.per_sample_probs.empty() ? 0 : samples.per_sample_probs[0].size();
    if (classes > 0) {
        std::vector<double> mean(classes, 0.0);
        for (const auto& p : samples.per_sample_probs)
            for (size_t c = 0; c < classes; ++c) mean[c] += p[c];
        for (double& m : mean) m *= t_inv;
        double var = 0.0;
        for (const auto& p : samples.per_sample_probs)
            for (size_t c = 0; c < classes; ++c) {
                double d = p[c] - mean[c];
                var += d * d;
            }
        r.epistemic_var = var * t_inv / static_cast<double>(classes);
    }

    r.sigma_sq_p = r.entropy + r.aleatoric_mean;
    return r;
}

RuamState ruam_update(Tape& tape, Tensor f, Tensor alpha, Tensor grid_mat, Tensor l_u,
                      double lambda, double gamma_neg, bool renormalize,
                      const std::vector<double>* nabla_override, double nabla_clip) {
    if (lambda <= 0.0) throw UsageError("ruam_update needs lambda > 0");
    const Shape& gs = grid_mat.shape();
    if (gs.size() != 2) throw ShapeError("ruam_update grid must be [c, cells]");
    int channels = gs[0];
    int cells = gs[1];
    if (alpha.size() != cells) throw ShapeError("ruam_update alpha does not match the grid cells");

    RuamState st;
    st.alpha = alpha.value();

    if (nabla_override) {
        if (static_cast<int>(nabla_override->size()) != cells) {
            throw ShapeError("ruam_update gradient override does not match the grid cells");
        }
        st.nabla_u = *nabla_override;
    } else {
        // The reversal layer carries -lambda into the backward sweep; the
        // harvest at the grid therefore reads -lambda * dLu/d(grid) directly.
        Tensor reversed = tape.grad_reverse(l_u, lambda);
        tape.zero_grads();
        tape.backward(reversed, {grid_mat.id()});
        const auto& gg = tape.grad_of(grid_mat.id());
        st.nabla_u.assign(cells, 0.0);
        for (int ch = 0; ch < channels; ++ch)
            for (int j = 0; j < cells; ++j) st.nabla_u[j] += gg[static_cast<size_t>(ch) * cells + j];
        for (double& v : st.nabla_u) v /= static_cast<double>(channels);
        if (nabla_clip > 0.0) {
            for (double& v : st.nabla_u) v = std::clamp(v, -nabla_clip, nabla_clip);
        }
        tape.zero_grads();
    }

    Tensor nabla_t = tape.constant({cells}, st.nabla_u);
    Tensor a_prime = tape.mul(nabla_t, alpha);
    Tensor a_dprime = tape.add(tape.relu(a_prime),
                               tape.mul_scalar(tape.relu(tape.neg(a_prime)), gamma_neg));
    Tensor a_new = tape.add(alpha, tape.mul(a_dprime, alpha));
    st.alpha_prime = a_prime.value();
    st.alpha_dprime = a_dprime.value();
    st.alpha_new = a_new.value();

    Tensor a_used = a_new;
    if (renormalize) {
        a_used = tape.div(a_new, tape.sum(a_new));
    }
    Tensor f_prime = tape.matmul(grid_mat, a_used);
    Tensor f_final = tape.add(f, f_prime);
    st.f_prime = f_prime.value();
    st.f_dprime = f_final.value();
    st.f_final = f_final;
    st.alpha_new_t = a_used;
    return st;
}

} // namespace uqr::unc
