#include "uqr/bayesian.hpp"

#include <cmath>

namespace uqr::bayes {

Tensor dropout_mask(Tape& tape, const Shape& shape, double p, RngStream& rng) {
    if (p < 0.0 || p > 1.0) throw UsageError("dropout rate must be in [0, 1]");
    std::vector<double> m(numel(shape));
    double keep_scale = (p < 1.0) ? 1.0 / (1.0 - p) : 0.0;
    for (double& v : m) v = (rng.uniform() < p) ? 0.0 : keep_scale;
    return tape.constant(shape, std::move(m));
}

Tensor bayesian_dense(Tape& tape, Tensor w, Tensor b, Tensor x, double p, RngStream& rng) {
    Tensor in = x;
    if (p > 0.0) in = tape.mul(in, dropout_mask(tape, x.shape(), p, rng));
    return tape.add(tape.matmul(w, in), b);
}

Tensor conv_stack_forward(Tape& tape, ParamMap& pm, const ConvStackConfig& cfg,
                          Tensor image, RngStream& rng) {
    Tensor x = image;
    for (const ConvLayerSpec& layer : cfg.layers) {
        double p = cfg.dropout_active ? layer.dropout_rate : 0.0;
        if (cfg.placement == DropoutPlacement::BeforeLayer && p > 0.0) {
            x = tape.mul(x, dropout_mask(tape, x.shape(), p, rng));
        }
        x = tape.conv2d(x, pm.get(layer.w_kernels), cfg.conv_stride, cfg.conv_pad);
        x = tape.relu(tape.bias_channels(x, pm.get(layer.w_bias)));
        x = (cfg.pool == PoolKind::Max)
                ? tape.max_pool2d(x, cfg.pool_window, cfg.pool_stride)
                : tape.avg_pool2d(x, cfg.pool_window, cfg.pool_stride);
        if (cfg.placement == DropoutPlacement::AfterMaxPool && p > 0.0) {
            x = tape.mul(x, dropout_mask(tape, x.shape(), p, rng));
        }
    }
    return x;
}

Tensor bayesian_lstm_forward(Tape& tape, ParamMap& pm, const LstmParamIds& ids,
                             const std::vector<Tensor>& steps, const LstmDropout& p,
                             bool dropout_active, RngStream& rng, LstmTrace* trace) {
    if (steps.empty()) throw UsageError("lstm forward needs at least one step");
    LstmWeights w{pm.get(ids.w_x), pm.get(ids.w_h), pm.get(ids.b)};
    int hidden = w.w_h.shape()[1];
    int in_dim = static_cast<int>(steps[0].size());

    double pi = dropout_active ? p.input : 0.0;
    double ph = dropout_active ? p.hidden : 0.0;
    double po = dropout_active ? p.output : 0.0;

    // One mask per call, reused across all time steps of this sample.
    Tensor mask_in, mask_hid;
    if (pi > 0.0) mask_in = dropout_mask(tape, {in_dim}, pi, rng);
    if (ph > 0.0) mask_hid = dropout_mask(tape, {hidden}, ph, rng);
    if (trace) {
        trace->mask_input = pi > 0.0 ? mask_in.value() : std::vector<double>(in_dim, 1.0);
        trace->mask_hidden = ph > 0.0 ? mask_hid.value() : std::vector<double>(hidden, 1.0);
    }

    Tensor h = tape.zeros({hidden});
    Tensor c = tape.zeros({hidden});
    for (const Tensor& step : steps) {
        Tensor x = (pi > 0.0) ? tape.mul(step, mask_in) : step;
        Tensor h_in = (ph > 0.0) ? tape.mul(h, mask_hid) : h;
        auto hc = lstm_cell(x, h_in, c, w);
        h = hc.first;
        c = hc.second;
    }
    if (po > 0.0) h = tape.mul(h, dropout_mask(tape, {hidden}, po, rng));
    return h;
}

MCSampleSet predictive_posterior(const StochasticClassifier& model, int t_count, RngStream& rng) {
    if (t_count < 1) throw UsageError("predictive_posterior needs T >= 1");
    MCSampleSet set;
    set.t_count = t_count;
    set.per_sample_probs.reserve(t_count);
    set.per_sample_variances.reserve(t_count);
    for (int t = 0; t < t_count; ++t) {
        RngStream sub = rng.substream(static_cast<std::uint64_t>(t) + 1);
        auto [probs, vars] = model(sub);
        set.per_sample_probs.push_back(std::move(probs));
        set.per_sample_variances.push_back(std::move(vars));
    }
    return set;
}

std::vector<double> mean_probs(const MCSampleSet& set) {
    if (set.per_sample_probs.empty()) return {};
    std::vector<double> mean(set.per_sample_probs[0].size(), 0.0);
    for (const auto& p : set.per_sample_probs) {
        for (size_t i = 0; i < mean.size(); ++i) mean[i] += p[i];
    }
    for (double& v : mean) v /= static_cast<double>(set.t_count);
    return mean;
}

} // namespace uqr::bayes
