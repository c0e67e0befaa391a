#pragma once

#include <functional>
#include <utility>
#include <vector>

#include "uqr/params.hpp"
#include "uqr/rng.hpp"
#include "uqr/tensor.hpp"

namespace uqr::bayes {

enum class DropoutPlacement { BeforeLayer, AfterMaxPool };
enum class PoolKind { Max, Avg };

struct BayesianLayerConfig {
    double dropout_rate = 0.0;
    DropoutPlacement placement = DropoutPlacement::AfterMaxPool;
    bool mc_active_at_eval = true;
};

// Inverted Bernoulli mask: 0 with probability p, 1/(1-p) otherwise, so the
// masked activation is unbiased. p=1 yields all zeros.
Tensor dropout_mask(Tape& tape, const Shape& shape, double p, RngStream& rng);

// x masked then projected: W (x . mask) + b. p=0 skips the mask entirely.
Tensor bayesian_dense(Tape& tape, Tensor w, Tensor b, Tensor x, double p, RngStream& rng);

struct ConvLayerSpec {
    int w_kernels = -1; // ParamBank indices
    int w_bias = -1;
    double dropout_rate = 0.0;
};

struct ConvStackConfig {
    std::vector<ConvLayerSpec> layers;
    DropoutPlacement placement = DropoutPlacement::AfterMaxPool;
    PoolKind pool = PoolKind::Max;
    int pool_window = 2;
    int pool_stride = 2;
    int conv_stride = 1;
    int conv_pad = 1;
    bool dropout_active = true;
};

// conv -> bias -> relu -> pool blocks; the Bernoulli mask lands either on
// each block's input or on its pooled output.
Tensor conv_stack_forward(Tape& tape, ParamMap& pm, const ConvStackConfig& cfg,
                          Tensor image, RngStream& rng);

struct LstmParamIds {
    int w_x = -1;
    int w_h = -1;
    int b = -1;
};

struct LstmDropout {
    double input = 0.0;
    double hidden = 0.0;
    double output = 0.0;
};

struct LstmTrace {
    std::vector<double> mask_input;
    std::vector<double> mask_hidden;
};

// Runs an LSTM over embedded steps with one input mask and one hidden mask
// drawn per call and reused at every time step. Returns the final hidden
// state after output dropout.
Tensor bayesian_lstm_forward(Tape& tape, ParamMap& pm, const LstmParamIds& ids,
                             const std::vector<Tensor>& steps, const LstmDropout& p,
                             bool dropout_active, RngStream& rng, LstmTrace* trace = nullptr);

// T stochastic forward draws of a classifier under dropout.
struct MCSampleSet {
    int t_count = 0;
    std::vector<std::vector<double>> per_sample_probs;     // each sums to 1
    std::vector<std::vector<double>> per_sample_variances; // predicted aleatoric
};

using StochasticClassifier =
    std::function<std::pair<std::vector<double>, std::vector<double>>(RngStream&)>;

// Mean class probability over the set is the Monte Carlo estimate of the
// predictive posterior. Sample t uses rng.substream(t).
MCSampleSet predictive_posterior(const StochasticClassifier& model, int t_count, RngStream& rng);

std::vector<double> mean_probs(const MCSampleSet& set);

} // namespace uqr::bayes
