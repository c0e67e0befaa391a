#pragma once

#include <map>
#include <string>
#include <vector>

#include "uqr/data.hpp"
#include "uqr/model.hpp"

namespace uqr::train {

// Flat key=value configuration; every field is addressable from the config
// file and unknown keys are rejected. UQRANK_SEED overrides `seed`.
struct TrainConfig {
    std::uint64_t seed = 1234;
    int epochs = 30;
    double lr = 4e-4;
    double eta = 1.0;
    model::LossFlags loss_flags;

    std::vector<double> dropout_conv = {0.1, 0.2, 0.3};
    double dropout_fc = 0.5;
    double dropout_lstm_input = 0.3;
    double dropout_lstm_hidden = 0.3;
    double dropout_lstm_output = 0.5;
    std::string dropout_placement = "after_max_pool"; // or before_layer
    std::string pool = "max";                          // or avg

    int t_mc = 25;  // MC dropout samples at evaluation
    int t_lrt = 8;  // LRT draws inside the GCE loss
    int k_latent = 8;
    double lambda_ruam = 1.0;
    double gamma_neg = -2.0;
    double ruam_grad_clip = 5.0;
    bool ruam_enabled = true;
    bool ruam_renormalize = false;
    bool ruam_feeds_latent = true;
    bool ruam_at_eval = false;
    bool udl_literal = false;
    bool mc_eval_dropout = true;

    double data_fraction = 1.0;  // of the train split; one of 0.5 / 0.75 / 1.0
    double noise_gamma = 1.0;    // applied to the val split at evaluation

    int batch_size = 8;
    int train_dialogs = 500;
    int val_dialogs = 100;
    int rounds = 5;
    int num_candidates = 20;
    double ambiguity = 0.3;

    int emb_dim = 16;
    int lstm_hidden = 24;
    int attn_dim = 24;
    int z_dim = 16;
    int trunk_hidden = 32;
    double div_weight = 1.0;

    std::string rank_by = "classifier"; // or decoder
    int diversity_dialogs = 50;
    int diversity_samples = 20;
    std::string diversity_source = "latent"; // or decoder_hidden

    int attention_dump_dialogs = 3;
    // global-norm gradient clip; the exp inside the VE loss can spike the
    // gradient scale by orders of magnitude. 0 disables.
    double max_grad_norm = 5.0;
    // epochs trained with the aleatoric family (GCE/VE/UDL and the rewrite)
    // off, so the classifier converges before the variance war starts
    int aleatoric_warmup_epochs = 0;
    double var_bias_init = -3.0;
};

TrainConfig parse_config_text(const std::string& text);
TrainConfig parse_config_file(const std::string& path); // "" -> defaults + env
std::string config_to_text(const TrainConfig& cfg);

model::ModelConfig model_config_from(const TrainConfig& cfg, int vocab_size, int num_classes);
data::SyntheticTaskSpec synthetic_spec_from(const TrainConfig& cfg, bool val_split);

// ---------------------------------------------------------------------------
// Datasets
// ---------------------------------------------------------------------------

struct Datasets {
    std::vector<data::EncodedDialog> train;
    std::vector<data::EncodedDialog> val;
    data::Vocab vocab;
    data::AnswerClassMap classes;
};

Datasets make_datasets(const TrainConfig& cfg);

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

struct Adam {
    double lr = 4e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    int t = 0;
    std::vector<std::vector<double>> m, v;

    explicit Adam(double lr_) : lr(lr_) {}
    void step(ParamBank& bank);
};

// ---------------------------------------------------------------------------
// Results
// ---------------------------------------------------------------------------

struct EpochLog {
    int epoch = 0;
    std::map<std::string, double> components;
};

struct MetricsRow {
    std::string run_id;
    double r1 = 0, r5 = 0, r10 = 0, mrr = 0, mean_rank = 0, ndcg = 0, sigma_o = 0;
    double aleatoric_mean = 0, aleatoric_std = 0;
    double epistemic_mean = 0, epistemic_std = 0;
};

struct RoundReportRow {
    int dialog_id = -1;
    int round = -1;
    unc::UncertaintyReport report;
};

struct AttentionDump {
    std::string name; // alpha_d<id>_r<round>
    int u = 0, v = 0;
    std::vector<double> values;
};

struct ExperimentResult {
    std::string run_id;
    std::vector<EpochLog> epochs;
    MetricsRow metrics;
    std::vector<RoundReportRow> round_reports;
    std::vector<AttentionDump> attention;
    double wall_clock_sec = 0.0;
};

struct TrainOutput {
    ExperimentResult result;
    model::Network network;
    data::Vocab vocab;
    data::AnswerClassMap classes;
};

// Training on internally generated synthetic data (train) or on supplied
// datasets (train_on, used by the ablation runner to share splits).
TrainOutput train(const TrainConfig& cfg);
TrainOutput train_on(const TrainConfig& cfg, const Datasets& ds);

// Evaluation of a trained network on the val split (noise_gamma applied to a
// copy when != 1), producing the metrics row, per-round uncertainty reports
// and attention dumps.
ExperimentResult evaluate(const model::Network& net, const TrainConfig& cfg, const Datasets& ds,
                          const std::string& run_id);

// ---------------------------------------------------------------------------
// Ablations
// ---------------------------------------------------------------------------

struct AblationRow {
    std::string label;
    MetricsRow metrics;
};

std::vector<std::string> ablate_modes(); // losses, noise, data-fraction, dropout-placement
std::vector<AblationRow> ablate(const TrainConfig& cfg, const std::string& mode);

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

void report(const ExperimentResult& result, const std::string& out_dir);
void report_table(const std::vector<AblationRow>& rows, const std::string& mode,
                  const std::string& out_dir);
void write_model_dir(const TrainOutput& out, const TrainConfig& cfg, const std::string& dir);

struct LoadedModel {
    TrainConfig cfg;
    model::Network network;
    data::Vocab vocab;
    data::AnswerClassMap classes;
};
LoadedModel load_model_dir(const std::string& dir);

// Renders <dir>/loss_curves.csv into <dir>/loss_curves.svg.
void plot(const std::string& dir);

} // namespace uqr::train
