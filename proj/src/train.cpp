#include "uqr/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "uqr/metrics.hpp"
#include "uqr/serialize.hpp"

namespace uqr::train {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    size_t b = s.find_last_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    return s.substr(a, b - a + 1);
}

bool parse_bool(const std::string& v, const std::string& key) {
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError("config key " + key + ": expected a boolean, got \"" + v + "\"");
}

std::vector<double> parse_double_list(const std::string& v, const std::string& key) {
    std::vector<double> out;
    std::string item;
    std::istringstream is(v);
    while (std::getline(is, item, ',')) {
        item = trim(item);
        if (item.empty()) continue;
        try {
            out.push_back(std::stod(item));
        } catch (...) {
            throw ConfigError("config key " + key + ": bad number \"" + item + "\"");
        }
    }
    if (out.empty()) throw ConfigError("config key " + key + ": empty list");
    return out;
}

model::LossFlags parse_flags(const std::string& v) {
    model::LossFlags f;
    f.ce = f.gce = f.ve = f.udl = f.kl = f.div = false;
    std::string item;
    std::istringstream is(v);
    while (std::getline(is, item, ',')) {
        item = trim(item);
        if (item.empty()) continue;
        if (item == "CE") f.ce = true;
        else if (item == "GCE") f.gce = true;
        else if (item == "VE") f.ve = true;
        else if (item == "UDL") f.udl = true;
        else if (item == "KL") f.kl = true;
        else if (item == "DIV") f.div = true;
        else throw ConfigError("unknown loss flag: " + item);
    }
    if (!f.any()) throw ConfigError("loss_flags must enable at least one component");
    return f;
}

std::string flags_to_string(const model::LossFlags& f) {
    std::vector<std::string> parts;
    if (f.ce) parts.push_back("CE");
    if (f.gce) parts.push_back("GCE");
    if (f.ve) parts.push_back("VE");
    if (f.udl) parts.push_back("UDL");
    if (f.kl) parts.push_back("KL");
    if (f.div) parts.push_back("DIV");
    std::string out;
    for (size_t i = 0; i < parts.size(); ++i) {
        if (i) out += ',';
        out += parts[i];
    }
    return out;
}

void validate(const TrainConfig& c) {
    if (c.lr <= 0.0) throw ConfigError("lr must be positive");
    if (c.eta < 0.0) throw ConfigError("eta must be non-negative");
    if (!c.loss_flags.any()) throw ConfigError("loss_flags must enable at least one component");
    if (c.epochs < 0) throw ConfigError("epochs must be non-negative");
    if (c.batch_size < 1) throw ConfigError("batch_size must be positive");
    const double fr = c.data_fraction;
    if (fr != 0.5 && fr != 0.75 && fr != 1.0) {
        throw ConfigError("data_fraction must be one of 0.5, 0.75, 1.0");
    }
    if (c.dropout_placement != "after_max_pool" && c.dropout_placement != "before_layer") {
        throw ConfigError("dropout_placement must be after_max_pool or before_layer");
    }
    if (c.pool != "max" && c.pool != "avg") throw ConfigError("pool must be max or avg");
    if (c.rank_by != "classifier" && c.rank_by != "decoder") {
        throw ConfigError("rank_by must be classifier or decoder");
    }
    if (c.diversity_source != "latent" && c.diversity_source != "decoder_hidden") {
        throw ConfigError("diversity_source must be latent or decoder_hidden");
    }
    if (c.t_mc < 1 || c.t_lrt < 1) throw ConfigError("t_mc and t_lrt must be >= 1");
    if (c.k_latent < 1) throw ConfigError("k_latent must be >= 1");
    if (c.lambda_ruam <= 0.0) throw ConfigError("lambda_ruam must be positive");
    if (c.max_grad_norm < 0.0) throw ConfigError("max_grad_norm must be >= 0");
    if (c.ruam_grad_clip < 0.0) throw ConfigError("ruam_grad_clip must be >= 0");
}

} // namespace

TrainConfig parse_config_text(const std::string& text) {
    TrainConfig c;
    std::istringstream is(text);
    std::string line;
    int line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        std::string s = trim(line);
        if (s.empty() || s[0] == '#') continue;
        size_t eq = s.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
        }
        std::string key = trim(s.substr(0, eq));
        std::string val = trim(s.substr(eq + 1));
        auto as_d = [&] {
            try {
                return std::stod(val);
            } catch (...) {
                throw ConfigError("config key " + key + ": bad number \"" + val + "\"");
            }
        };
        auto as_i = [&] { return static_cast<int>(as_d()); };

        if (key == "seed") c.seed = static_cast<std::uint64_t>(std::stoull(val));
        else if (key == "epochs") c.epochs = as_i();
        else if (key == "lr") c.lr = as_d();
        else if (key == "eta") c.eta = as_d();
        else if (key == "loss_flags") c.loss_flags = parse_flags(val);
        else if (key == "dropout_conv") c.dropout_conv = parse_double_list(val, key);
        else if (key == "dropout_fc") c.dropout_fc = as_d();
        else if (key == "dropout_lstm_input") c.dropout_lstm_input = as_d();
        else if (key == "dropout_lstm_hidden") c.dropout_lstm_hidden = as_d();
        else if (key == "dropout_lstm_output") c.dropout_lstm_output = as_d();
        else if (key == "dropout_placement") c.dropout_placement = val;
        else if (key == "pool") c.pool = val;
        else if (key == "t_mc") c.t_mc = as_i();
        else if (key == "t_lrt") c.t_lrt = as_i();
        else if (key == "k_latent") c.k_latent = as_i();
        else if (key == "lambda_ruam") c.lambda_ruam = as_d();
        else if (key == "gamma_neg") c.gamma_neg = as_d();
        else if (key == "ruam_grad_clip") c.ruam_grad_clip = as_d();
        else if (key == "ruam_enabled") c.ruam_enabled = parse_bool(val, key);
        else if (key == "ruam_renormalize") c.ruam_renormalize = parse_bool(val, key);
        else if (key == "ruam_feeds_latent") c.ruam_feeds_latent = parse_bool(val, key);
        else if (key == "ruam_at_eval") c.ruam_at_eval = parse_bool(val, key);
        else if (key == "udl_literal") c.udl_literal = parse_bool(val, key);
        else if (key == "mc_eval_dropout") c.mc_eval_dropout = parse_bool(val, key);
        else if (key == "data_fraction") c.data_fraction = as_d();
        else if (key == "noise_gamma") c.noise_gamma = as_d();
        else if (key == "batch_size") c.batch_size = as_i();
        else if (key == "train_dialogs") c.train_dialogs = as_i();
        else if (key == "val_dialogs") c.val_dialogs = as_i();
        else if (key == "rounds") c.rounds = as_i();
        else if (key == "num_candidates") c.num_candidates = as_i();
        else if (key == "ambiguity") c.ambiguity = as_d();
        else if (key == "emb_dim") c.emb_dim = as_i();
        else if (key == "lstm_hidden") c.lstm_hidden = as_i();
        else if (key == "attn_dim") c.attn_dim = as_i();
        else if (key == "z_dim") c.z_dim = as_i();
        else if (key == "trunk_hidden") c.trunk_hidden = as_i();
        else if (key == "div_weight") c.div_weight = as_d();
        else if (key == "rank_by") c.rank_by = val;
        else if (key == "diversity_dialogs") c.diversity_dialogs = as_i();
        else if (key == "diversity_samples") c.diversity_samples = as_i();
        else if (key == "diversity_source") c.diversity_source = val;
        else if (key == "attention_dump_dialogs") c.attention_dump_dialogs = as_i();
        else if (key == "max_grad_norm") c.max_grad_norm = as_d();
        else if (key == "aleatoric_warmup_epochs") c.aleatoric_warmup_epochs = as_i();
        else if (key == "var_bias_init") c.var_bias_init = as_d();
        else throw ConfigError("unknown config key: " + key);
    }
    if (const char* env = std::getenv("UQRANK_SEED")) {
        c.seed = static_cast<std::uint64_t>(std::stoull(env));
    }
    validate(c);
    return c;
}

TrainConfig parse_config_file(const std::string& path) {
    if (path.empty()) return parse_config_text("");
    std::ifstream is(path);
    if (!is) throw IoError("cannot open config file " + path);
    std::stringstream ss;
    ss << is.rdbuf();
    return parse_config_text(ss.str());
}

std::string config_to_text(const TrainConfig& c) {
    std::ostringstream os;
    os << "seed = " << c.seed << '\n';
    os << "epochs = " << c.epochs << '\n';
    os << "lr = " << format_double(c.lr) << '\n';
    os << "eta = " << format_double(c.eta) << '\n';
    os << "loss_flags = " << flags_to_string(c.loss_flags) << '\n';
    os << "dropout_conv = ";
    for (size_t i = 0; i < c.dropout_conv.size(); ++i) {
        if (i) os << ',';
        os << format_double(c.dropout_conv[i]);
    }
    os << '\n';
    os << "dropout_fc = " << format_double(c.dropout_fc) << '\n';
    os << "dropout_lstm_input = " << format_double(c.dropout_lstm_input) << '\n';
    os << "dropout_lstm_hidden = " << format_double(c.dropout_lstm_hidden) << '\n';
    os << "dropout_lstm_output = " << format_double(c.dropout_lstm_output) << '\n';
    os << "dropout_placement = " << c.dropout_placement << '\n';
    os << "pool = " << c.pool << '\n';
    os << "t_mc = " << c.t_mc << '\n';
    os << "t_lrt = " << c.t_lrt << '\n';
    os << "k_latent = " << c.k_latent << '\n';
    os << "lambda_ruam = " << format_double(c.lambda_ruam) << '\n';
    os << "gamma_neg = " << format_double(c.gamma_neg) << '\n';
    os << "ruam_grad_clip = " << format_double(c.ruam_grad_clip) << '\n';
    os << "ruam_enabled = " << (c.ruam_enabled ? "true" : "false") << '\n';
    os << "ruam_renormalize = " << (c.ruam_renormalize ? "true" : "false") << '\n';
    os << "ruam_feeds_latent = " << (c.ruam_feeds_latent ? "true" : "false") << '\n';
    os << "ruam_at_eval = " << (c.ruam_at_eval ? "true" : "false") << '\n';
    os << "udl_literal = " << (c.udl_literal ? "true" : "false") << '\n';
    os << "mc_eval_dropout = " << (c.mc_eval_dropout ? "true" : "false") << '\n';
    os << "data_fraction = " << format_double(c.data_fraction) << '\n';
    os << "noise_gamma = " << format_double(c.noise_gamma) << '\n';
    os << "batch_size = " << c.batch_size << '\n';
    os << "train_dialogs = " << c.train_dialogs << '\n';
    os << "val_dialogs = " << c.val_dialogs << '\n';
    os << "rounds = " << c.rounds << '\n';
    os << "num_candidates = " << c.num_candidates << '\n';
    os << "ambiguity = " << format_double(c.ambiguity) << '\n';
    os << "emb_dim = " << c.emb_dim << '\n';
    os << "lstm_hidden = " << c.lstm_hidden << '\n';
    os << "attn_dim = " << c.attn_dim << '\n';
    os << "z_dim = " << c.z_dim << '\n';
    os << "trunk_hidden = " << c.trunk_hidden << '\n';
    os << "div_weight = " << format_double(c.div_weight) << '\n';
    os << "rank_by = " << c.rank_by << '\n';
    os << "diversity_dialogs = " << c.diversity_dialogs << '\n';
    os << "diversity_samples = " << c.diversity_samples << '\n';
    os << "diversity_source = " << c.diversity_source << '\n';
    os << "attention_dump_dialogs = " << c.attention_dump_dialogs << '\n';
    os << "max_grad_norm = " << format_double(c.max_grad_norm) << '\n';
    os << "aleatoric_warmup_epochs = " << c.aleatoric_warmup_epochs << '\n';
    os << "var_bias_init = " << format_double(c.var_bias_init) << '\n';
    return os.str();
}

model::ModelConfig model_config_from(const TrainConfig& c, int vocab_size, int num_classes) {
    model::ModelConfig m;
    m.vocab_size = vocab_size;
    m.num_classes = num_classes;
    m.emb_dim = c.emb_dim;
    m.lstm_hidden = c.lstm_hidden;
    m.attn_dim = c.attn_dim;
    m.z_dim = c.z_dim;
    m.trunk_hidden = c.trunk_hidden;
    m.dropout_conv = c.dropout_conv;
    m.dropout_conv.resize(m.conv_channels.size(),
                          c.dropout_conv.empty() ? 0.0 : c.dropout_conv.back());
    m.dropout_fc = c.dropout_fc;
    m.lstm_dropout = {c.dropout_lstm_input, c.dropout_lstm_hidden, c.dropout_lstm_output};
    m.placement = (c.dropout_placement == "before_layer") ? bayes::DropoutPlacement::BeforeLayer
                                                          : bayes::DropoutPlacement::AfterMaxPool;
    m.pool = (c.pool == "avg") ? bayes::PoolKind::Avg : bayes::PoolKind::Max;
    m.flags = c.loss_flags;
    m.eta = c.eta;
    m.div_weight = c.div_weight;
    m.t_lrt = c.t_lrt;
    m.k_latent = c.k_latent;
    m.lambda_ruam = c.lambda_ruam;
    m.gamma_neg = c.gamma_neg;
    m.ruam_enabled = c.ruam_enabled;
    m.ruam_grad_clip = c.ruam_grad_clip;
    m.ruam_renormalize = c.ruam_renormalize;
    m.ruam_feeds_latent = c.ruam_feeds_latent;
    m.udl_literal = c.udl_literal;
    m.variance_bias_init = c.var_bias_init;
    return m;
}

data::SyntheticTaskSpec synthetic_spec_from(const TrainConfig& c, bool val_split) {
    data::SyntheticTaskSpec s;
    s.seed = val_split ? c.seed + 1000003ULL : c.seed;
    s.num_dialogs = val_split ? c.val_dialogs : c.train_dialogs;
    s.rounds_per_dialog = c.rounds;
    s.num_candidates = c.num_candidates;
    s.ambiguity = c.ambiguity;
    return s;
}

// ---------------------------------------------------------------------------
// Datasets
// ---------------------------------------------------------------------------

Datasets make_datasets(const TrainConfig& cfg) {
    Datasets ds;
    auto train_recs = data::gen_synthetic(synthetic_spec_from(cfg, false));
    auto val_recs = data::gen_synthetic(synthetic_spec_from(cfg, true));
    ds.vocab = data::build_vocab(train_recs, 5);
    ds.classes = data::build_answer_classes(train_recs);
    auto encode_all = [&](const std::vector<data::DialogRecord>& recs) {
        std::vector<data::EncodedDialog> out;
        out.reserve(recs.size());
        for (const auto& r : recs) out.push_back(data::encode_dialog(r, ds.vocab, ds.classes));
        return out;
    };
    ds.train = encode_all(train_recs);
    ds.val = encode_all(val_recs);
    return ds;
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

void Adam::step(ParamBank& bank) {
    if (m.empty()) {
        m.resize(bank.count());
        v.resize(bank.count());
        for (int i = 0; i < bank.count(); ++i) {
            m[i].assign(bank.at(i).value.size(), 0.0);
            v[i].assign(bank.at(i).value.size(), 0.0);
        }
    }
    ++t;
    double bc1 = 1.0 - std::pow(beta1, t);
    double bc2 = 1.0 - std::pow(beta2, t);
    for (int i = 0; i < bank.count(); ++i) {
        Param& p = bank.at(i);
        for (size_t j = 0; j < p.value.size(); ++j) {
            double g = p.grad[j];
            m[i][j] = beta1 * m[i][j] + (1.0 - beta1) * g;
            v[i][j] = beta2 * v[i][j] + (1.0 - beta2) * g * g;
            double mh = m[i][j] / bc1;
            double vh = v[i][j] / bc2;
            p.value[j] -= lr * mh / (std::sqrt(vh) + eps);
        }
    }
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

namespace {

struct ComponentAccum {
    std::map<std::string, double> sums;
    std::map<std::string, int> counts;

    void add(const std::string& name, double value) {
        sums[name] += value;
        counts[name] += 1;
    }
    std::map<std::string, double> means() const {
        std::map<std::string, double> out;
        for (const auto& [k, s] : sums) out[k] = s / std::max(counts.at(k), 1);
        return out;
    }
};

double value_of(const Tensor& t) { return t.valid() ? t.scalar() : 0.0; }

double mean_of(const std::vector<double>& v) {
    if (v.empty()) return 0.0;
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

} // namespace

TrainOutput train_on(const TrainConfig& cfg, const Datasets& ds) {
    validate(cfg);
    auto t_start = std::chrono::steady_clock::now();

    // data_fraction trims a deterministic prefix of the train split
    std::vector<data::EncodedDialog> train_set = ds.train;
    int keep = static_cast<int>(std::lround(train_set.size() * cfg.data_fraction));
    keep = std::max(1, std::min<int>(keep, static_cast<int>(train_set.size())));
    train_set.resize(keep);

    TrainOutput out;
    out.vocab = ds.vocab;
    out.classes = ds.classes;
    model::ModelConfig mc = model_config_from(cfg, ds.vocab.size(), ds.classes.size());
    RngStream seed_stream(cfg.seed);
    out.network = model::build_network(mc, seed_stream.substream(1).next_u64());

    Adam opt(cfg.lr);
    RngStream train_rng = seed_stream.substream(2);

    auto batches = data::truncate_and_batch(train_set, data::TruncationLimits{}, cfg.batch_size);

    ExperimentResult& res = out.result;
    res.run_id = "run-" + std::to_string(cfg.seed);

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        // deterministic per-epoch shuffle of batch order and dialog order
        RngStream order_rng = train_rng.substream(10000 + epoch);
        std::vector<int> batch_order(batches.size());
        std::iota(batch_order.begin(), batch_order.end(), 0);
        for (int i = static_cast<int>(batch_order.size()) - 1; i > 0; --i) {
            std::swap(batch_order[i], batch_order[order_rng.next_below(i + 1)]);
        }

        ComponentAccum acc;
        for (int bi : batch_order) {
            const auto& batch = batches[bi];
            int batch_rounds = 0;
            for (const auto& d : batch.dialogs) batch_rounds += static_cast<int>(d.rounds.size());
            if (batch_rounds == 0) continue;

            out.network.bank.zero_grads();
            for (const auto& dialog : batch.dialogs) {
                Tape tape;
                ParamMap pm(tape, out.network.bank);
                RngStream drng = train_rng.substream(
                    (static_cast<std::uint64_t>(epoch) << 32) ^
                    static_cast<std::uint64_t>(dialog.dialog_id + 1));
                model::ForwardOptions fo;
                model::LossFlags warm = cfg.loss_flags;
                if (epoch <= cfg.aleatoric_warmup_epochs) {
                    warm.gce = warm.ve = warm.udl = false;
                    if (!warm.any()) warm = cfg.loss_flags; // nothing left: skip warmup
                    fo.flags_override = &warm;
                }
                auto comp = model::forward_dialog(out.network, tape, pm, dialog, drng, fo);

                for (const auto& rc : comp.rounds) {
                    acc.add("ce_class", value_of(rc.l_y_class));
                    acc.add("ce_token", value_of(rc.l_y_token));
                    if (rc.l_kl.valid()) acc.add("kl", rc.l_kl.scalar());
                    if (rc.l_div.valid()) acc.add("div", rc.l_div.scalar());
                    if (rc.l_gce.valid()) acc.add("gce", rc.l_gce.scalar());
                    if (rc.l_ve.valid()) acc.add("ve", rc.l_ve.scalar());
                    if (rc.l_udl.valid()) acc.add("udl", rc.l_udl.scalar());
                    acc.add("variance", mean_of(rc.sigma_sq_final.value()));
                }
                acc.add("total", comp.total.scalar() /
                                     std::max<size_t>(comp.rounds.size(), 1));

                tape.zero_grads();
                tape.backward(comp.total);
                pm.harvest(1.0 / batch_rounds);
            }
            for (const auto& [name, s] : acc.sums) {
                if (!std::isfinite(s)) {
                    throw NumericError("non-finite " + name + " loss at epoch " +
                                       std::to_string(epoch));
                }
            }
            if (cfg.max_grad_norm > 0.0) {
                double norm_sq = 0.0;
                for (int i = 0; i < out.network.bank.count(); ++i) {
                    for (double g : out.network.bank.at(i).grad) norm_sq += g * g;
                }
                double norm = std::sqrt(norm_sq);
                if (norm > cfg.max_grad_norm) {
                    double scale = cfg.max_grad_norm / norm;
                    for (int i = 0; i < out.network.bank.count(); ++i) {
                        for (double& g : out.network.bank.at(i).grad) g *= scale;
                    }
                }
            }
            opt.step(out.network.bank);
        }

        EpochLog log;
        log.epoch = epoch;
        log.components = acc.means();
        res.epochs.push_back(std::move(log));
    }

    ExperimentResult eval_res = evaluate(out.network, cfg, ds, res.run_id);
    res.metrics = eval_res.metrics;
    res.round_reports = std::move(eval_res.round_reports);
    res.attention = std::move(eval_res.attention);

    res.wall_clock_sec =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    return out;
}

TrainOutput train(const TrainConfig& cfg) {
    return train_on(cfg, make_datasets(cfg));
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

ExperimentResult evaluate(const model::Network& net, const TrainConfig& cfg, const Datasets& ds,
                          const std::string& run_id) {
    ExperimentResult res;
    res.run_id = run_id;
    RngStream eval_rng = RngStream(cfg.seed).substream(3);

    // noise applied to a copy of the val split when configured
    std::vector<data::EncodedDialog> val = ds.val;
    // batching applies the truncation limits to eval data too
    {
        auto batches = data::truncate_and_batch(val, data::TruncationLimits{}, 1 << 20);
        val.clear();
        for (auto& b : batches)
            for (auto& d : b.dialogs) val.push_back(std::move(d));
    }
    if (cfg.noise_gamma != 1.0) {
        RngStream noise_rng = eval_rng.substream(99);
        for (auto& d : val) {
            data::apply_noise_encoded(d, cfg.noise_gamma, ds.vocab.size(), noise_rng);
        }
    }

    model::EvalOptions eo;
    eo.t_mc = cfg.t_mc;
    eo.mc_dropout = cfg.mc_eval_dropout;
    eo.rank_by = model::parse_rank_by(cfg.rank_by);
    eo.with_ruam = cfg.ruam_at_eval;

    std::vector<metrics::RankedList> lists;
    std::vector<double> ndcgs, ale, epi;
    int dumped = 0;
    for (const auto& dialog : val) {
        RngStream drng = eval_rng.substream(static_cast<std::uint64_t>(dialog.dialog_id) + 1);
        auto rounds = model::eval_dialog(net, dialog, eo, drng);
        for (size_t r = 0; r < rounds.size(); ++r) {
            const auto& round = dialog.rounds[r];
            metrics::RankedList list;
            list.scores = rounds[r].candidate_scores;
            list.gt_index = round.gt_index;
            list.relevance = round.relevance;
            if (list.relevance.empty()) {
                list.relevance.assign(list.scores.size(), 0.0);
                list.relevance[round.gt_index] = 1.0;
            }
            ndcgs.push_back(metrics::ndcg(list));
            lists.push_back(list);

            res.round_reports.push_back({dialog.dialog_id, static_cast<int>(r), rounds[r].report});
            ale.push_back(rounds[r].report.aleatoric_mean);
            epi.push_back(rounds[r].report.epistemic_var);

            if (dumped < cfg.attention_dump_dialogs) {
                AttentionDump dump;
                dump.name = "alpha_d" + std::to_string(dialog.dialog_id) + "_r" + std::to_string(r);
                int cells = static_cast<int>(rounds[r].alpha.size());
                int side = static_cast<int>(std::lround(std::sqrt(cells)));
                dump.u = (side * side == cells) ? side : 1;
                dump.v = cells / std::max(dump.u, 1);
                dump.values = rounds[r].alpha;
                res.attention.push_back(std::move(dump));
            }
        }
        if (dumped < cfg.attention_dump_dialogs) ++dumped;
    }

    auto rm = metrics::retrieval_metrics(lists);
    MetricsRow& row = res.metrics;
    row.run_id = run_id;
    row.r1 = rm.recall_at[1];
    row.r5 = rm.recall_at[5];
    row.r10 = rm.recall_at[10];
    row.mrr = rm.mrr;
    row.mean_rank = rm.mean_rank;
    row.ndcg = mean_of(ndcgs);

    auto mean_std = [](const std::vector<double>& v) {
        double m = mean_of(v);
        double s2 = 0.0;
        for (double x : v) s2 += (x - m) * (x - m);
        double sd = v.size() > 1 ? std::sqrt(s2 / (v.size() - 1)) : 0.0;
        return std::make_pair(m, sd);
    };
    std::tie(row.aleatoric_mean, row.aleatoric_std) = mean_std(ale);
    std::tie(row.epistemic_mean, row.epistemic_std) = mean_std(epi);

    // diversity: sigma_o averaged over the first diversity_dialogs val dialogs
    int n_div = std::min<int>(cfg.diversity_dialogs, static_cast<int>(val.size()));
    if (n_div > 0 && cfg.diversity_samples > 0) {
        double acc = 0.0;
        bool from_hidden = cfg.diversity_source == "decoder_hidden";
        for (int i = 0; i < n_div; ++i) {
            RngStream drng = eval_rng.substream(500000 + i);
            auto a = model::latent_matrix(net, val[i], cfg.diversity_samples, from_hidden, drng);
            int cols = static_cast<int>(a.size()) / cfg.diversity_samples;
            acc += metrics::svd_diversity(a, cfg.diversity_samples, cols);
        }
        row.sigma_o = acc / n_div;
    }
    return res;
}

// ---------------------------------------------------------------------------
// Ablations
// ---------------------------------------------------------------------------

std::vector<std::string> ablate_modes() {
    return {"losses", "noise", "data-fraction", "dropout-placement"};
}

std::vector<AblationRow> ablate(const TrainConfig& cfg, const std::string& mode) {
    std::vector<AblationRow> rows;
    if (mode == "losses") {
        Datasets ds = make_datasets(cfg);
        struct Variant {
            const char* label;
            bool ce, ve, gce;
        };
        const Variant variants[] = {
            {"CE", true, false, false},    {"VE", false, true, false},
            {"GCE", false, false, true},   {"CE+VE", true, true, false},
            {"VE+GCE", false, true, true}, {"CE+GCE", true, false, true},
            {"ACE", true, true, true},
        };
        for (const auto& v : variants) {
            TrainConfig c = cfg;
            c.loss_flags.ce = v.ce;
            c.loss_flags.ve = v.ve;
            c.loss_flags.gce = v.gce;
            c.loss_flags.udl = false; // the aleatoric-variant family of Table 1
            auto out = train_on(c, ds);
            rows.push_back({v.label, out.result.metrics});
        }
    } else if (mode == "noise") {
        Datasets ds = make_datasets(cfg);
        TrainConfig base = cfg;
        base.noise_gamma = 1.0;
        auto out = train_on(base, ds);
        for (double gamma : {0.8, 1.0, 1.2}) {
            TrainConfig c = base;
            c.noise_gamma = gamma;
            auto res = evaluate(out.network, c, ds, "noise-" + format_double(gamma));
            rows.push_back({format_double(gamma), res.metrics});
        }
    } else if (mode == "data-fraction") {
        Datasets ds = make_datasets(cfg);
        for (double fr : {0.5, 0.75, 1.0}) {
            TrainConfig c = cfg;
            c.data_fraction = fr;
            auto out = train_on(c, ds);
            rows.push_back({format_double(fr), out.result.metrics});
        }
    } else if (mode == "dropout-placement") {
        Datasets ds = make_datasets(cfg);
        struct Variant {
            const char* label;
            const char* placement;
            const char* pool;
            bool dropout;
        };
        const Variant variants[] = {
            {"before_layer+max", "before_layer", "max", true},
            {"after_max_pool+max", "after_max_pool", "max", true},
            {"before_layer+avg", "before_layer", "avg", true},
            {"after_max_pool+avg", "after_max_pool", "avg", true},
            {"no_dropout+max", "after_max_pool", "max", false},
        };
        for (const auto& v : variants) {
            TrainConfig c = cfg;
            c.dropout_placement = v.placement;
            c.pool = v.pool;
            if (!v.dropout) {
                c.dropout_conv.assign(c.dropout_conv.size(), 0.0);
            }
            auto out = train_on(c, ds);
            rows.push_back({v.label, out.result.metrics});
        }
    } else {
        throw UsageError("unknown ablation mode: " + mode +
                         " (expected losses|noise|data-fraction|dropout-placement)");
    }
    return rows;
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

namespace {

std::ofstream open_out(const fs::path& path) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot open " + path.string() + " for writing");
    return os;
}

} // namespace

void report(const ExperimentResult& result, const std::string& out_dir) {
    fs::create_directories(out_dir);
    fs::path dir(out_dir);

    {
        auto os = open_out(dir / "metrics.csv");
        os << "run_id,R1,R5,R10,MRR,mean_rank,NDCG,sigma_o\n";
        const MetricsRow& m = result.metrics;
        os << m.run_id << ',' << format_double(m.r1) << ',' << format_double(m.r5) << ','
           << format_double(m.r10) << ',' << format_double(m.mrr) << ','
           << format_double(m.mean_rank) << ',' << format_double(m.ndcg) << ','
           << format_double(m.sigma_o) << '\n';
    }
    {
        auto os = open_out(dir / "uncertainty.csv");
        os << "dialog_id,round,entropy,aleatoric,epistemic,sigma2_p\n";
        for (const auto& r : result.round_reports) {
            os << r.dialog_id << ',' << r.round << ',' << format_double(r.report.entropy) << ','
               << format_double(r.report.aleatoric_mean) << ','
               << format_double(r.report.epistemic_var) << ','
               << format_double(r.report.sigma_sq_p) << '\n';
        }
    }
    {
        auto os = open_out(dir / "loss_curves.csv");
        os << "epoch,component,value\n";
        for (const auto& e : result.epochs) {
            for (const auto& [name, value] : e.components) {
                os << e.epoch << ',' << name << ',' << format_double(value) << '\n';
            }
        }
    }
    if (!result.attention.empty()) {
        fs::create_directories(dir / "attention");
        for (const auto& dump : result.attention) {
            auto os = open_out(dir / "attention" / (dump.name + ".txt"));
            os << dump.u << ' ' << dump.v << '\n';
            for (int i = 0; i < dump.u; ++i) {
                for (int j = 0; j < dump.v; ++j) {
                    os << format_double(dump.values[static_cast<size_t>(i) * dump.v + j]);
                    os << (j + 1 == dump.v ? '\n' : ' ');
                }
            }
        }
    }
    {
        auto os = open_out(dir / "summary.txt");
        const MetricsRow& m = result.metrics;
        os << "run: " << m.run_id << '\n';
        os << "epochs: " << result.epochs.size() << '\n';
        os << "R@1 " << m.r1 << "  R@5 " << m.r5 << "  R@10 " << m.r10 << '\n';
        os << "MRR " << m.mrr << "  mean rank " << m.mean_rank << "  NDCG " << m.ndcg << '\n';
        os << "sigma_o " << m.sigma_o << '\n';
        os << "aleatoric " << m.aleatoric_mean << " +- " << m.aleatoric_std << '\n';
        os << "epistemic " << m.epistemic_mean << " +- " << m.epistemic_std << '\n';
        os << "wall_clock_sec " << result.wall_clock_sec << '\n';
    }
}

void report_table(const std::vector<AblationRow>& rows, const std::string& mode,
                  const std::string& out_dir) {
    fs::create_directories(out_dir);
    fs::path dir(out_dir);
    auto os = open_out(dir / ("ablation_" + mode + ".csv"));
    if (mode == "losses" || mode == "dropout-placement") {
        os << (mode == "losses" ? "loss" : "variant") << ",R1,R5,R10,MRR,Mean\n";
        for (const auto& r : rows) {
            os << r.label << ',' << format_double(r.metrics.r1) << ','
               << format_double(r.metrics.r5) << ',' << format_double(r.metrics.r10) << ','
               << format_double(r.metrics.mrr) << ',' << format_double(r.metrics.mean_rank)
               << '\n';
        }
    } else if (mode == "noise") {
        os << "gamma,aleatoric_mean,aleatoric_std,epistemic_mean,epistemic_std\n";
        for (const auto& r : rows) {
            os << r.label << ',' << format_double(r.metrics.aleatoric_mean) << ','
               << format_double(r.metrics.aleatoric_std) << ','
               << format_double(r.metrics.epistemic_mean) << ','
               << format_double(r.metrics.epistemic_std) << '\n';
        }
    } else {
        os << "fraction,epistemic_mean,epistemic_std,aleatoric_mean,aleatoric_std\n";
        for (const auto& r : rows) {
            os << r.label << ',' << format_double(r.metrics.epistemic_mean) << ','
               << format_double(r.metrics.epistemic_std) << ','
               << format_double(r.metrics.aleatoric_mean) << ','
               << format_double(r.metrics.aleatoric_std) << '\n';
        }
    }
}

void write_model_dir(const TrainOutput& out, const TrainConfig& cfg, const std::string& dir) {
    fs::create_directories(dir);
    fs::path d(dir);
    out.network.bank.save((d / "model.txt").string());
    open_out(d / "config.txt") << config_to_text(cfg);
    {
        auto os = open_out(d / "vocab.txt");
        for (const auto& w : out.vocab.words) os << w << '\n';
    }
    {
        auto os = open_out(d / "classes.txt");
        for (const auto& c : out.classes.classes) os << c << '\n';
    }
}

LoadedModel load_model_dir(const std::string& dir) {
    fs::path d(dir);
    if (!fs::exists(d / "model.txt")) {
        throw IoError("no model.txt under " + dir);
    }
    LoadedModel lm;
    lm.cfg = parse_config_file((d / "config.txt").string());
    {
        std::ifstream is(d / "vocab.txt");
        if (!is) throw IoError("cannot open " + (d / "vocab.txt").string());
        std::string line;
        while (std::getline(is, line)) {
            if (!line.empty()) lm.vocab.words.push_back(line);
        }
        for (int i = 0; i < static_cast<int>(lm.vocab.words.size()); ++i) {
            lm.vocab.by_word[lm.vocab.words[i]] = i;
        }
    }
    {
        std::ifstream is(d / "classes.txt");
        if (!is) throw IoError("cannot open " + (d / "classes.txt").string());
        std::string line;
        while (std::getline(is, line)) {
            if (!line.empty()) lm.classes.classes.push_back(line);
        }
        for (int i = 0; i < static_cast<int>(lm.classes.classes.size()); ++i) {
            lm.classes.by_name[lm.classes.classes[i]] = i;
        }
    }
    model::ModelConfig mc = model_config_from(lm.cfg, lm.vocab.size(), lm.classes.size());
    lm.network = model::build_network(mc, 0);
    lm.network.bank.load((d / "model.txt").string());
    return lm;
}

// ---------------------------------------------------------------------------
// SVG plot of the loss curves
// ---------------------------------------------------------------------------

void plot(const std::string& dir) {
    fs::path d(dir);
    std::ifstream is(d / "loss_curves.csv");
    if (!is) throw IoError("cannot open " + (d / "loss_curves.csv").string());
    std::string line;
    std::getline(is, line); // header
    std::map<std::string, std::vector<std::pair<int, double>>> series;
    int max_epoch = 0;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string epoch_s, comp, value_s;
        std::getline(ls, epoch_s, ',');
        std::getline(ls, comp, ',');
        std::getline(ls, value_s, ',');
        int epoch = std::stoi(epoch_s);
        series[comp].push_back({epoch, std::stod(value_s)});
        max_epoch = std::max(max_epoch, epoch);
    }
    if (series.empty()) throw UsageError("loss_curves.csv holds no rows to plot");

    double lo = 1e300, hi = -1e300;
    for (const auto& [name, points] : series) {
        for (const auto& [e, v] : points) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    }
    if (hi <= lo) hi = lo + 1.0;

    const int width = 860, height = 520, margin = 60;
    auto sx = [&](double epoch) {
        return margin + (epoch - 1.0) / std::max(max_epoch - 1, 1) * (width - 2 * margin);
    };
    auto sy = [&](double v) {
        return height - margin - (v - lo) / (hi - lo) * (height - 2 * margin);
    };
    const char* palette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                             "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

    auto os = open_out(d / "loss_curves.svg");
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
       << height << "\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    os << "<line x1=\"" << margin << "\" y1=\"" << height - margin << "\" x2=\"" << width - margin
       << "\" y2=\"" << height - margin << "\" stroke=\"black\"/>\n";
    os << "<line x1=\"" << margin << "\" y1=\"" << margin << "\" x2=\"" << margin << "\" y2=\""
       << height - margin << "\" stroke=\"black\"/>\n";
    os << "<text x=\"" << width / 2 << "\" y=\"" << height - margin / 3
       << "\" text-anchor=\"middle\" font-size=\"13\">epoch</text>\n";
    for (int tick = 0; tick <= 4; ++tick) {
        double v = lo + (hi - lo) * tick / 4.0;
        os << "<text x=\"" << margin - 6 << "\" y=\"" << sy(v) + 4
           << "\" text-anchor=\"end\" font-size=\"11\">" << v << "</text>\n";
    }
    int idx = 0;
    for (const auto& [name, points] : series) {
        const char* color = palette[idx % 10];
        os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
        for (const auto& [e, v] : points) os << sx(e) << ',' << sy(v) << ' ';
        os << "\"/>\n";
        os << "<text x=\"" << width - margin + 4 << "\" y=\"" << margin + 16 * idx
           << "\" font-size=\"11\" fill=\"" << color << "\">" << name << "</text>\n";
        ++idx;
    }
    os << "</svg>\n";
}

} // namespace uqr::train
