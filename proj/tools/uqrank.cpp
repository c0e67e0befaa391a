// uqrank: train, evaluate and ablate the uncertainty-aware answer-ranking
// model on the synthetic dialog task, and manage its datasets.

#include <cstdio>
#include <exception>
#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "uqr/data.hpp"
#include "uqr/serialize.hpp"
#include "uqr/train.hpp"

namespace fs = std::filesystem;
using namespace uqr;

namespace {

train::TrainConfig load_config(const std::string& path) {
    return train::parse_config_file(path);
}

void print_metrics(const train::MetricsRow& m) {
    std::printf("run_id,R1,R5,R10,MRR,mean_rank,NDCG,sigma_o\n");
    std::printf("%s,%s,%s,%s,%s,%s,%s,%s\n", m.run_id.c_str(), format_double(m.r1).c_str(),
                format_double(m.r5).c_str(), format_double(m.r10).c_str(),
                format_double(m.mrr).c_str(), format_double(m.mean_rank).c_str(),
                format_double(m.ndcg).c_str(), format_double(m.sigma_o).c_str());
    std::printf("aleatoric %s +- %s | epistemic %s +- %s\n",
                format_double(m.aleatoric_mean).c_str(), format_double(m.aleatoric_std).c_str(),
                format_double(m.epistemic_mean).c_str(), format_double(m.epistemic_std).c_str());
}

// --data accepts a dialogs.json (sidecar images.bin next to it) or a
// directory holding train.json/val.json pairs written by `gen`.
std::vector<data::DialogRecord> load_records(const std::string& path) {
    fs::path p(path);
    if (fs::is_directory(p)) {
        fs::path json = fs::exists(p / "val.json") ? p / "val.json" : p / "train.json";
        if (!fs::exists(json)) throw IoError("no train.json or val.json under " + path);
        fs::path sidecar = json.parent_path() / (json.stem().string() + "_images.bin");
        return data::load_visdial_json(json.string(),
                                       fs::exists(sidecar) ? sidecar.string() : "");
    }
    fs::path sidecar = p.parent_path() / (p.stem().string() + "_images.bin");
    if (!fs::exists(sidecar)) sidecar = p.parent_path() / "images.bin";
    return data::load_visdial_json(path, fs::exists(sidecar) ? sidecar.string() : "");
}

train::Datasets datasets_from_records(const std::vector<data::DialogRecord>& records,
                                      const train::LoadedModel& lm) {
    train::Datasets ds;
    ds.vocab = lm.vocab;
    ds.classes = lm.classes;
    for (const auto& r : records) ds.val.push_back(data::encode_dialog(r, ds.vocab, ds.classes));
    return ds;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"uncertainty-aware visual dialog answer ranking"};
    app.require_subcommand(1);

    std::string config_path, out_dir, model_path, data_path, mode, in_dir, source;

    auto* gen = app.add_subcommand("gen", "generate the synthetic dataset files");
    gen->add_option("--spec", config_path, "config file (synthetic task keys)");
    gen->add_option("--out", out_dir, "output directory")->required();

    auto* tr = app.add_subcommand("train", "train a model and write reports");
    tr->add_option("--config", config_path, "config file");
    tr->add_option("--out", out_dir, "output directory")->required();

    auto* ev = app.add_subcommand("eval", "evaluate a trained model on a dataset");
    ev->add_option("--model", model_path, "model directory from train --out")->required();
    ev->add_option("--data", data_path, "dialogs.json or a gen output directory")->required();
    ev->add_option("--out", out_dir, "optional report directory");

    auto* ab = app.add_subcommand("ablate", "run an ablation study");
    ab->add_option("--mode", mode, "losses|noise|data-fraction|dropout-placement")->required();
    ab->add_option("--config", config_path, "config file");
    ab->add_option("--out", out_dir, "output directory")->required();

    auto* dv = app.add_subcommand("diversity", "latent diversity score of a trained model");
    dv->add_option("--model", model_path, "model directory")->required();
    dv->add_option("--data", data_path, "optional dataset (defaults to the config's val split)");
    dv->add_option("--source", source, "latent|decoder_hidden");

    auto* pl = app.add_subcommand("plot", "render loss_curves.csv to SVG");
    pl->add_option("--in", in_dir, "directory holding loss_curves.csv")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) {
            auto cfg = load_config(config_path);
            fs::create_directories(out_dir);
            auto train_recs = data::gen_synthetic(train::synthetic_spec_from(cfg, false));
            auto val_recs = data::gen_synthetic(train::synthetic_spec_from(cfg, true));
            fs::path dir(out_dir);
            data::write_visdial_json((dir / "train.json").string(), train_recs);
            data::write_image_sidecar((dir / "train_images.bin").string(), train_recs);
            data::write_visdial_json((dir / "val.json").string(), val_recs);
            data::write_image_sidecar((dir / "val_images.bin").string(), val_recs);
            std::printf("wrote %zu train / %zu val dialogs under %s\n", train_recs.size(),
                        val_recs.size(), out_dir.c_str());
        } else if (tr->parsed()) {
            auto cfg = load_config(config_path);
            auto out = train::train(cfg);
            train::report(out.result, out_dir);
            train::write_model_dir(out, cfg, out_dir);
            print_metrics(out.result.metrics);
            std::printf("reports written to %s\n", out_dir.c_str());
        } else if (ev->parsed()) {
            auto lm = train::load_model_dir(model_path);
            auto records = load_records(data_path);
            auto ds = datasets_from_records(records, lm);
            auto res = train::evaluate(lm.network, lm.cfg, ds, "eval");
            print_metrics(res.metrics);
            if (!out_dir.empty()) train::report(res, out_dir);
        } else if (ab->parsed()) {
            auto cfg = load_config(config_path);
            auto rows = train::ablate(cfg, mode);
            train::report_table(rows, mode, out_dir);
            std::printf("%zu rows written to %s/ablation_%s.csv\n", rows.size(), out_dir.c_str(),
                        mode.c_str());
        } else if (dv->parsed()) {
            auto lm = train::load_model_dir(model_path);
            if (!source.empty()) lm.cfg.diversity_source = source;
            train::Datasets ds;
            if (!data_path.empty()) {
                auto records = load_records(data_path);
                ds = datasets_from_records(records, lm);
            } else {
                ds = train::make_datasets(lm.cfg);
            }
            auto res = train::evaluate(lm.network, lm.cfg, ds, "diversity");
            std::printf("sigma_o,%s\n", format_double(res.metrics.sigma_o).c_str());
        } else if (pl->parsed()) {
            train::plot(in_dir);
            std::printf("wrote %s/loss_curves.svg\n", in_dir.c_str());
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
