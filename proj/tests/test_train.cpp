#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "uqr/train.hpp"

using namespace uqr;
using namespace uqr::train;

namespace {

TrainConfig tiny_config(std::uint64_t seed = 41) {
    TrainConfig c;
    c.seed = seed;
    c.train_dialogs = 20;
    c.val_dialogs = 8;
    c.epochs = 2;
    c.t_mc = 3;
    c.diversity_dialogs = 4;
    c.diversity_samples = 6;
    return c;
}

std::string slurp(const std::string& path) {
    std::ifstream is(path);
    REQUIRE(is.good());
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

} // namespace

TEST_CASE("config parsing: values, lists, flags, errors") {
    auto c = parse_config_text("epochs = 7\nlr = 0.001\nloss_flags = CE,KL\n"
                               "dropout_conv = 0.0,0.1,0.2\n# comment\n\npool = avg\n");
    CHECK(c.epochs == 7);
    CHECK(c.lr == 0.001);
    CHECK(c.loss_flags.ce);
    CHECK(c.loss_flags.kl);
    CHECK(!c.loss_flags.gce);
    CHECK(c.dropout_conv == std::vector<double>{0.0, 0.1, 0.2});
    CHECK(c.pool == "avg");

    CHECK_THROWS_AS(parse_config_text("bogus_key = 3\n"), ConfigError);
    CHECK_THROWS_AS(parse_config_text("epochs 7\n"), ConfigError);
    CHECK_THROWS_AS(parse_config_text("lr = -1\n"), ConfigError);
    CHECK_THROWS_AS(parse_config_text("loss_flags = NOPE\n"), ConfigError);
    CHECK_THROWS_AS(parse_config_text("data_fraction = 0.6\n"), ConfigError);
    CHECK_THROWS_AS(parse_config_text("rank_by = magic\n"), ConfigError);
}

TEST_CASE("config round-trips through its text form") {
    auto c = tiny_config();
    c.loss_flags.udl = false;
    c.noise_gamma = 0.8;
    auto c2 = parse_config_text(config_to_text(c));
    CHECK(config_to_text(c2) == config_to_text(c));
}

TEST_CASE("UQRANK_SEED overrides the config seed") {
    setenv("UQRANK_SEED", "9099", 1);
    auto c = parse_config_text("seed = 5\n");
    CHECK(c.seed == 9099);
    unsetenv("UQRANK_SEED");
    auto c2 = parse_config_text("seed = 5\n");
    CHECK(c2.seed == 5);
}

TEST_CASE("adam takes a gradient step against the gradient sign") {
    ParamBank bank;
    int p = bank.add("w", {2}, {1.0, -1.0});
    bank.at(p).grad = {0.5, -0.5};
    Adam opt(0.1);
    opt.step(bank);
    CHECK(bank.at(p).value[0] < 1.0);
    CHECK(bank.at(p).value[1] > -1.0);
    // magnitude on the first step is ~lr
    CHECK(std::abs(bank.at(p).value[0] - (1.0 - 0.1)) < 1e-6);
}

TEST_CASE("total cost composes exactly from its components") {
    auto cfg = tiny_config();
    auto ds = make_datasets(cfg);
    auto mc = model_config_from(cfg, ds.vocab.size(), ds.classes.size());
    auto net = model::build_network(mc, 99);

    for (int which : {0, 1}) {
        Tape tape;
        ParamMap pm(tape, net.bank);
        RngStream rng(17 + which);
        auto comp = model::forward_dialog(net, tape, pm, ds.train[which], rng, {});
        double expect = 0.0;
        for (const auto& rc : comp.rounds) {
            double l_u = 0.0;
            if (rc.l_gce.valid()) l_u += rc.l_gce.scalar();
            if (rc.l_ve.valid()) l_u += rc.l_ve.scalar();
            if (rc.l_udl.valid()) l_u += rc.l_udl.scalar();
            expect += rc.l_y_class.scalar() + rc.l_y_token.scalar() + rc.l_kl.scalar() +
                      cfg.div_weight * rc.l_div.scalar() + cfg.eta * l_u;
        }
        CHECK(comp.total.scalar() == doctest::Approx(expect).epsilon(1e-12));
    }
}

TEST_CASE("only-CE cost equals the CE components alone") {
    auto cfg = tiny_config();
    cfg.loss_flags = model::LossFlags{true, false, false, false, false, false};
    auto ds = make_datasets(cfg);
    auto mc = model_config_from(cfg, ds.vocab.size(), ds.classes.size());
    auto net = model::build_network(mc, 5);
    Tape tape;
    ParamMap pm(tape, net.bank);
    RngStream rng(3);
    auto comp = model::forward_dialog(net, tape, pm, ds.train[0], rng, {});
    double expect = 0.0;
    for (const auto& rc : comp.rounds) {
        expect += rc.l_y_class.scalar() + rc.l_y_token.scalar();
        CHECK(!rc.l_kl.valid());
        CHECK(!rc.l_gce.valid());
    }
    CHECK(comp.total.scalar() == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("eta = 0 sends no gradient into the variance head") {
    auto cfg = tiny_config();
    cfg.eta = 0.0;
    auto ds = make_datasets(cfg);
    auto mc = model_config_from(cfg, ds.vocab.size(), ds.classes.size());
    auto net = model::build_network(mc, 7);
    Tape tape;
    ParamMap pm(tape, net.bank);
    RngStream rng(3);
    auto comp = model::forward_dialog(net, tape, pm, ds.train[0], rng, {});
    tape.zero_grads();
    tape.backward(comp.total);
    pm.harvest(1.0);
    int wv = net.bank.index_of("heads.w_v");
    int bv = net.bank.index_of("heads.b_v");
    for (double g : net.bank.at(wv).grad) CHECK(g == 0.0);
    for (double g : net.bank.at(bv).grad) CHECK(g == 0.0);
    // while the logit head still learns
    int wy = net.bank.index_of("heads.w_y");
    bool any = false;
    for (double g : net.bank.at(wy).grad) any = any || g != 0.0;
    CHECK(any);
}

TEST_CASE("zero epochs returns the initial weights unchanged") {
    auto cfg = tiny_config();
    cfg.epochs = 0;
    auto ds = make_datasets(cfg);
    auto out = train_on(cfg, ds);
    auto mc = model_config_from(cfg, ds.vocab.size(), ds.classes.size());
    RngStream seed_stream(cfg.seed);
    auto fresh = model::build_network(mc, seed_stream.substream(1).next_u64());
    REQUIRE(out.network.bank.count() == fresh.bank.count());
    for (int i = 0; i < fresh.bank.count(); ++i) {
        CHECK(out.network.bank.at(i).value == fresh.bank.at(i).value);
    }
    CHECK(out.result.epochs.empty());
}

TEST_CASE("training is deterministic: identical configs, identical results") {
    auto a = train::train(tiny_config(77));
    auto b = train::train(tiny_config(77));
    CHECK(a.result.metrics.r1 == b.result.metrics.r1);
    CHECK(a.result.metrics.mrr == b.result.metrics.mrr);
    CHECK(a.result.metrics.sigma_o == b.result.metrics.sigma_o);
    CHECK(a.result.metrics.aleatoric_mean == b.result.metrics.aleatoric_mean);
    REQUIRE(a.result.epochs.size() == b.result.epochs.size());
    for (size_t e = 0; e < a.result.epochs.size(); ++e) {
        CHECK(a.result.epochs[e].components == b.result.epochs[e].components);
    }
    for (int i = 0; i < a.network.bank.count(); ++i) {
        CHECK(a.network.bank.at(i).value == b.network.bank.at(i).value);
    }
}

TEST_CASE("loss-flag isolation: disabling DIV leaves epoch-1 KL and CE unchanged") {
    auto cfg = tiny_config(55);
    cfg.epochs = 1;
    cfg.batch_size = cfg.train_dialogs; // one batch: epoch-1 stats precede any step
    auto ds = make_datasets(cfg);

    auto with_div = train_on(cfg, ds);
    cfg.loss_flags.div = false;
    auto without_div = train_on(cfg, ds);

    const auto& a = with_div.result.epochs[0].components;
    const auto& b = without_div.result.epochs[0].components;
    CHECK(a.at("kl") == b.at("kl"));
    CHECK(a.at("ce_class") == b.at("ce_class"));
    CHECK(a.at("ce_token") == b.at("ce_token"));
    CHECK(a.count("div") == 1);
    CHECK(b.count("div") == 0);
}

TEST_CASE("exploding learning rate aborts with the offending component named") {
    auto cfg = tiny_config(60);
    cfg.lr = 1e9;
    cfg.epochs = 4;
    CHECK_THROWS_AS(train::train(cfg), NumericError);
}

TEST_CASE("report writes the spec'd CSV schemas and plot renders") {
    auto cfg = tiny_config(62);
    auto out = train::train(cfg);
    std::string dir = "/tmp/uqr_test_report";
    std::filesystem::remove_all(dir);
    report(out.result, dir);
    write_model_dir(out, cfg, dir);

    auto metrics = slurp(dir + "/metrics.csv");
    CHECK(metrics.rfind("run_id,R1,R5,R10,MRR,mean_rank,NDCG,sigma_o\n", 0) == 0);
    auto unc_csv = slurp(dir + "/uncertainty.csv");
    CHECK(unc_csv.rfind("dialog_id,round,entropy,aleatoric,epistemic,sigma2_p\n", 0) == 0);
    auto curves = slurp(dir + "/loss_curves.csv");
    CHECK(curves.rfind("epoch,component,value\n", 0) == 0);
    // one row per epoch per component
    int rows = 0;
    for (char ch : curves) rows += ch == '\n';
    CHECK(rows == 1 + 2 * static_cast<int>(out.result.epochs[0].components.size()));

    // attention maps carry the grid header
    bool found_attention = false;
    for (const auto& entry : std::filesystem::directory_iterator(dir + "/attention")) {
        auto text = slurp(entry.path().string());
        CHECK(text.rfind("4 4\n", 0) == 0);
        found_attention = true;
    }
    CHECK(found_attention);

    plot(dir);
    auto svg = slurp(dir + "/loss_curves.svg");
    CHECK(svg.find("<svg") != std::string::npos);
    CHECK(svg.find("polyline") != std::string::npos);

    // model dir reloads and evaluates to the same metrics
    auto lm = load_model_dir(dir);
    auto ds = make_datasets(cfg);
    auto res = evaluate(lm.network, lm.cfg, ds, out.result.metrics.run_id);
    CHECK(res.metrics.r1 == out.result.metrics.r1);
    CHECK(res.metrics.mrr == out.result.metrics.mrr);
    std::filesystem::remove_all(dir);
}

TEST_CASE("metrics CSV reloads to the same numbers at full precision") {
    auto cfg = tiny_config(63);
    cfg.epochs = 1;
    auto out = train::train(cfg);
    std::string dir = "/tmp/uqr_test_roundtrip";
    std::filesystem::remove_all(dir);
    report(out.result, dir);
    auto text = slurp(dir + "/metrics.csv");
    // parse the second line back
    auto nl = text.find('\n');
    std::string row = text.substr(nl + 1);
    std::vector<std::string> cells;
    std::istringstream rs(row);
    std::string cell;
    while (std::getline(rs, cell, ',')) cells.push_back(cell);
    REQUIRE(cells.size() == 8);
    CHECK(std::stod(cells[1]) == out.result.metrics.r1);
    CHECK(std::stod(cells[4]) == out.result.metrics.mrr);
    CHECK(std::stod(cells[7]) == out.result.metrics.sigma_o);
    std::filesystem::remove_all(dir);
}

TEST_CASE("ablate rejects unknown modes and rows are labelled") {
    auto cfg = tiny_config(64);
    CHECK_THROWS_AS(ablate(cfg, "bogus"), UsageError);
    CHECK(ablate_modes().size() == 4);
}
