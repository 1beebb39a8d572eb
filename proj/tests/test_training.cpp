#include "sisrnn/training.hpp"

#include "sisrnn/config.hpp"

#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

using namespace sisrnn;

namespace {

std::string temp_dir(const char* tag) {
    auto p = std::filesystem::temp_directory_path() / (std::string("sisrnn_") + tag);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p.string();
}

TrainConfig small_synth_config() {
    TrainConfig cfg;
    cfg.data.kind = DataSpec::Kind::kSynthTwoMode;
    cfg.data.n_train = 8;
    cfg.data.n_test = 4;
    cfg.data.T = 5;
    cfg.model.latent_dim = 2;
    cfg.model.hidden_dim = 4;
    cfg.model.prior_widths = {4};
    cfg.model.enc_widths = {4, 4};
    cfg.model.noise.dims = {2, 1};
    cfg.model.dec_widths = {4};
    cfg.epochs = 1;
    cfg.batch = 4;
    cfg.k_max = 2;
    cfg.eval_n_z = 1;
    return cfg;
}

}  // namespace

TEST_CASE("adam_step") {
    SUBCASE("zero gradients leave parameters unchanged") {
        ParamStore params{{"w", Tensor::vector({1.0, -2.0})}};
        GradMap grads{{"w", Tensor::zeros({2})}};
        AdamState st;
        adam_step(params, grads, st);
        CHECK(bit_equal(params.at("w"), Tensor::vector({1.0, -2.0})));
    }
    SUBCASE("first step moves by about -lr for unit gradient") {
        ParamStore params{{"w", Tensor::vector({0.0})}};
        GradMap grads{{"w", Tensor::vector({1.0})}};
        AdamState st;
        adam_step(params, grads, st);
        CHECK(params.at("w").at(0) == doctest::Approx(-0.001).epsilon(1e-6));
    }
    SUBCASE("three steps on x^2 match a hand-unrolled recurrence") {
        const double lr = 0.001, b1 = 0.9, b2 = 0.999, eps = 1e-8;
        double x = 1.0, m = 0.0, v = 0.0;
        ParamStore params{{"x", Tensor::vector({1.0})}};
        AdamState st;
        for (int t = 1; t <= 3; ++t) {
            const double g = 2.0 * x;
            m = b1 * m + (1 - b1) * g;
            v = b2 * v + (1 - b2) * g * g;
            const double mh = m / (1 - std::pow(b1, t));
            const double vh = v / (1 - std::pow(b2, t));
            x -= lr * mh / (std::sqrt(vh) + eps);

            GradMap grads{{"x", Tensor::vector({2.0 * params.at("x").at(0)})}};
            adam_step(params, grads, st);
            CHECK(params.at("x").at(0) == doctest::Approx(x).epsilon(1e-12));
        }
    }
    SUBCASE("non-finite gradients are rejected by name") {
        ParamStore params{{"bad", Tensor::vector({0.0})}};
        GradMap grads{{"bad", Tensor::vector({std::nan("")})}};
        AdamState st;
        CHECK_THROWS_WITH_AS(adam_step(params, grads, st), doctest::Contains("bad"),
                             std::runtime_error);
    }
}

TEST_CASE("global norm clipping") {
    GradMap grads{{"a", Tensor::vector({3.0, 4.0})}};  // norm 5
    CHECK(clip_global_norm(grads, 10.0) == doctest::Approx(5.0));
    CHECK(grads.at("a").at(0) == 3.0);
    CHECK(clip_global_norm(grads, 1.0) == doctest::Approx(5.0));
    CHECK(std::sqrt(grads.at("a").mat().squaredNorm()) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("one epoch on a tiny synthetic dataset produces a loadable checkpoint") {
    TrainConfig cfg = small_synth_config();
    auto [tr, te] = load_datasets(cfg.data);
    finalize_config(cfg, tr);
    const std::string out = temp_dir("smoke");
    TrainResult res = train(cfg, tr, te, out, serialize_config(cfg));
    CHECK(res.log.size() == 1);
    CHECK(std::filesystem::exists(out + "/metrics.csv"));

    CheckpointData ck = load_checkpoint(out + "/checkpoint");
    CHECK(ck.epoch == 1);
    for (const auto& [name, t] : res.model.params) CHECK(bit_equal(t, ck.model.params.at(name)));
}

TEST_CASE("training is deterministic per seed, wall time aside") {
    TrainConfig cfg = small_synth_config();
    cfg.epochs = 3;
    auto [tr, te] = load_datasets(cfg.data);
    finalize_config(cfg, tr);
    TrainResult a = train(cfg, tr, te, "", "");
    TrainResult b = train(cfg, tr, te, "", "");
    REQUIRE(a.log.size() == b.log.size());
    for (size_t i = 0; i < a.log.size(); ++i) {
        CHECK(a.log[i].train_bound == b.log[i].train_bound);
        CHECK(a.log[i].eval_bound == b.log[i].eval_bound);
        CHECK(a.log[i].beta == b.log[i].beta);
        CHECK(a.log[i].K == b.log[i].K);
    }
    for (const auto& [name, t] : a.model.params) CHECK(bit_equal(t, b.model.params.at(name)));
}

TEST_CASE("a small-step update does not decrease the replayed-noise objective") {
    TrainConfig cfg = small_synth_config();
    auto [tr, te] = load_datasets(cfg.data);
    finalize_config(cfg, tr);
    SisRnnModel model = init_model(cfg.model, RngState::from_seed(5));
    const Tensor& xs = tr.sequences[0];
    const RngState noise = RngState::from_seed(9);
    const int K = 2;

    BoundGraph bg = build_bound_graph(cfg.model, static_cast<int>(xs.rows()), K);
    Evaluation ev(bg.graph);
    const Tensor* seq = &xs;
    bind_params(ev, model);
    bind_bound_inputs(ev, bg, cfg.model, std::span<const Tensor* const>(&seq, 1), 1, noise, 1.0);
    ev.forward();
    const double before = read_bound(ev, bg, 1, 1.0).total;
    GradMap grads = ev.backward(bg.loss);
    AdamState st;
    st.hp.lr = 1e-5;
    adam_step(model.params, grads, st);

    const double after = regularized_bound(model, xs, K, 1.0, noise, 1).total;
    CHECK(after >= before - 1e-9);
}

TEST_CASE("training on the two-regime data improves the eval bound") {
    TrainConfig cfg = small_synth_config();
    cfg.data.n_train = 64;
    cfg.data.n_test = 32;
    cfg.data.T = 8;
    cfg.epochs = 30;
    cfg.batch = 16;
    cfg.k_max = 2;
    auto [tr, te] = load_datasets(cfg.data);
    finalize_config(cfg, tr);
    TrainResult res = train(cfg, tr, te, "", "");
    CHECK(res.log.back().eval_bound > res.log.front().eval_bound);
    for (const MetricsRow& r : res.log) {
        CHECK(std::isfinite(r.train_bound));
        CHECK(std::isfinite(r.eval_bound));
    }
}

TEST_CASE("evaluate_nll reports bounds and stays pure") {
    TrainConfig cfg = small_synth_config();
    auto [tr, te] = load_datasets(cfg.data);
    finalize_config(cfg, tr);
    SisRnnModel model = init_model(cfg.model, RngState::from_seed(2));
    ParamStore before = model.params;

    EvalReport rep = evaluate_nll(model, te, 3, 2, RngState::from_seed(4));
    CHECK(rep.per_sequence_nll.size() == static_cast<size_t>(te.size()));
    double acc = 0.0;
    for (double v : rep.per_sequence_nll) acc += v;
    CHECK(rep.mean_nll == doctest::Approx(acc / te.size()).epsilon(1e-12));
    for (const auto& [name, t] : model.params) CHECK(bit_equal(t, before.at(name)));

    // Binary data: the bound on NLL cannot go negative.
    TrainConfig bcfg = small_synth_config();
    bcfg.data.kind = DataSpec::Kind::kSynthDigits;
    bcfg.data.limit = 12;
    bcfg.data.split_train = 8;
    bcfg.data.split_test = 4;
    auto [btr, bte] = load_datasets(bcfg.data);
    finalize_config(bcfg, btr);
    SisRnnModel bmodel = init_model(bcfg.model, RngState::from_seed(2));
    EvalReport brep = evaluate_nll(bmodel, bte, 2, 1, RngState::from_seed(4));
    CHECK(brep.mean_nll >= 0.0);
}

TEST_CASE("checkpoint round trip is bit-exact and errors are distinct") {
    TrainConfig cfg = small_synth_config();
    auto [tr, te] = load_datasets(cfg.data);
    finalize_config(cfg, tr);
    SisRnnModel model = init_model(cfg.model, RngState::from_seed(77));
    const std::string dir = temp_dir("ckpt");
    const std::string base = dir + "/checkpoint";
    save_checkpoint(model, RngState::from_seed(cfg.seed), 42, serialize_config(cfg), base);

    SUBCASE("round trip reproduces evaluation bit-exactly") {
        CheckpointData ck = load_checkpoint(base);
        CHECK(ck.epoch == 42);
        for (const auto& [name, t] : model.params) CHECK(bit_equal(t, ck.model.params.at(name)));
        EvalReport a = evaluate_nll(model, te, 2, 1, RngState::from_seed(3));
        EvalReport b = evaluate_nll(ck.model, te, 2, 1, RngState::from_seed(3));
        for (size_t i = 0; i < a.per_sequence_nll.size(); ++i)
            CHECK(a.per_sequence_nll[i] == b.per_sequence_nll[i]);
    }
    SUBCASE("unknown version is rejected without a partial load") {
        std::ifstream in(base + ".manifest");
        std::string all((std::istreambuf_iterator<char>(in)), {});
        in.close();
        all.replace(all.find("v1"), 2, "v9");
        std::ofstream(base + ".manifest") << all;
        CHECK_THROWS_WITH_AS(load_checkpoint(base), doctest::Contains("version"),
                             std::runtime_error);
    }
    SUBCASE("truncated blob is a length disagreement") {
        std::filesystem::resize_file(base + ".blob",
                                     std::filesystem::file_size(base + ".blob") - 16);
        CHECK_THROWS_WITH_AS(load_checkpoint(base), doctest::Contains("disagrees"),
                             std::runtime_error);
    }
    SUBCASE("manifest offset corruption is reported as disagreement") {
        std::ifstream in(base + ".manifest");
        std::string all((std::istreambuf_iterator<char>(in)), {});
        in.close();
        const auto pos = all.find("dec.l0.b 1 4 ");
        REQUIRE(pos != std::string::npos);
        all.replace(pos, std::string("dec.l0.b 1 4 ").size(), "dec.l0.b 1 4 7");
        std::ofstream(base + ".manifest") << all;
        CHECK_THROWS_WITH_AS(load_checkpoint(base), doctest::Contains("disagreement"),
                             std::runtime_error);
    }
}

TEST_CASE("metrics csv carries the documented header") {
    const std::string dir = temp_dir("metrics");
    std::vector<MetricsRow> rows(2);
    rows[0] = {1, 2, -3.5, -4.0, 0.5, 7, 12.0};
    rows[1] = {2, 4, -3.0, -3.5, 1.0, 7, 11.0};
    write_metrics_csv(dir + "/metrics.csv", rows);
    std::ifstream in(dir + "/metrics.csv");
    std::string header;
    std::getline(in, header);
    CHECK(header == "epoch,step,train_bound,eval_bound,beta,K,wall_ms");
    std::string line;
    std::getline(in, line);
    CHECK(line.substr(0, 4) == "1,2,");
}
