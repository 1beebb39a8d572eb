#include "sisrnn/config.hpp"

#include <doctest.h>

using namespace sisrnn;

TEST_CASE("empty config yields the reference defaults") {
    TrainConfig cfg = parse_config_text("", {});
    CHECK(cfg.model.hidden_dim == 64);
    CHECK(cfg.batch == 128);
    CHECK(cfg.adam.lr == 0.001);
    CHECK(cfg.model.prior_widths == std::vector<Index>{64, 64});
    CHECK(cfg.model.enc_widths == std::vector<Index>{128, 128, 128});
    CHECK(cfg.model.noise.dims == std::vector<Index>{150, 100, 50});
    CHECK(cfg.k_min == 1);
    CHECK(cfg.k_max == 100);
}

TEST_CASE("overrides take effect in order") {
    TrainConfig cfg = parse_config_text("hidden = 32\n", {"hidden=128", "lr=0.01"});
    CHECK(cfg.model.hidden_dim == 128);
    CHECK(cfg.adam.lr == 0.01);
}

TEST_CASE("unknown keys are rejected with a suggestion") {
    CHECK_THROWS_WITH_AS(parse_config_text("hiddden = 128\n", {}),
                         doctest::Contains("did you mean 'hidden'"), std::invalid_argument);
    CHECK_THROWS_WITH_AS(parse_config_text("", {"epohcs=5"}), doctest::Contains("epochs"),
                         std::invalid_argument);
}

TEST_CASE("value validation") {
    CHECK_THROWS_AS(parse_config_text("hidden = zero\n", {}), std::invalid_argument);
    CHECK_THROWS_AS(parse_config_text("hidden = 0\n", {}), std::invalid_argument);
    CHECK_THROWS_AS(parse_config_text("lr = -1\n", {}), std::invalid_argument);
    CHECK_THROWS_AS(parse_config_text("data_layout = diagonal\n", {}), std::invalid_argument);
    CHECK_THROWS_WITH_AS(parse_config_text("hidden\n", {}), doctest::Contains("line 1"),
                         std::invalid_argument);
}

TEST_CASE("comments and blank lines are ignored") {
    TrainConfig cfg = parse_config_text("# a comment\n\nhidden = 16  # trailing\n", {});
    CHECK(cfg.model.hidden_dim == 16);
}

TEST_CASE("serialize/parse round trip") {
    TrainConfig cfg = parse_config_text("hidden = 24\nnoise_dims = 5,4\nenc_widths = 9,9\n"
                                        "emission = gaussian\ndata_kind = synth2\n",
                                        {"epochs=17"});
    TrainConfig back = parse_config_text(serialize_config(cfg), {});
    CHECK(back.model.hidden_dim == 24);
    CHECK(back.model.noise.dims == std::vector<Index>{5, 4});
    CHECK(back.epochs == 17);
    CHECK(back.model.emission == Emission::kGaussian);
    CHECK_FALSE(back.auto_emission);
    CHECK(serialize_config(back) == serialize_config(cfg));
}

TEST_CASE("finalize derives observation dim and emission from the data") {
    TrainConfig cfg = parse_config_text("data_kind = synth2\ndata_n_train = 4\ndata_n_test = 2\n"
                                        "data_T = 3\nnoise_dims = 2,2,2\n",
                                        {});
    auto [tr, te] = load_datasets(cfg.data);
    finalize_config(cfg, tr);
    CHECK(cfg.model.obs_dim == 1);
    CHECK(cfg.model.emission == Emission::kGaussian);
    CHECK_FALSE(cfg.auto_emission);
    (void)te;
}

TEST_CASE("mismatched encoder and noise layer counts are rejected at validation") {
    TrainConfig cfg = parse_config_text("enc_widths = 8,8\nnoise_dims = 1,1,1\n", {});
    cfg.model.obs_dim = 3;
    CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("noise layer count"),
                         std::invalid_argument);
}

TEST_CASE("config help lists keys") {
    const std::string help = config_key_help();
    CHECK(help.find("hidden") != std::string::npos);
    CHECK(help.find("data_kind") != std::string::npos);
}
