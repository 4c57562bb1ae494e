#include <doctest.h>

#include "disncl/common.hpp"
#include "disncl/config.hpp"

using namespace disncl;
using nlohmann::json;

TEST_CASE("defaults follow the published recipe") {
  const ExperimentConfig cfg = parse_experiment_config(json::object());
  CHECK(cfg.train.warmup_epochs == 5);
  CHECK(cfg.train.epochs == 50);
  CHECK(cfg.train.batch == 128);
  CHECK(cfg.train.lr == doctest::Approx(2e-4));
  CHECK(cfg.train.lr_disc == doctest::Approx(2e-4));
  CHECK(cfg.train.lr_decay_factor == doctest::Approx(0.1));
  CHECK(cfg.train.resolved_decay_at() == 25);
  CHECK(cfg.model.feat_dim == 1024);
  CHECK(cfg.model.code_dim == 512);
  CHECK(cfg.model.head_hidden == 256);
  CHECK(cfg.model.leaky_slope == doctest::Approx(0.2));
  CHECK(cfg.weights.gamma == doctest::Approx(0.5));
  CHECK(cfg.weights.beta1 == doctest::Approx(0.1));
  CHECK(cfg.weights.beta2 == doctest::Approx(0.1));
  CHECK(cfg.weights.beta3 == doctest::Approx(0.5));
  CHECK(cfg.weights.alpha == doctest::Approx(0.2));
  CHECK(cfg.weights.m == doctest::Approx(10.0));
  CHECK(cfg.weights.tau == doctest::Approx(0.05));
  CHECK(cfg.ablation.enable_dis);
  CHECK(cfg.ablation.use_filtration);
  CHECK(cfg.sweep.etas == std::vector<double>{0.2, 0.4, 0.6});
  REQUIRE(cfg.sweep.variants.size() == 2);
  CHECK(cfg.sweep.variants[0].name == "full");
  CHECK(cfg.sweep.variants[1].name == "baseline");
  CHECK_FALSE(cfg.sweep.variants[1].ablation.use_filtration);
  CHECK_FALSE(cfg.sweep.variants[1].ablation.use_adaptive_margin);
}

TEST_CASE("unknown keys are rejected with their path") {
  CHECK_THROWS_WITH_AS(parse_experiment_config({{"banana", 1}}),
                       "config: unknown key '$.banana'", ConfigError);
  CHECK_THROWS_WITH_AS(parse_experiment_config({{"train", {{"lr", 1e-4}, {"typo", 2}}}}),
                       "config: unknown key '$.train.typo'", ConfigError);
  CHECK_THROWS_WITH_AS(
      parse_experiment_config({{"data", {{"latent", {{"dim_sharedd", 4}}}}}}),
      "config: unknown key '$.data.latent.dim_sharedd'", ConfigError);
}

TEST_CASE("weight invariants are validated") {
  CHECK_THROWS_AS(parse_experiment_config({{"weights", {{"gamma", 1.5}}}}), ConfigError);
  CHECK_THROWS_AS(parse_experiment_config({{"weights", {{"tau", 0.0}}}}), ConfigError);
  CHECK_THROWS_AS(parse_experiment_config({{"weights", {{"m", 1.0}}}}), ConfigError);
  CHECK_THROWS_AS(parse_experiment_config({{"weights", {{"alpha", -0.2}}}}), ConfigError);
  CHECK_THROWS_AS(parse_experiment_config({{"weights", {{"beta3", 1.2}}}}), ConfigError);
}

TEST_CASE("section seeds derive from the master unless explicit") {
  const ExperimentConfig a = parse_experiment_config({{"seed", 7}});
  const ExperimentConfig b = parse_experiment_config({{"seed", 7}});
  const ExperimentConfig c = parse_experiment_config({{"seed", 8}});
  CHECK(a.data.latent.seed == b.data.latent.seed);
  CHECK(a.train.seed == b.train.seed);
  CHECK(a.data.latent.seed != c.data.latent.seed);
  CHECK(a.data.latent.seed != a.train.seed);

  const ExperimentConfig d =
      parse_experiment_config({{"seed", 7}, {"data", {{"latent", {{"seed", 1234}}}}}});
  CHECK(d.data.latent.seed == 1234);
  CHECK(d.train.seed == a.train.seed);
}

TEST_CASE("snapshot round-trips through the parser") {
  json j;
  j["seed"] = 11;
  j["train"] = {{"epochs", 8}, {"warmup_epochs", 2}, {"batch", 32}};
  j["data"] = {{"n_train", 512},
               {"n_test", 128},
               {"noise", {{"protocol", "permute-captions"}, {"eta", 0.4}}}};
  const ExperimentConfig cfg = parse_experiment_config(j);
  const json snap = config_snapshot(cfg);
  const ExperimentConfig cfg2 = parse_experiment_config(snap);
  CHECK(config_snapshot(cfg2) == snap);
  CHECK(cfg2.data.protocol == NoiseProtocol::PermuteCaptions);
  CHECK(cfg2.data.eta == doctest::Approx(0.4));
  CHECK(cfg2.train.epochs == 8);
}

TEST_CASE("dataset_file requires the test sibling") {
  CHECK_THROWS_AS(parse_experiment_config({{"data", {{"dataset_file", "x.dncl"}}}}),
                  ConfigError);
}

TEST_CASE("prepare_experiment builds the split with injected train noise") {
  json j;
  j["seed"] = 3;
  j["data"] = {{"n_train", 200},
               {"n_test", 50},
               {"latent",
                {{"dim_shared", 8},
                 {"dim_excl_v", 4},
                 {"dim_excl_t", 4},
                 {"obs_dim_v", 16},
                 {"obs_dim_t", 16}}},
               {"noise", {{"protocol", "shuffle-images"}, {"eta", 0.2}}}};
  j["model"] = {{"feat_dim", 16}, {"code_dim", 8}, {"enc_hidden", 16}, {"head_hidden", 16}};
  const PreparedExperiment prep = prepare_experiment(parse_experiment_config(j));
  CHECK(prep.train.size() == 200);
  CHECK(prep.test.size() == 50);
  CHECK(prep.train.noise_fraction() == doctest::Approx(0.2));
  CHECK(prep.test.noise_fraction() == 0.0);
  CHECK(prep.setup.model.obs_dim_v == 16);
  // Held-out rows must be disjoint from the train slice: the shared latents
  // of the two splits cannot overlap row-wise.
  CHECK(prep.train.z_shared_t.row(0) != prep.test.z_shared_t.row(0));
}

TEST_CASE("unknown protocol rejected") {
  CHECK_THROWS_AS(
      parse_experiment_config({{"data", {{"noise", {{"protocol", "flip-bits"}}}}}}),
      ConfigError);
}
