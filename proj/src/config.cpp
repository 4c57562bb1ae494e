#include "disncl/config.hpp"

#include <fstream>

#include "disncl/common.hpp"
#include "disncl/container.hpp"

namespace disncl {

NoiseProtocol noise_protocol_from_string(const std::string& s) {
  if (s == "none") return NoiseProtocol::None;
  if (s == "shuffle-images") return NoiseProtocol::ShuffleImages;
  if (s == "permute-captions") return NoiseProtocol::PermuteCaptions;
  throw ConfigError("unknown noise protocol '" + s +
                    "' (expected none | shuffle-images | permute-captions)");
}

std::string to_string(NoiseProtocol p) {
  switch (p) {
    case NoiseProtocol::None: return "none";
    case NoiseProtocol::ShuffleImages: return "shuffle-images";
    case NoiseProtocol::PermuteCaptions: return "permute-captions";
  }
  return "none";
}

namespace {

void check_keys(const nlohmann::json& obj, const std::vector<std::string>& allowed,
                const std::string& path) {
  if (!obj.is_object()) throw ConfigError("config: " + path + " must be an object");
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool ok = false;
    for (const auto& k : allowed) {
      if (it.key() == k) {
        ok = true;
        break;
      }
    }
    if (!ok) throw ConfigError("config: unknown key '" + path + "." + it.key() + "'");
  }
}

template <typename T>
T get_or(const nlohmann::json& obj, const char* key, T fallback) {
  if (!obj.contains(key)) return fallback;
  return obj.at(key).get<T>();
}

// Seeds are written as signed integers in config files; negative = derive
// from the master seed.
std::uint64_t seed_or_derive(const nlohmann::json& obj, const char* key, std::uint64_t master,
                             std::uint64_t role) {
  if (obj.contains(key)) {
    const std::int64_t raw = obj.at(key).get<std::int64_t>();
    if (raw >= 0) return static_cast<std::uint64_t>(raw);
  }
  return derive_seed(master, role);
}

AblationSwitches parse_ablation(const nlohmann::json& j, const std::string& path) {
  check_keys(j, {"enable_dis", "enable_soft", "enable_reg", "use_filtration",
                 "use_adaptive_margin"},
             path);
  AblationSwitches ab;
  ab.enable_dis = get_or(j, "enable_dis", ab.enable_dis);
  ab.enable_soft = get_or(j, "enable_soft", ab.enable_soft);
  ab.enable_reg = get_or(j, "enable_reg", ab.enable_reg);
  ab.use_filtration = get_or(j, "use_filtration", ab.use_filtration);
  ab.use_adaptive_margin = get_or(j, "use_adaptive_margin", ab.use_adaptive_margin);
  return ab;
}

nlohmann::json ablation_json(const AblationSwitches& ab) {
  return {{"enable_dis", ab.enable_dis},
          {"enable_soft", ab.enable_soft},
          {"enable_reg", ab.enable_reg},
          {"use_filtration", ab.use_filtration},
          {"use_adaptive_margin", ab.use_adaptive_margin}};
}

}  // namespace

ExperimentConfig parse_experiment_config(const nlohmann::json& j) {
  check_keys(j, {"seed", "out_dir", "data", "model", "train", "weights", "ablation", "eval",
                 "sweep"},
             "$");
  ExperimentConfig cfg;
  if (j.contains("seed")) {
    const std::int64_t raw = j.at("seed").get<std::int64_t>();
    if (raw < 0) throw ConfigError("config: $.seed must be >= 0");
    cfg.seed = static_cast<std::uint64_t>(raw);
  }
  cfg.out_dir = get_or<std::string>(j, "out_dir", cfg.out_dir);

  if (j.contains("data")) {
    const auto& d = j.at("data");
    check_keys(d, {"n_train", "n_test", "dataset_file", "test_dataset_file", "latent", "noise"},
               "$.data");
    cfg.data.n_train = get_or<long>(d, "n_train", cfg.data.n_train);
    cfg.data.n_test = get_or<long>(d, "n_test", cfg.data.n_test);
    cfg.data.dataset_file = get_or<std::string>(d, "dataset_file", "");
    cfg.data.test_dataset_file = get_or<std::string>(d, "test_dataset_file", "");
    if (d.contains("latent")) {
      const auto& l = d.at("latent");
      check_keys(l, {"dim_shared", "dim_excl_v", "dim_excl_t", "obs_dim_v", "obs_dim_t",
                     "noise_std", "seed"},
                 "$.data.latent");
      cfg.data.latent.dim_shared = get_or(l, "dim_shared", cfg.data.latent.dim_shared);
      cfg.data.latent.dim_excl_v = get_or(l, "dim_excl_v", cfg.data.latent.dim_excl_v);
      cfg.data.latent.dim_excl_t = get_or(l, "dim_excl_t", cfg.data.latent.dim_excl_t);
      cfg.data.latent.obs_dim_v = get_or(l, "obs_dim_v", cfg.data.latent.obs_dim_v);
      cfg.data.latent.obs_dim_t = get_or(l, "obs_dim_t", cfg.data.latent.obs_dim_t);
      cfg.data.latent.noise_std = get_or(l, "noise_std", cfg.data.latent.noise_std);
      cfg.data.latent.seed = seed_or_derive(l, "seed", cfg.seed, 1);
    } else {
      cfg.data.latent.seed = derive_seed(cfg.seed, 1);
    }
    if (d.contains("noise")) {
      const auto& n = d.at("noise");
      check_keys(n, {"protocol", "eta", "seed"}, "$.data.noise");
      cfg.data.protocol =
          noise_protocol_from_string(get_or<std::string>(n, "protocol", "shuffle-images"));
      cfg.data.eta = get_or(n, "eta", cfg.data.eta);
      cfg.data.noise_seed = seed_or_derive(n, "seed", cfg.seed, 2);
    } else {
      cfg.data.noise_seed = derive_seed(cfg.seed, 2);
    }
  } else {
    cfg.data.latent.seed = derive_seed(cfg.seed, 1);
    cfg.data.noise_seed = derive_seed(cfg.seed, 2);
  }

  if (j.contains("model")) {
    const auto& m = j.at("model");
    check_keys(m, {"feat_dim", "code_dim", "enc_hidden", "head_hidden", "leaky_slope", "seed"},
               "$.model");
    cfg.model.feat_dim = get_or(m, "feat_dim", cfg.model.feat_dim);
    cfg.model.code_dim = get_or(m, "code_dim", cfg.model.code_dim);
    cfg.model.enc_hidden = get_or(m, "enc_hidden", cfg.model.enc_hidden);
    cfg.model.head_hidden = get_or(m, "head_hidden", cfg.model.head_hidden);
    cfg.model.leaky_slope = get_or(m, "leaky_slope", cfg.model.leaky_slope);
    cfg.model.seed = seed_or_derive(m, "seed", cfg.seed, 3);
  } else {
    cfg.model.seed = derive_seed(cfg.seed, 3);
  }

  if (j.contains("train")) {
    const auto& t = j.at("train");
    check_keys(t, {"warmup_epochs", "epochs", "batch", "lr", "lr_disc", "lr_decay_factor",
                   "lr_decay_at", "dis_on_clean_only", "log_grad_norms", "checkpoint_every",
                   "seed"},
               "$.train");
    cfg.train.warmup_epochs = get_or(t, "warmup_epochs", cfg.train.warmup_epochs);
    cfg.train.epochs = get_or(t, "epochs", cfg.train.epochs);
    cfg.train.batch = get_or(t, "batch", cfg.train.batch);
    cfg.train.lr = get_or(t, "lr", cfg.train.lr);
    cfg.train.lr_disc = get_or(t, "lr_disc", cfg.train.lr);
    cfg.train.lr_decay_factor = get_or(t, "lr_decay_factor", cfg.train.lr_decay_factor);
    cfg.train.lr_decay_at = get_or(t, "lr_decay_at", cfg.train.lr_decay_at);
    cfg.train.dis_on_clean_only = get_or(t, "dis_on_clean_only", cfg.train.dis_on_clean_only);
    cfg.train.log_grad_norms = get_or(t, "log_grad_norms", cfg.train.log_grad_norms);
    cfg.train.checkpoint_every = get_or(t, "checkpoint_every", cfg.train.checkpoint_every);
    cfg.train.seed = seed_or_derive(t, "seed", cfg.seed, 4);
  } else {
    cfg.train.lr_disc = cfg.train.lr;
    cfg.train.seed = derive_seed(cfg.seed, 4);
  }

  if (j.contains("weights")) {
    const auto& w = j.at("weights");
    check_keys(w, {"gamma", "beta1", "beta2", "beta3", "alpha", "m", "tau"}, "$.weights");
    cfg.weights.gamma = get_or(w, "gamma", cfg.weights.gamma);
    cfg.weights.beta1 = get_or(w, "beta1", cfg.weights.beta1);
    cfg.weights.beta2 = get_or(w, "beta2", cfg.weights.beta2);
    cfg.weights.beta3 = get_or(w, "beta3", cfg.weights.beta3);
    cfg.weights.alpha = get_or(w, "alpha", cfg.weights.alpha);
    cfg.weights.m = get_or(w, "m", cfg.weights.m);
    cfg.weights.tau = get_or(w, "tau", cfg.weights.tau);
  }
  cfg.weights.validate();

  if (j.contains("ablation")) cfg.ablation = parse_ablation(j.at("ablation"), "$.ablation");

  if (j.contains("eval")) {
    const auto& e = j.at("eval");
    check_keys(e, {"ks", "mine_steps", "mine_hidden", "histogram_bins", "disentanglement",
                   "batch_size", "seed"},
               "$.eval");
    if (e.contains("ks")) cfg.eval.options.ks = e.at("ks").get<std::vector<int>>();
    cfg.eval.options.mine_steps = get_or(e, "mine_steps", cfg.eval.options.mine_steps);
    cfg.eval.options.mine_hidden = get_or(e, "mine_hidden", cfg.eval.options.mine_hidden);
    cfg.eval.options.histogram_bins =
        get_or(e, "histogram_bins", cfg.eval.options.histogram_bins);
    cfg.eval.options.batch_size = get_or(e, "batch_size", cfg.eval.options.batch_size);
    cfg.eval.disentanglement = get_or(e, "disentanglement", cfg.eval.disentanglement);
    cfg.eval.options.seed = seed_or_derive(e, "seed", cfg.seed, 5);
  } else {
    cfg.eval.options.seed = derive_seed(cfg.seed, 5);
  }

  if (j.contains("sweep")) {
    const auto& s = j.at("sweep");
    check_keys(s, {"etas", "seeds", "variants"}, "$.sweep");
    if (s.contains("etas")) cfg.sweep.etas = s.at("etas").get<std::vector<double>>();
    if (s.contains("seeds")) {
      cfg.sweep.seeds.clear();
      for (const auto& v : s.at("seeds")) {
        const std::int64_t raw = v.get<std::int64_t>();
        if (raw < 0) throw ConfigError("config: $.sweep.seeds must be >= 0");
        cfg.sweep.seeds.push_back(static_cast<std::uint64_t>(raw));
      }
    }
    if (s.contains("variants")) {
      cfg.sweep.variants.clear();
      int idx = 0;
      for (const auto& v : s.at("variants")) {
        const std::string path = "$.sweep.variants[" + std::to_string(idx++) + "]";
        check_keys(v, {"name", "ablation"}, path);
        SweepVariant sv;
        sv.name = v.at("name").get<std::string>();
        if (v.contains("ablation")) sv.ablation = parse_ablation(v.at("ablation"), path);
        cfg.sweep.variants.push_back(std::move(sv));
      }
    }
  }
  if (cfg.sweep.variants.empty()) {
    // Default comparison: the full method vs the plain ranking baseline
    // (constant margin, no filtration, no information-theoretic terms).
    SweepVariant full{"full", AblationSwitches{}};
    SweepVariant baseline{"baseline",
                          AblationSwitches{false, false, false, false, false}};
    cfg.sweep.variants = {full, baseline};
  }

  if (!cfg.data.dataset_file.empty() && cfg.data.test_dataset_file.empty()) {
    throw ConfigError("config: dataset_file requires test_dataset_file");
  }
  return cfg;
}

ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config parse error in " + path + ": " + e.what());
  }
  return parse_experiment_config(j);
}

nlohmann::json config_snapshot(const ExperimentConfig& cfg) {
  nlohmann::json j;
  j["seed"] = cfg.seed;
  j["out_dir"] = cfg.out_dir;
  j["data"] = {{"n_train", cfg.data.n_train},
               {"n_test", cfg.data.n_test},
               {"dataset_file", cfg.data.dataset_file},
               {"test_dataset_file", cfg.data.test_dataset_file},
               {"latent",
                {{"dim_shared", cfg.data.latent.dim_shared},
                 {"dim_excl_v", cfg.data.latent.dim_excl_v},
                 {"dim_excl_t", cfg.data.latent.dim_excl_t},
                 {"obs_dim_v", cfg.data.latent.obs_dim_v},
                 {"obs_dim_t", cfg.data.latent.obs_dim_t},
                 {"noise_std", cfg.data.latent.noise_std},
                 {"seed", cfg.data.latent.seed}}},
               {"noise",
                {{"protocol", to_string(cfg.data.protocol)},
                 {"eta", cfg.data.eta},
                 {"seed", cfg.data.noise_seed}}}};
  j["model"] = {{"feat_dim", cfg.model.feat_dim},
                {"code_dim", cfg.model.code_dim},
                {"enc_hidden", cfg.model.enc_hidden},
                {"head_hidden", cfg.model.head_hidden},
                {"leaky_slope", cfg.model.leaky_slope},
                {"seed", cfg.model.seed}};
  j["train"] = {{"warmup_epochs", cfg.train.warmup_epochs},
                {"epochs", cfg.train.epochs},
                {"batch", cfg.train.batch},
                {"lr", cfg.train.lr},
                {"lr_disc", cfg.train.lr_disc},
                {"lr_decay_factor", cfg.train.lr_decay_factor},
                {"lr_decay_at", cfg.train.resolved_decay_at()},
                {"dis_on_clean_only", cfg.train.dis_on_clean_only},
                {"log_grad_norms", cfg.train.log_grad_norms},
                {"checkpoint_every", cfg.train.checkpoint_every},
                {"seed", cfg.train.seed}};
  j["weights"] = {{"gamma", cfg.weights.gamma}, {"beta1", cfg.weights.beta1},
                  {"beta2", cfg.weights.beta2}, {"beta3", cfg.weights.beta3},
                  {"alpha", cfg.weights.alpha}, {"m", cfg.weights.m},
                  {"tau", cfg.weights.tau}};
  j["ablation"] = ablation_json(cfg.ablation);
  j["eval"] = {{"ks", cfg.eval.options.ks},
               {"mine_steps", cfg.eval.options.mine_steps},
               {"mine_hidden", cfg.eval.options.mine_hidden},
               {"histogram_bins", cfg.eval.options.histogram_bins},
               {"batch_size", cfg.eval.options.batch_size},
               {"disentanglement", cfg.eval.disentanglement},
               {"seed", cfg.eval.options.seed}};
  nlohmann::json variants = nlohmann::json::array();
  for (const auto& v : cfg.sweep.variants) {
    variants.push_back({{"name", v.name}, {"ablation", ablation_json(v.ablation)}});
  }
  j["sweep"] = {{"etas", cfg.sweep.etas}, {"seeds", cfg.sweep.seeds}, {"variants", variants}};
  return j;
}

PreparedExperiment prepare_experiment(const ExperimentConfig& cfg) {
  PreparedExperiment out;

  if (!cfg.data.dataset_file.empty()) {
    out.train = load_dataset(cfg.data.dataset_file);
    out.test = load_dataset(cfg.data.test_dataset_file);
  } else {
    const PairDataset full = generate_pairs(cfg.data.latent, cfg.data.n_train + cfg.data.n_test);
    PairDataset train = full.slice(0, cfg.data.n_train);
    out.test = full.slice(cfg.data.n_train, full.size());
    switch (cfg.data.protocol) {
      case NoiseProtocol::None:
        break;
      case NoiseProtocol::ShuffleImages:
        train = inject_noise_shuffle_images(train, cfg.data.eta, cfg.data.noise_seed);
        break;
      case NoiseProtocol::PermuteCaptions:
        train = inject_noise_permute_captions(train, cfg.data.eta, cfg.data.noise_seed);
        break;
    }
    out.train = std::move(train);
  }

  out.setup.model = cfg.model;
  out.setup.model.obs_dim_v = static_cast<int>(out.train.V.cols());
  out.setup.model.obs_dim_t = static_cast<int>(out.train.T.cols());
  out.setup.train = cfg.train;
  out.setup.weights = cfg.weights;
  out.setup.ablation = cfg.ablation;
  out.setup.model_seed = cfg.model.seed;

  out.fit_options.eval = cfg.eval.options;
  out.fit_options.eval_disentanglement = cfg.eval.disentanglement;
  out.snapshot = config_snapshot(cfg);
  return out;
}

}  // namespace disncl
