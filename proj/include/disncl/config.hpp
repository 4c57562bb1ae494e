#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "disncl/evaluation.hpp"
#include "disncl/losses.hpp"
#include "disncl/synthetic.hpp"
#include "disncl/trainer.hpp"

namespace disncl {

// Noise-injection protocols from the synthetic benchmarks.
enum class NoiseProtocol { None, ShuffleImages, PermuteCaptions };
NoiseProtocol noise_protocol_from_string(const std::string& s);
std::string to_string(NoiseProtocol p);

struct DataConfig {
  long n_train = 4000;
  long n_test = 1000;
  std::string dataset_file;       // optional pre-built train container
  std::string test_dataset_file;  // required iff dataset_file is set
  LatentSpec latent;
  NoiseProtocol protocol = NoiseProtocol::ShuffleImages;
  double eta = 0.2;
  std::uint64_t noise_seed = 0;
};

struct SweepVariant {
  std::string name;
  AblationSwitches ablation;
};

struct SweepConfig {
  std::vector<double> etas = {0.2, 0.4, 0.6};
  std::vector<std::uint64_t> seeds = {1, 2, 3};
  std::vector<SweepVariant> variants;
};

struct EvalSection {
  EvalOptions options;
  bool disentanglement = true;
};

// The single-file experiment configuration. Every value is explicit in the
// resolved snapshot; per-section seeds left negative in the input are
// derived from the master seed.
struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::string out_dir = "runs/exp";
  DataConfig data;
  EncoderConfig model;  // obs dims filled from data at prepare() time
  TrainConfig train;
  LossWeights weights;
  AblationSwitches ablation;
  EvalSection eval;
  SweepConfig sweep;
};

// Strict parse: unknown keys anywhere are rejected with their path.
ExperimentConfig parse_experiment_config(const nlohmann::json& j);
ExperimentConfig load_experiment_config(const std::string& path);

// Canonical snapshot with all derived seeds resolved (sorted keys, no
// timestamps), written into every run directory.
nlohmann::json config_snapshot(const ExperimentConfig& cfg);

// Materialized experiment: datasets plus the training setup.
struct PreparedExperiment {
  PairDataset train;
  PairDataset test;
  TrainSetup setup;
  FitOptions fit_options;
  nlohmann::json snapshot;
};

PreparedExperiment prepare_experiment(const ExperimentConfig& cfg);

}  // namespace disncl
