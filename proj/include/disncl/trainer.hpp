#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "disncl/encoders.hpp"
#include "disncl/evaluation.hpp"
#include "disncl/losses.hpp"
#include "disncl/nn.hpp"
#include "disncl/rng.hpp"
#include "disncl/synthetic.hpp"

namespace disncl {

struct TrainConfig {
  int warmup_epochs = 5;
  int epochs = 50;  // main epochs, after warmup
  int batch = 128;
  double lr = 2e-4;
  double lr_disc = 2e-4;
  double lr_decay_factor = 0.1;
  int lr_decay_at = -1;  // main epochs > this use the decayed rate; -1 = epochs/2
  bool dis_on_clean_only = true;
  bool log_grad_norms = true;
  int checkpoint_every = 1;
  std::uint64_t seed = 0;

  void validate() const;
  int resolved_decay_at() const;
  double lr_for_epoch(int main_epoch /*1-based*/) const;
  double lr_disc_for_epoch(int main_epoch) const;
};

// A minibatch view of a PairDataset.
struct PairBatch {
  Eigen::MatrixXd V, T;
  std::vector<std::uint8_t> match, noise_mask;

  long size() const { return V.rows(); }
};

PairBatch make_batch(const PairDataset& data, const std::vector<long>& idx);

// Per-step record, one JSON line each in metrics.jsonl.
struct LossReport {
  long step = 0;
  int epoch = 0;  // 1-based, counting warmup epochs first
  bool warmup = false;
  double loss_s = 0, loss_x = 0, loss_dis = 0;
  double loss_align = 0, loss_soft = 0, loss_reg = 0, loss_total = 0;
  double grad_norm_dis = 0, grad_norm_align = 0, grad_norm_soft = 0, grad_norm_reg = 0,
         grad_norm_total = 0;
  int clean_size = 0;
  double filtration_precision = 0, filtration_recall = 0;
  bool dis_skipped = false, align_skipped = false, soft_skipped = false;

  nlohmann::json to_json() const;
};

struct TrainSetup {
  EncoderConfig model;
  TrainConfig train;
  LossWeights weights;
  AblationSwitches ablation;
  std::uint64_t model_seed = 0;
};

struct TrainState {
  long step = 0;
  int epoch = 0;  // completed epochs (warmup + main)
  EncoderStack encoders;
  DiscriminatorBank bank;
  nn::Adam adam_enc;
  std::vector<nn::Adam> adam_disc;  // parallel to bank.discs
  Rng run_rng;
};

// Thrown when a step produces a non-finite loss; fit() dumps the offending
// batch and aborts with a partial manifest.
struct TrainingDiverged : std::runtime_error {
  explicit TrainingDiverged(const std::string& msg) : std::runtime_error(msg) {}
};

TrainState init_state(const TrainSetup& setup);

// One optimization step: forward, filtration, discriminator ascent on all
// enabled discriminator objectives, then encoder descent on L_total.
// Warmup steps skip the discriminator phase entirely.
LossReport train_step(TrainState& st, const PairBatch& batch, const TrainSetup& setup,
                      bool warmup, double lr, double lr_disc);

// Runs the warmup epochs in place (constant margin, no filtration, no
// discriminator or estimator updates).
void run_warmup(TrainState& st, const PairDataset& train, const TrainSetup& setup,
                const std::function<void(const LossReport&)>& sink = nullptr);

// Checkpoint container IO (JSON manifest + f32 blobs; see docs/FORMATS.md).
void save_checkpoint(const std::string& path, const TrainState& st);
void load_checkpoint(const std::string& path, TrainState& st);

struct FitResult {
  std::string run_dir;
  nlohmann::json summary;
};

struct FitOptions {
  bool eval_disentanglement = true;
  bool write_histograms = true;
  EvalOptions eval;
  std::optional<std::string> resume_from;
  std::function<void(const LossReport&)> sink;  // optional per-step observer
};

// Full training run: warmup, main epochs with the decay schedule, one
// checkpoint per epoch, metrics.jsonl stream, summary.json at the end.
// When opts.resume_from is set, continues a previous run from that
// checkpoint and appends only the remaining epochs.
FitResult fit(const TrainSetup& setup, const PairDataset& train, const PairDataset& test,
              const std::string& run_dir, const nlohmann::json& config_snapshot,
              const FitOptions& opts = {});

}  // namespace disncl
