#pragma once

#include <Eigen/Dense>
#include <map>
#include <vector>

#include <nlohmann/json.hpp>

#include "disncl/encoders.hpp"
#include "disncl/losses.hpp"
#include "disncl/mi.hpp"
#include "disncl/synthetic.hpp"

namespace disncl {

struct RetrievalReport {
  std::vector<int> ks;
  std::map<int, double> recall_i2t;  // K -> recall in [0,1]
  std::map<int, double> recall_t2i;
  double r_sum = 0.0;  // 100 * sum of the six recalls
  bool k_capped = false;

  nlohmann::json to_json() const;
};

// Ground truth on the diagonal; ties rank pessimistically (the correct item
// loses ties). K > N is capped at N with the warning flag set.
RetrievalReport recall_at_k(const Eigen::MatrixXd& H_test, const std::vector<int>& k_list);

struct FiltrationQuality {
  double precision = 0.0;
  double recall = 0.0;
  long clean_count = 0;
  long true_clean_count = 0;
  long hit_count = 0;  // |clean intersect true-clean|

  nlohmann::json to_json() const;
};

FiltrationQuality filtration_quality(const CleanSet& clean,
                                     const std::vector<std::uint8_t>& noise_mask);

// Aggregates Eq.-(2) filtration over an entire dataset in batches.
FiltrationQuality filtration_eval(const EncoderStack& encoders, const PairDataset& data,
                                  int batch_size);

struct EvalOptions {
  std::vector<int> ks = {1, 5, 10};
  int mine_steps = 300;
  int mine_hidden = 64;
  int histogram_bins = 40;
  std::uint64_t seed = 0;
  int batch_size = 256;  // forward batching for large datasets
};

struct DisentanglementReport {
  MIEstimate mi_vs_vx, mi_ts_tx;
  double r1_invariant = 0.0;  // mean of i2t/t2i R@1 on (V_S, T_S)
  double r1_exclusive = 0.0;  // mean of i2t/t2i R@1 on (V_X, T_X)
  double chance_r1 = 0.0;     // 1/N
  bool has_latent_probes = false;
  double probe_r2_zs_from_vs = 0.0;  // linear probe of z_s from V_S
  double probe_r2_zv_from_vx = 0.0;  // linear probe of z_v from V_X

  nlohmann::json to_json() const;
};

DisentanglementReport disentanglement_report(const EncoderStack& encoders,
                                             const PairDataset& test, const EvalOptions& opts);

// Pooled linear-probe R^2 (least squares with intercept) of targets from
// features; the oracle used by the synthetic-world diagnostics.
double linear_probe_r2(const Eigen::MatrixXd& features, const Eigen::MatrixXd& targets);

struct SimilarityHistogram {
  std::vector<double> edges;       // bins+1 edges over [-1, 1]
  std::vector<long> clean_counts;  // per bin, rows with noise_mask == 0
  std::vector<long> noisy_counts;
  double clean_mean = 0.0;
  double noisy_mean = 0.0;

  nlohmann::json to_json() const;
  std::string to_csv() const;
};

// Histograms of the diagonal similarities split by the injected-noise mask.
SimilarityHistogram similarity_histogram(const Eigen::MatrixXd& H,
                                         const std::vector<std::uint8_t>& noise_mask, int bins);

}  // namespace disncl
