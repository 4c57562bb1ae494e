#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <vector>

#include "disncl/rng.hpp"

namespace disncl {

// Shared/exclusive latent factor specification for the synthetic world.
// Both modalities observe the shared factor z_s; each adds its own
// exclusive factor (z_v or z_t) before a fixed random affine-plus-tanh map.
struct LatentSpec {
  int dim_shared = 16;
  int dim_excl_v = 8;
  int dim_excl_t = 8;
  int obs_dim_v = 64;
  int obs_dim_t = 64;
  double noise_std = 0.05;
  std::uint64_t seed = 0;

  void validate() const;  // throws ConfigError
};

// Paired observations with ground-truth flags and, when synthesized, the
// generating latents. Rows are immutable after creation; the inject_*
// functions return modified copies.
struct PairDataset {
  Eigen::MatrixXd V;               // N x obs_dim_v
  Eigen::MatrixXd T;               // N x obs_dim_t
  std::vector<std::uint8_t> match;       // true = genuinely corresponding
  std::vector<std::uint8_t> noise_mask;  // true = corrupted by injection
  // Generating latents for diagnostics. z_shared is tracked per side so a
  // shuffled V row keeps the latents that actually produced it.
  bool has_latents = false;
  Eigen::MatrixXd z_shared_v;  // N x dim_shared (source latents of each V row)
  Eigen::MatrixXd z_shared_t;  // N x dim_shared (source latents of each T row)
  Eigen::MatrixXd z_excl_v;    // N x dim_excl_v
  Eigen::MatrixXd z_excl_t;    // N x dim_excl_t
  std::optional<LatentSpec> spec;

  long size() const { return V.rows(); }
  double noise_fraction() const;
  PairDataset slice(long begin, long end) const;  // [begin, end)
};

// Deterministic paired data: V_i = tanh(W_v [z_s; z_v] + b_v) + eps,
// T_i = tanh(W_t [z_s; z_t] + b_t) + eps'. Maps are drawn once from
// spec.seed, so two calls with the same spec produce identical bytes.
PairDataset generate_pairs(const LatentSpec& spec, long n);

// Derangement of the V side over a uniformly chosen floor(eta*N)-subset.
// Flagged rows get match=false, noise_mask=true; other rows are untouched.
PairDataset inject_noise_shuffle_images(const PairDataset& data, double eta, std::uint64_t seed);

// Same protocol on the T side.
PairDataset inject_noise_permute_captions(const PairDataset& data, double eta, std::uint64_t seed);

// Finite joint distribution p(V, T, F) over small alphabets, used as an
// exact mutual-information oracle. When factorized, F is produced by a
// stochastic channel from V alone, so T - V - F forms a Markov chain.
struct DiscreteWorld {
  int nv = 0, nt = 0, nf = 0;
  std::vector<double> joint;  // p(v, t, f), row-major [v][t][f]
  bool factorized = false;

  double p(int v, int t, int f) const {
    return joint[static_cast<std::size_t>((v * nt + t) * nf + f)];
  }
  double& p(int v, int t, int f) {
    return joint[static_cast<std::size_t>((v * nt + t) * nf + f)];
  }
  void validate() const;  // nonnegative, sums to 1, channel condition if factorized
};

struct DiscreteWorldSpec {
  int alphabet_v = 4;
  int alphabet_t = 4;
  int alphabet_f = 4;
  std::uint64_t seed = 0;
};

// Random factorized world: p(v,t) random positive, p(f|v) random
// row-stochastic, joint = p(v,t) * p(f|v). Alphabets are capped at 8 so the
// oracle stays enumerable.
DiscreteWorld build_discrete_world(const DiscreteWorldSpec& spec);

}  // namespace disncl
