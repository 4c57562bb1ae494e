#pragma once

#include <Eigen/Dense>
#include <vector>

#include "disncl/autodiff.hpp"
#include "disncl/encoders.hpp"
#include "disncl/mi.hpp"
#include "disncl/rng.hpp"

namespace disncl {

struct LossWeights {
  double gamma = 0.5;  // L_S / L_X tradeoff
  double beta1 = 0.1;  // conditional-MI bound weight in L_S
  double beta2 = 0.1;  // cross-modal leakage weight in L_X
  double beta3 = 0.5;  // bootstrap mix for soft targets
  double alpha = 0.2;  // base ranking margin
  double m = 10.0;     // soft-margin curvature
  double tau = 0.05;   // softmax temperature

  void validate() const;
};

// Batch positions kept by the Eq.-(2) filtration, ascending.
using CleanSet = std::vector<int>;

// i is clean iff H[i][i] attains both the row-i and column-i maximum.
// Ties favor the diagonal.
CleanSet filter_clean(const Eigen::MatrixXd& H);

// (m^h - 1)/(m - 1) * alpha with h clamped to [0, 1]; `clamped` reports
// whether the input was outside that range (cosine can go negative).
double adaptive_margin(double h_ii, const LossWeights& w, bool* clamped = nullptr);

// ---- discriminator bank ----

enum class DiscRole : int {
  JsdSV = 0,  // f1 on (V_S, F_T)
  JsdST,      // f1 on (T_S, F_V)
  JsdXV,      // (V_X, F_V)
  JsdXT,      // (T_X, F_T)
  AdvXV,      // f2 on (V_X, F_T)
  AdvXT,      // f2 on (T_X, F_V)
  RegV,       // (V_S, V_X)
  RegT,       // (T_S, T_X)
};
constexpr int kNumDiscRoles = 8;
const char* disc_role_name(DiscRole role);

struct DiscriminatorBank {
  std::vector<Discriminator> discs;  // size kNumDiscRoles, indexed by role

  DiscriminatorBank() = default;
  DiscriminatorBank(const EncoderConfig& cfg, std::uint64_t seed);

  Discriminator& at(DiscRole r) { return discs[static_cast<std::size_t>(r)]; }
  const Discriminator& at(DiscRole r) const { return discs[static_cast<std::size_t>(r)]; }
};

struct BoundBank {
  std::vector<nn::BoundParams> bound;  // parallel to DiscriminatorBank::discs
};
BoundBank bind_bank(ad::Tape& tape, const DiscriminatorBank& bank, bool requires_grad);

// ---- batch-level graph inputs ----

struct BatchCodes {
  ad::Var F_V, F_T, V_S, V_X, T_S, T_X;
};

struct LossTermResult {
  ad::Var value;
  bool skipped = false;
  // Discriminator-side objectives contributed by this term, for the
  // alternating ascent step.
  std::vector<ad::Var> disc_objectives;
};

// L_S = -(jsd(V_S, F_T) + jsd(T_S, F_V)) + beta1 * (KL(V_S||T_S) + KL(T_S||V_S)),
// evaluated on the given row subset. Skipped (zero) when |rows| < 2.
LossTermResult loss_S(ad::Tape& tape, const BatchCodes& codes, const DiscriminatorBank& bank,
                      const BoundBank& bd, const CleanSet& rows, const LossWeights& w, Rng& rng);

// L_X = -(jsd(V_X, F_V) + jsd(T_X, F_T)) + (1 + beta2) * (adv(V_X, F_T) + adv(T_X, F_V)).
LossTermResult loss_X(ad::Tape& tape, const BatchCodes& codes, const DiscriminatorBank& bank,
                      const BoundBank& bd, const CleanSet& rows, const LossWeights& w, Rng& rng);

struct DisLosses {
  LossTermResult s, x;
  ad::Var dis;  // gamma * L_S + (1 - gamma) * L_X
  bool skipped = false;
};

DisLosses loss_dis(ad::Tape& tape, const BatchCodes& codes, const DiscriminatorBank& bank,
                   const BoundBank& bd, const CleanSet& rows, const LossWeights& w, Rng& rng);

// Adaptive-margin hinge ranking loss (Eq. 3). During warmup the margin is
// the constant alpha and every row is active. Hard negatives come from the
// clean set when it offers a candidate, otherwise from the whole batch.
struct AlignResult {
  ad::Var value;
  bool skipped = false;
};
AlignResult loss_align(ad::Tape& tape, ad::Var H, const CleanSet& clean, const LossWeights& w,
                       bool warmup, bool use_adaptive_margin = true);

// Soft targets (Eqs. 4-6). Rows of H / H^T for i not in clean are zeroed
// before the tempered softmax; bootstrapped targets y are detached
// constants built from the current p values.
struct SoftTargets {
  Eigen::MatrixXd p_i2t, p_t2i;
  Eigen::MatrixXd y_i2t, y_t2i;
};

struct SoftTargetsGraph {
  ad::Var p_i2t, p_t2i;          // graph nodes (gradients flow into these)
  Eigen::MatrixXd y_i2t, y_t2i;  // detached targets, rows valid on clean
  SoftTargets detached() const;
};

// When frozen_y is given, its target matrices are reused instead of being
// rebuilt from the current p values (the per-step optimization objective
// holds y fixed, and gradient checks must evaluate that same function).
SoftTargetsGraph soft_targets(ad::Tape& tape, ad::Var H, const CleanSet& clean,
                              const LossWeights& w, const SoftTargets* frozen_y = nullptr);
SoftTargets soft_targets_eval(const Eigen::MatrixXd& H, const CleanSet& clean,
                              const LossWeights& w);

// L_soft = sum_{i in clean} CE(y_i2t_i, p_i2t_i) + CE(y_t2i_i, p_t2i_i),
// CE(y, p) = -sum_j y_j log p_j with p clamped at 1e-12.
struct SoftResult {
  ad::Var value;
  bool skipped = false;
};
SoftResult loss_soft(ad::Tape& tape, const SoftTargetsGraph& targets, const CleanSet& clean);

// L_reg: adversarial estimates of I(V_S;V_X) + I(T_S;T_X) over all rows.
LossTermResult loss_reg(ad::Tape& tape, const BatchCodes& codes, const DiscriminatorBank& bank,
                        const BoundBank& bd, Rng& rng);

// ---- per-step assembly ----

struct AblationSwitches {
  bool enable_dis = true;
  bool enable_soft = true;
  bool enable_reg = true;
  bool use_filtration = true;
  bool use_adaptive_margin = true;
};

struct LossBundle {
  CleanSet clean;           // the Eq.-(2) set (diagnostic even when unused)
  CleanSet active;          // rows the losses actually used
  DisLosses dis;
  AlignResult align;
  SoftResult soft;
  LossTermResult reg;
  ad::Var total;
  ad::Var disc_total;       // sum of all enabled discriminator objectives
  bool has_disc_objectives = false;
};

// Builds every enabled loss on one tape. `rng` is taken by value so a
// rebuilt bundle (e.g. for finite differences) replays the same
// derangements.
LossBundle build_losses(ad::Tape& tape, const BatchCodes& codes, ad::Var H,
                        const DiscriminatorBank& bank, const BoundBank& bd,
                        const LossWeights& w, const AblationSwitches& ab, bool warmup,
                        bool dis_on_clean_only, Rng rng);

}  // namespace disncl
