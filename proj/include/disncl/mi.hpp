#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "disncl/autodiff.hpp"
#include "disncl/encoders.hpp"
#include "disncl/nn.hpp"
#include "disncl/rng.hpp"
#include "disncl/synthetic.hpp"

namespace disncl {

enum class MIKind { Jsd, Adversarial, KlBound, Mine, Exact };

// All values are in nats.
struct MIEstimate {
  double value = 0.0;
  MIKind kind = MIKind::Mine;
  long n_samples = 0;
  bool failed = false;
};

// Within-batch derangement used to form product-of-marginals pairs.
// Throws SizeError for n < 2.
std::vector<int> marginal_derangement(Rng& rng, long n);

// Jensen-Shannon objective E_joint[log D(a,b)] + E_marg[log(1 - D(a,b'))]
// with marginal rows b' = b[perm]. Nonpositive for any D with outputs in
// (0,1); supremum 0. Maximized jointly over representations and D.
ad::Var jsd_mi(const Discriminator& disc, ad::Tape& tape, const nn::BoundParams& disc_bound,
               ad::Var codes_a, ad::Var codes_b, const std::vector<int>& marginal_perm);

// Density-ratio readout E_joint[log(D/(1-D))]: the MI estimate implied by a
// trained JSD discriminator (diagnostic, no graph).
double jsd_mi_readout(const Discriminator& disc, const Eigen::MatrixXd& a,
                      const Eigen::MatrixXd& b);

// Adversarial estimator of Eq.-(13) shape. disc_objective is maximized over
// the discriminator alone; encoder_penalty carries the same value and is
// minimized over the representations (the trainer realizes the reversed
// gradient by running ascent on one and descent on the other).
struct AdversarialPenalty {
  ad::Var disc_objective;
  ad::Var encoder_penalty;
};
AdversarialPenalty adversarial_mi_penalty(const Discriminator& disc, ad::Tape& tape,
                                          const nn::BoundParams& disc_bound, ad::Var codes_a,
                                          ad::Var codes_b, const std::vector<int>& marginal_perm);

// Mean over the batch of KL(N(mu_a, I) || N(mu_b, I)) = 0.5 * mean ||d mu||^2.
ad::Var kl_gaussian_bound(ad::Var mu_a, ad::Var mu_b);
double kl_gaussian_bound_eval(const Eigen::MatrixXd& mu_a, const Eigen::MatrixXd& mu_b);

// Donsker-Varadhan statistic network: MLP with linear scalar output.
class StatisticNet {
 public:
  StatisticNet() = default;
  StatisticNet(int dim_a, int dim_b, int hidden, std::uint64_t seed);

  nn::ParamSet& params() { return params_; }
  int dim_a() const { return dim_a_; }
  int dim_b() const { return dim_b_; }
  nn::BoundParams bind(ad::Tape& tape, bool requires_grad) const;
  ad::Var forward(ad::Tape& tape, const nn::BoundParams& bound, ad::Var a, ad::Var b) const;

 private:
  int dim_a_ = 0, dim_b_ = 0;
  nn::ParamSet params_;
  nn::MlpRef net_;
};

struct MineOptions {
  double lr = 1e-3;
  double ema_decay = 0.99;
  std::uint64_t seed = 0;  // drives the per-step marginal derangements
};

// Trains the statistic net for `steps` full-batch ascent steps and returns
// the DV bound. Diagnostic only: no gradients reach representation
// parameters. Divergence (EMA underflow or non-finite values) is reported
// via failed=true rather than thrown.
MIEstimate mine_estimate(StatisticNet& net, const Eigen::MatrixXd& samples_a,
                         const Eigen::MatrixXd& samples_b, int steps,
                         const MineOptions& opts = {});

enum class MITerm {
  I_VF,
  I_TF,
  I_VF_given_T,
  I_VT,
  H_V,
  H_T,
  H_F,
  H_V_given_T,
};

// Exact enumeration over the finite joint, in nats.
double exact_mi(const DiscreteWorld& world, MITerm term);
// Selector strings: "I(V;F)", "I(T;F)", "I(V;F|T)", "I(V;T)", "H(V)",
// "H(T)", "H(F)", "H(V|T)". Unknown selectors throw ConfigError.
double exact_mi(const DiscreteWorld& world, const std::string& selector);

}  // namespace disncl
