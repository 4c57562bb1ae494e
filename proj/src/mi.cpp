#include "disncl/mi.hpp"

#include <cmath>

#include "disncl/common.hpp"

namespace disncl {

std::vector<int> marginal_derangement(Rng& rng, long n) {
  if (n < 2) throw SizeError("marginal pairs need at least two rows");
  const auto p = rng.derangement(static_cast<std::size_t>(n));
  std::vector<int> out(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) out[i] = static_cast<int>(p[i]);
  return out;
}

ad::Var jsd_mi(const Discriminator& disc, ad::Tape& tape, const nn::BoundParams& disc_bound,
               ad::Var codes_a, ad::Var codes_b, const std::vector<int>& marginal_perm) {
  const long n = codes_a.value().rows();
  if (n < 2) throw SizeError("jsd_mi: cannot form marginal pairs with B < 2");
  if (static_cast<long>(marginal_perm.size()) != n) {
    throw SizeError("jsd_mi: permutation size does not match batch");
  }
  ad::Var d_joint = disc.score(tape, disc_bound, codes_a, codes_b);
  ad::Var b_marg = ad::rows(codes_b, marginal_perm);
  ad::Var d_marg = disc.score(tape, disc_bound, codes_a, b_marg);
  return ad::mean(ad::log_op(d_joint)) + ad::mean(ad::log_op(1.0 - d_marg));
}

double jsd_mi_readout(const Discriminator& disc, const Eigen::MatrixXd& a,
                      const Eigen::MatrixXd& b) {
  ad::Tape tape;
  const nn::BoundParams bound = disc.bind(tape, /*requires_grad=*/false);
  ad::Var d = disc.score(tape, bound, tape.constant(a), tape.constant(b));
  const Eigen::MatrixXd& s = d.value();
  double acc = 0.0;
  for (long i = 0; i < s.rows(); ++i) acc += std::log(s(i, 0) / (1.0 - s(i, 0)));
  return acc / static_cast<double>(s.rows());
}

AdversarialPenalty adversarial_mi_penalty(const Discriminator& disc, ad::Tape& tape,
                                          const nn::BoundParams& disc_bound, ad::Var codes_a,
                                          ad::Var codes_b,
                                          const std::vector<int>& marginal_perm) {
  ad::Var value = jsd_mi(disc, tape, disc_bound, codes_a, codes_b, marginal_perm);
  // Same node in both roles: the trainer ascends it for the discriminator
  // and descends it through the representation parameters.
  return AdversarialPenalty{value, value};
}

ad::Var kl_gaussian_bound(ad::Var mu_a, ad::Var mu_b) {
  if (mu_a.value().rows() != mu_b.value().rows() ||
      mu_a.value().cols() != mu_b.value().cols()) {
    throw SizeError("kl_gaussian_bound: shape mismatch");
  }
  const double batch = static_cast<double>(mu_a.value().rows());
  ad::Var d = mu_a - mu_b;
  return (0.5 / batch) * ad::sum(d * d);
}

double kl_gaussian_bound_eval(const Eigen::MatrixXd& mu_a, const Eigen::MatrixXd& mu_b) {
  if (mu_a.rows() != mu_b.rows() || mu_a.cols() != mu_b.cols()) {
    throw SizeError("kl_gaussian_bound: shape mismatch");
  }
  return 0.5 * (mu_a - mu_b).squaredNorm() / static_cast<double>(mu_a.rows());
}

StatisticNet::StatisticNet(int dim_a, int dim_b, int hidden, std::uint64_t seed)
    : dim_a_(dim_a), dim_b_(dim_b) {
  Rng rng(seed);
  const nn::MlpSpec spec{{dim_a + dim_b, hidden, hidden, 1}, nn::Activation::LeakyRelu, 0.2};
  nn::add_mlp(params_, "stat", spec, rng);
  net_ = nn::mlp_ref(params_, "stat", spec);
}

nn::BoundParams StatisticNet::bind(ad::Tape& tape, bool requires_grad) const {
  return nn::bind(tape, params_, requires_grad);
}

ad::Var StatisticNet::forward(ad::Tape& tape, const nn::BoundParams& bound, ad::Var a,
                              ad::Var b) const {
  return nn::mlp_forward(tape, bound, net_, ad::concat_cols(a, b));
}

MIEstimate mine_estimate(StatisticNet& net, const Eigen::MatrixXd& samples_a,
                         const Eigen::MatrixXd& samples_b, int steps, const MineOptions& opts) {
  MIEstimate est;
  est.kind = MIKind::Mine;
  est.n_samples = samples_a.rows();
  if (samples_a.rows() != samples_b.rows()) {
    throw SizeError("mine_estimate: sample counts differ");
  }
  if (samples_a.rows() < 500) {
    throw RangeError("mine_estimate: needs at least 500 samples for stability");
  }

  Rng rng(opts.seed);
  nn::Adam adam(net.params());
  nn::AdamConfig acfg;
  acfg.lr = opts.lr;
  double ema = -1.0;  // set on first step

  const long n = samples_a.rows();
  for (int s = 0; s < steps; ++s) {
    ad::Tape tape;
    const nn::BoundParams bound = net.bind(tape, /*requires_grad=*/true);
    ad::Var a = tape.constant(samples_a);
    ad::Var b = tape.constant(samples_b);
    ad::Var t_joint = net.forward(tape, bound, a, b);
    const std::vector<int> perm = marginal_derangement(rng, n);
    ad::Var t_marg = net.forward(tape, bound, a, ad::rows(b, perm));
    ad::Var mean_exp = ad::mean(ad::exp_op(t_marg));

    const double me = mean_exp.scalar();
    if (!std::isfinite(me)) {
      est.failed = true;
      return est;
    }
    ema = ema < 0.0 ? me : opts.ema_decay * ema + (1.0 - opts.ema_decay) * me;
    if (!(ema > 1e-300) || !std::isfinite(ema)) {
      // Moving-average denominator underflow: the bias-corrected gradient
      // would blow up, so report instead of continuing.
      est.failed = true;
      return est;
    }

    // Bias-corrected DV surrogate: grad(mean_J[T] - mean_M[e^T]/ema) matches
    // the MINE gradient of mean_J[T] - log mean_M[e^T].
    ad::Var surrogate = ad::mean(t_joint) - (1.0 / ema) * mean_exp;
    tape.backward(surrogate);
    adam.step(net.params(), nn::collect_grads(net.params(), bound), acfg, /*ascent=*/+1.0);
  }

  // Final readout on a fresh derangement.
  ad::Tape tape;
  const nn::BoundParams bound = net.bind(tape, /*requires_grad=*/false);
  ad::Var a = tape.constant(samples_a);
  ad::Var b = tape.constant(samples_b);
  const double mj = ad::mean(net.forward(tape, bound, a, b)).scalar();
  const std::vector<int> perm = marginal_derangement(rng, n);
  const double me =
      ad::mean(ad::exp_op(net.forward(tape, bound, a, ad::rows(b, perm)))).scalar();
  if (!std::isfinite(mj) || !std::isfinite(me) || me <= 0.0) {
    est.failed = true;
    return est;
  }
  est.value = mj - std::log(me);
  if (!std::isfinite(est.value)) est.failed = true;
  return est;
}

namespace {

inline double xlogx(double x) { return x > 0.0 ? x * std::log(x) : 0.0; }

struct Marginals {
  Eigen::MatrixXd vf, tf, vt;
  Eigen::VectorXd v, t, f;

  explicit Marginals(const DiscreteWorld& w)
      : vf(Eigen::MatrixXd::Zero(w.nv, w.nf)),
        tf(Eigen::MatrixXd::Zero(w.nt, w.nf)),
        vt(Eigen::MatrixXd::Zero(w.nv, w.nt)),
        v(Eigen::VectorXd::Zero(w.nv)),
        t(Eigen::VectorXd::Zero(w.nt)),
        f(Eigen::VectorXd::Zero(w.nf)) {
    for (int iv = 0; iv < w.nv; ++iv) {
      for (int it = 0; it < w.nt; ++it) {
        for (int jf = 0; jf < w.nf; ++jf) {
          const double p = w.p(iv, it, jf);
          vf(iv, jf) += p;
          tf(it, jf) += p;
          vt(iv, it) += p;
          v(iv) += p;
          t(it) += p;
          f(jf) += p;
        }
      }
    }
  }
};

double mi_of_joint(const Eigen::MatrixXd& joint) {
  const Eigen::VectorXd pr = joint.rowwise().sum();
  const Eigen::VectorXd pc = joint.colwise().sum();
  double acc = 0.0;
  for (long r = 0; r < joint.rows(); ++r) {
    for (long c = 0; c < joint.cols(); ++c) {
      const double p = joint(r, c);
      if (p > 0.0) acc += p * std::log(p / (pr(r) * pc(c)));
    }
  }
  return acc;
}

double entropy(const Eigen::VectorXd& p) {
  double acc = 0.0;
  for (long i = 0; i < p.size(); ++i) acc -= xlogx(p(i));
  return acc;
}

}  // namespace

double exact_mi(const DiscreteWorld& world, MITerm term) {
  world.validate();
  const Marginals m(world);
  switch (term) {
    case MITerm::I_VF:
      return mi_of_joint(m.vf);
    case MITerm::I_TF:
      return mi_of_joint(m.tf);
    case MITerm::I_VT:
      return mi_of_joint(m.vt);
    case MITerm::I_VF_given_T: {
      // sum_t p(t) * I(V; F | T = t)
      double acc = 0.0;
      for (int it = 0; it < world.nt; ++it) {
        const double pt = m.t(it);
        if (pt <= 0.0) continue;
        Eigen::MatrixXd slice(world.nv, world.nf);
        for (int iv = 0; iv < world.nv; ++iv) {
          for (int jf = 0; jf < world.nf; ++jf) slice(iv, jf) = world.p(iv, it, jf) / pt;
        }
        acc += pt * mi_of_joint(slice);
      }
      return acc;
    }
    case MITerm::H_V:
      return entropy(m.v);
    case MITerm::H_T:
      return entropy(m.t);
    case MITerm::H_F:
      return entropy(m.f);
    case MITerm::H_V_given_T: {
      // H(V,T) - H(T)
      double hvt = 0.0;
      for (long r = 0; r < m.vt.rows(); ++r) {
        for (long c = 0; c < m.vt.cols(); ++c) hvt -= xlogx(m.vt(r, c));
      }
      return hvt - entropy(m.t);
    }
  }
  throw ConfigError("exact_mi: unreachable term");
}

double exact_mi(const DiscreteWorld& world, const std::string& selector) {
  if (selector == "I(V;F)") return exact_mi(world, MITerm::I_VF);
  if (selector == "I(T;F)") return exact_mi(world, MITerm::I_TF);
  if (selector == "I(V;F|T)") return exact_mi(world, MITerm::I_VF_given_T);
  if (selector == "I(V;T)") return exact_mi(world, MITerm::I_VT);
  if (selector == "H(V)") return exact_mi(world, MITerm::H_V);
  if (selector == "H(T)") return exact_mi(world, MITerm::H_T);
  if (selector == "H(F)") return exact_mi(world, MITerm::H_F);
  if (selector == "H(V|T)") return exact_mi(world, MITerm::H_V_given_T);
  throw ConfigError("exact_mi: unknown selector '" + selector + "'");
}

}  // namespace disncl
